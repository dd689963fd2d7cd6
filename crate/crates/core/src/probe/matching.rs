//! Matching scores `m[i][j]` between a span's start token `i` and end token `j`.
//!
//! All three variants produce a [`MatchMatrix`] covering exactly the windowed
//! spans, stored in canonical span order. Each forward pass keeps what its
//! backward pass (a vector-Jacobian product) needs.

use log::debug;

use super::inputs::Reps;
use super::params::{LcattnParams, LtqkParams, TomParams};
use crate::error::{Error, Result};
use crate::repio::TensorF32;
use crate::spanspace::{canonical_index, span_count, Span};

/// Norm floor below which a projected vector is treated as zero.
pub const NORM_EPS: f64 = 1e-12;

/// Matching scores for all windowed spans of one sequence, canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchMatrix {
    n: usize,
    window: usize,
    values: Vec<f64>,
}

impl MatchMatrix {
    pub fn new(n: usize, window: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != span_count(n, window) {
            return Err(Error::Dimension(format!(
                "{} match values for n={n}, window={window}",
                values.len()
            )));
        }
        Ok(MatchMatrix { n, window, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Score for start `i`, end `j` (1-based). `None` outside the window.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        canonical_index(Span { start: i, end: j }, self.n, self.window).map(|k| self.values[k])
    }

    /// Canonical index of the first span ending at `j`, and the first start token it covers.
    pub(crate) fn column_start(&self, j: usize) -> (usize, usize) {
        let first = if j > self.window {
            j - self.window + 1
        } else {
            1
        };
        (span_count(j - 1, self.window), first)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// `w (rows x cols) @ x`.
fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|r| dot(&w[r * cols..(r + 1) * cols], x))
        .collect()
}

/// `grad (rows x cols) += outer(delta, x)`.
fn add_outer(grad: &mut [f64], cols: usize, delta: &[f64], x: &[f64]) {
    for (r, &d) in delta.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let row = &mut grad[r * cols..(r + 1) * cols];
        for (g, &xv) in row.iter_mut().zip(x) {
            *g += d * xv;
        }
    }
}

/// Projected query/key vectors of one cosine matcher (one head).
#[derive(Debug, Clone)]
struct CosineBlock {
    rank: usize,
    q: Vec<f64>,
    k: Vec<f64>,
    q_norm: Vec<f64>,
    k_norm: Vec<f64>,
}

impl CosineBlock {
    fn new(
        w_q: &[f64],
        w_k: &[f64],
        rank: usize,
        dim: usize,
        rows: impl Fn(usize) -> Vec<f64>,
        keys: impl Fn(usize) -> Vec<f64>,
        n: usize,
    ) -> Self {
        let mut q = Vec::with_capacity(n * rank);
        let mut k = Vec::with_capacity(n * rank);
        for i in 0..n {
            q.extend(matvec(w_q, rank, dim, &rows(i)));
            k.extend(matvec(w_k, rank, dim, &keys(i)));
        }
        let norms = |v: &[f64]| -> Vec<f64> { v.chunks(rank).map(|c| dot(c, c).sqrt()).collect() };
        CosineBlock {
            rank,
            q_norm: norms(&q),
            k_norm: norms(&k),
            q,
            k,
        }
    }

    fn q(&self, i: usize) -> &[f64] {
        &self.q[i * self.rank..(i + 1) * self.rank]
    }

    fn k(&self, j: usize) -> &[f64] {
        &self.k[j * self.rank..(j + 1) * self.rank]
    }

    fn degenerate(&self, i: usize, j: usize) -> bool {
        self.q_norm[i] < NORM_EPS || self.k_norm[j] < NORM_EPS
    }

    /// Cosine of projected query `i` and key `j` (0-based); 0 for degenerate pairs.
    fn cos(&self, i: usize, j: usize) -> f64 {
        if self.degenerate(i, j) {
            return 0.0;
        }
        dot(self.q(i), self.k(j)) / (self.q_norm[i] * self.k_norm[j])
    }

    /// Accumulates `g * d cos / d q_i` into `dq` and `g * d cos / d k_j` into `dk`.
    fn backward(&self, i: usize, j: usize, m: f64, g: f64, dq: &mut [f64], dk: &mut [f64]) {
        if g == 0.0 || self.degenerate(i, j) {
            return;
        }
        let (qn, kn) = (self.q_norm[i], self.k_norm[j]);
        let inv = 1.0 / (qn * kn);
        let (q, k) = (self.q(i), self.k(j));
        let dq_i = &mut dq[i * self.rank..(i + 1) * self.rank];
        for a in 0..self.rank {
            dq_i[a] += g * (k[a] * inv - m * q[a] / (qn * qn));
        }
        let dk_j = &mut dk[j * self.rank..(j + 1) * self.rank];
        for a in 0..self.rank {
            dk_j[a] += g * (q[a] * inv - m * k[a] / (kn * kn));
        }
    }

    fn fill(&self, n: usize, window: usize, scale: f64, out: &mut [f64]) -> usize {
        let mut degenerate = 0;
        let mut idx = 0;
        for j in 0..n {
            let first = (j + 1).saturating_sub(window);
            for i in first..=j {
                if self.degenerate(i, j) {
                    degenerate += 1;
                }
                out[idx] += scale * self.cos(i, j);
                idx += 1;
            }
        }
        degenerate
    }
}

/// Forward state of a cosine (ToM) matcher.
#[derive(Debug, Clone)]
pub struct TomCache {
    block: CosineBlock,
}

pub(crate) fn tom_forward(
    reps: &Reps,
    params: &TomParams,
    window: usize,
) -> Result<(MatchMatrix, TomCache)> {
    if reps.cols != params.dim {
        return Err(Error::Dimension(format!(
            "reps width {} vs probe dim {}",
            reps.cols, params.dim
        )));
    }
    let n = reps.rows;
    let block = CosineBlock::new(
        &params.w_q,
        &params.w_k,
        params.rank,
        params.dim,
        |i| reps.row(i).to_vec(),
        |i| reps.row(i).to_vec(),
        n,
    );
    let mut values = vec![0.0; span_count(n, window)];
    let degenerate = block.fill(n, window, 1.0, &mut values);
    if degenerate > 0 {
        debug!("{degenerate} span(s) with a zero-norm projection scored 0");
    }
    Ok((MatchMatrix::new(n, window, values)?, TomCache { block }))
}

/// `m[i][j] = cos(W_Q z_i, W_K z_j)` for every windowed span.
pub fn tom_match(reps: &TensorF32, params: &TomParams, window: usize) -> Result<MatchMatrix> {
    tom_forward(&Reps::from_tensor(reps)?, params, window).map(|(m, _)| m)
}

/// Iterates (canonical index, 0-based start, 0-based end) over windowed spans.
fn windowed(n: usize, window: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    (0..n)
        .flat_map(move |j| ((j + 1).saturating_sub(window)..=j).map(move |i| (i, j)))
        .enumerate()
        .map(|(idx, (i, j))| (idx, i, j))
}

pub(crate) fn tom_backward(
    reps: &Reps,
    params: &TomParams,
    cache: &TomCache,
    m: &MatchMatrix,
    dm: &[f64],
    grad: &mut TomParams,
) {
    let n = reps.rows;
    let r = params.rank;
    let mut dq = vec![0.0; n * r];
    let mut dk = vec![0.0; n * r];
    for (idx, i, j) in windowed(n, m.window) {
        cache
            .block
            .backward(i, j, m.values[idx], dm[idx], &mut dq, &mut dk);
    }
    for i in 0..n {
        add_outer(
            &mut grad.w_q,
            params.dim,
            &dq[i * r..(i + 1) * r],
            reps.row(i),
        );
        add_outer(
            &mut grad.w_k,
            params.dim,
            &dk[i * r..(i + 1) * r],
            reps.row(i),
        );
    }
}

/// Forward state of the per-head matcher.
#[derive(Debug, Clone)]
pub struct LtqkCache {
    blocks: Vec<CosineBlock>,
    per_head: Vec<Vec<f64>>,
}

fn head_rows(t: &TensorF32, h: usize, i: usize) -> Vec<f64> {
    let [_, n, dh] = t.shape() else {
        unreachable!("checked by caller")
    };
    let base = (h * n + i) * dh;
    t.data()[base..base + dh]
        .iter()
        .map(|&x| f64::from(x))
        .collect()
}

fn check_heads(t: &TensorF32, params: &LtqkParams, what: &str) -> Result<usize> {
    match *t.shape() {
        [h, n, dh] if h == params.heads && dh == params.head_dim => Ok(n),
        ref s => Err(Error::Dimension(format!(
            "{what} shape {s:?}, expected [{}, n, {}]",
            params.heads, params.head_dim
        ))),
    }
}

pub(crate) fn ltqk_forward(
    queries: &TensorF32,
    keys: &TensorF32,
    params: &LtqkParams,
    window: usize,
) -> Result<(MatchMatrix, LtqkCache)> {
    let n = check_heads(queries, params, "queries")?;
    if check_heads(keys, params, "keys")? != n {
        return Err(Error::Dimension("queries and keys disagree on n".into()));
    }
    let per = params.rank * params.head_dim;
    let count = span_count(n, window);
    let mut values = vec![0.0; count];
    let mut blocks = Vec::with_capacity(params.heads);
    let mut per_head = Vec::with_capacity(params.heads);
    let scale = 1.0 / params.heads as f64;
    for h in 0..params.heads {
        let block = CosineBlock::new(
            &params.w_q[h * per..(h + 1) * per],
            &params.w_k[h * per..(h + 1) * per],
            params.rank,
            params.head_dim,
            |i| head_rows(queries, h, i),
            |i| head_rows(keys, h, i),
            n,
        );
        let mut head_values = vec![0.0; count];
        block.fill(n, window, 1.0, &mut head_values);
        for (v, hv) in values.iter_mut().zip(&head_values) {
            *v += scale * hv;
        }
        per_head.push(head_values);
        blocks.push(block);
    }
    Ok((
        MatchMatrix::new(n, window, values)?,
        LtqkCache { blocks, per_head },
    ))
}

/// `m[i][j] = (1/N_h) sum_h cos(W_Q^h q_i^h, W_K^h k_j^h)`.
pub fn ltqk_match(
    queries: &TensorF32,
    keys: &TensorF32,
    params: &LtqkParams,
    window: usize,
) -> Result<MatchMatrix> {
    ltqk_forward(queries, keys, params, window).map(|(m, _)| m)
}

pub(crate) fn ltqk_backward(
    queries: &TensorF32,
    keys: &TensorF32,
    params: &LtqkParams,
    cache: &LtqkCache,
    window: usize,
    dm: &[f64],
    grad: &mut LtqkParams,
) {
    let n = queries.shape()[1];
    let (r, dh) = (params.rank, params.head_dim);
    let per = r * dh;
    let scale = 1.0 / params.heads as f64;
    for (h, block) in cache.blocks.iter().enumerate() {
        let mut dq = vec![0.0; n * r];
        let mut dk = vec![0.0; n * r];
        for (idx, i, j) in windowed(n, window) {
            block.backward(
                i,
                j,
                cache.per_head[h][idx],
                scale * dm[idx],
                &mut dq,
                &mut dk,
            );
        }
        let gq = &mut grad.w_q[h * per..(h + 1) * per];
        for i in 0..n {
            add_outer(gq, dh, &dq[i * r..(i + 1) * r], &head_rows(queries, h, i));
        }
        let gk = &mut grad.w_k[h * per..(h + 1) * per];
        for i in 0..n {
            add_outer(gk, dh, &dk[i * r..(i + 1) * r], &head_rows(keys, h, i));
        }
    }
}

/// `log(sigmoid(u))`, stable for large |u|.
pub fn log_sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        -(-u).exp().ln_1p()
    } else {
        u - u.exp().ln_1p()
    }
}

pub fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Forward state of the attention-combination matcher.
#[derive(Debug, Clone)]
pub struct LcattnCache {
    pre: Vec<f64>,
}

fn attn_index(shape: &[usize], l: usize, h: usize, i: usize, j: usize) -> usize {
    let (heads, n) = (shape[1], shape[2]);
    ((l * heads + h) * n + i) * n + j
}

pub(crate) fn lcattn_forward(
    attn: &TensorF32,
    params: &LcattnParams,
    window: usize,
) -> Result<(MatchMatrix, LcattnCache)> {
    let shape = attn.shape();
    let n = match *shape {
        [l, h, n, n2] if l == params.layers && h == params.heads && n == n2 => n,
        ref s => {
            return Err(Error::Dimension(format!(
                "attention shape {s:?}, expected [{}, {}, n, n]",
                params.layers, params.heads
            )))
        }
    };
    let data = attn.data();
    let mut pre = vec![0.0; span_count(n, window)];
    for (idx, i, j) in windowed(n, window) {
        let mut u = 0.0;
        for l in 0..params.layers {
            for h in 0..params.heads {
                u += params.weights[l * params.heads + h]
                    * f64::from(data[attn_index(shape, l, h, i, j)]);
            }
        }
        pre[idx] = u;
    }
    let values = pre.iter().map(|&u| log_sigmoid(u)).collect();
    Ok((MatchMatrix::new(n, window, values)?, LcattnCache { pre }))
}

/// `m[i][j] = log sigmoid(sum_{l,h} w[l][h] a[l][h][i][j])`.
pub fn lcattn_match(attn: &TensorF32, params: &LcattnParams, window: usize) -> Result<MatchMatrix> {
    lcattn_forward(attn, params, window).map(|(m, _)| m)
}

pub(crate) fn lcattn_backward(
    attn: &TensorF32,
    params: &LcattnParams,
    cache: &LcattnCache,
    window: usize,
    dm: &[f64],
    grad: &mut LcattnParams,
) {
    let shape = attn.shape();
    let n = shape[2];
    let data = attn.data();
    for (idx, i, j) in windowed(n, window) {
        let g = dm[idx] * sigmoid(-cache.pre[idx]);
        if g == 0.0 {
            continue;
        }
        for l in 0..params.layers {
            for h in 0..params.heads {
                grad.weights[l * params.heads + h] +=
                    g * f64::from(data[attn_index(shape, l, h, i, j)]);
            }
        }
    }
}
