//! Trainable probe state.
//!
//! Weights live in memory as `f64` so gradients can be checked against finite
//! differences; training rounds them to `f32` after every update, which keeps
//! checkpoint round-trips exact.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Matching-score variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    /// Low-rank projections of the residual representation.
    Tom,
    /// Per-head projections of the backbone's own queries and keys.
    Ltqk,
    /// Linear combination of the backbone's attention dot products.
    Lcattn,
}

impl ProbeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProbeKind::Tom => "tom",
            ProbeKind::Ltqk => "ltqk",
            ProbeKind::Lcattn => "lcattn",
        }
    }
}

impl std::str::FromStr for ProbeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tom" => Ok(ProbeKind::Tom),
            "ltqk" => Ok(ProbeKind::Ltqk),
            "lcattn" => Ok(ProbeKind::Lcattn),
            other => Err(format!("unknown probe kind {other:?} (tom|ltqk|lcattn)")),
        }
    }
}

/// Dimensions of a probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeShape {
    Tom {
        dim: usize,
        rank: usize,
    },
    Ltqk {
        dim: usize,
        rank: usize,
        heads: usize,
        head_dim: usize,
    },
    Lcattn {
        dim: usize,
        layers: usize,
        heads: usize,
    },
}

impl ProbeShape {
    pub fn kind(&self) -> ProbeKind {
        match self {
            ProbeShape::Tom { .. } => ProbeKind::Tom,
            ProbeShape::Ltqk { .. } => ProbeKind::Ltqk,
            ProbeShape::Lcattn { .. } => ProbeKind::Lcattn,
        }
    }

    /// Width of the residual representation feeding the value probe.
    pub fn dim(&self) -> usize {
        match *self {
            ProbeShape::Tom { dim, .. }
            | ProbeShape::Ltqk { dim, .. }
            | ProbeShape::Lcattn { dim, .. } => dim,
        }
    }
}

/// `W_Q`, `W_K` in `rank x dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TomParams {
    pub rank: usize,
    pub dim: usize,
    pub w_q: Vec<f64>,
    pub w_k: Vec<f64>,
}

/// Per-head `W_Q^h`, `W_K^h` in `heads x rank x head_dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LtqkParams {
    pub rank: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub w_q: Vec<f64>,
    pub w_k: Vec<f64>,
}

/// One weight per (layer, head), `layers x heads`.
#[derive(Debug, Clone, PartialEq)]
pub struct LcattnParams {
    pub layers: usize,
    pub heads: usize,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Matcher {
    Tom(TomParams),
    Ltqk(LtqkParams),
    Lcattn(LcattnParams),
}

/// Complete probe: matching weights, value probe `W_V` and combiner `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeParams {
    pub matcher: Matcher,
    pub value: Vec<f64>,
    pub theta: [f64; 5],
}

fn uniform(rng: &mut impl Rng, len: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}

impl ProbeParams {
    /// All-zero parameters of the given shape.
    pub fn zeros(shape: ProbeShape) -> Self {
        let matcher = match shape {
            ProbeShape::Tom { dim, rank } => Matcher::Tom(TomParams {
                rank,
                dim,
                w_q: vec![0.0; rank * dim],
                w_k: vec![0.0; rank * dim],
            }),
            ProbeShape::Ltqk {
                rank,
                heads,
                head_dim,
                ..
            } => Matcher::Ltqk(LtqkParams {
                rank,
                heads,
                head_dim,
                w_q: vec![0.0; heads * rank * head_dim],
                w_k: vec![0.0; heads * rank * head_dim],
            }),
            ProbeShape::Lcattn { layers, heads, .. } => Matcher::Lcattn(LcattnParams {
                layers,
                heads,
                weights: vec![0.0; layers * heads],
            }),
        };
        ProbeParams {
            matcher,
            value: vec![0.0; shape.dim()],
            theta: [0.0; 5],
        }
    }

    /// Weight matrices drawn from uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), theta zero,
    /// rounded to f32.
    pub fn init(shape: ProbeShape, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(shape);
        match &mut p.matcher {
            Matcher::Tom(t) => {
                t.w_q = uniform(rng, t.w_q.len(), t.dim);
                t.w_k = uniform(rng, t.w_k.len(), t.dim);
            }
            Matcher::Ltqk(t) => {
                t.w_q = uniform(rng, t.w_q.len(), t.head_dim);
                t.w_k = uniform(rng, t.w_k.len(), t.head_dim);
            }
            Matcher::Lcattn(t) => {
                t.weights = uniform(rng, t.weights.len(), t.layers * t.heads);
            }
        }
        p.value = uniform(rng, p.value.len(), shape.dim());
        p.round_to_f32();
        p
    }

    pub fn shape(&self) -> ProbeShape {
        let dim = self.value.len();
        match &self.matcher {
            Matcher::Tom(t) => ProbeShape::Tom { dim, rank: t.rank },
            Matcher::Ltqk(t) => ProbeShape::Ltqk {
                dim,
                rank: t.rank,
                heads: t.heads,
                head_dim: t.head_dim,
            },
            Matcher::Lcattn(t) => ProbeShape::Lcattn {
                dim,
                layers: t.layers,
                heads: t.heads,
            },
        }
    }

    pub fn kind(&self) -> ProbeKind {
        self.shape().kind()
    }

    /// Zeroed parameters of the same shape, used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape())
    }

    /// Named tensors with shapes, in checkpoint order.
    pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        let mut out: Vec<(&'static str, Vec<usize>, &[f64])> = match &self.matcher {
            Matcher::Tom(t) => vec![
                ("w_q", vec![t.rank, t.dim], &t.w_q[..]),
                ("w_k", vec![t.rank, t.dim], &t.w_k[..]),
            ],
            Matcher::Ltqk(t) => vec![
                ("w_q", vec![t.heads, t.rank, t.head_dim], &t.w_q[..]),
                ("w_k", vec![t.heads, t.rank, t.head_dim], &t.w_k[..]),
            ],
            Matcher::Lcattn(t) => vec![("attn_weights", vec![t.layers, t.heads], &t.weights[..])],
        };
        out.push(("w_v", vec![self.value.len()], &self.value[..]));
        out.push(("theta", vec![5], &self.theta[..]));
        out
    }

    /// Mutable views in the same order as [`ProbeParams::tensors`].
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = match &mut self.matcher {
            Matcher::Tom(t) => vec![&mut t.w_q[..], &mut t.w_k[..]],
            Matcher::Ltqk(t) => vec![&mut t.w_q[..], &mut t.w_k[..]],
            Matcher::Lcattn(t) => vec![&mut t.weights[..]],
        };
        out.push(&mut self.value[..]);
        out.push(&mut self.theta[..]);
        out
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.tensors().into_iter().map(|(_, _, s)| s).collect()
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn round_to_f32(&mut self) {
        for s in self.slices_mut() {
            for x in s.iter_mut() {
                *x = f64::from(*x as f32);
            }
        }
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &ProbeParams) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_bounds_and_zero_theta() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ProbeParams::init(ProbeShape::Tom { dim: 16, rank: 4 }, &mut rng);
        assert_eq!(p.theta, [0.0; 5]);
        assert_eq!(p.num_params(), 4 * 16 * 2 + 16 + 5);
        for s in p.slices() {
            assert!(s.iter().all(|x| x.abs() <= 0.25));
            assert!(s.iter().all(|&x| f64::from(x as f32) == x));
        }
    }

    #[test]
    fn lcattn_weight_count() {
        let p = ProbeParams::zeros(ProbeShape::Lcattn {
            dim: 8,
            layers: 11,
            heads: 32,
        });
        match &p.matcher {
            Matcher::Lcattn(t) => assert_eq!(t.weights.len(), 11 * 32),
            _ => unreachable!(),
        }
    }
}
