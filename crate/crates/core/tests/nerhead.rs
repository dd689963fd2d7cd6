#![allow(clippy::needless_range_loop)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tommer::nerhead::{
    classify_span, ner_loss_gradients, train_ner_head, MentionSource, NerExample, NerHeadParams,
    NerTrainConfig,
};
use tommer::probe::{MemoryRepSource, ProbeInputs, Reps};
use tommer::repio::{TensorF32, TypedSequence};
use tommer::Span;

fn types(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn random_head(seed: u64, dim: usize, hidden: usize, names: &[&str]) -> NerHeadParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = NerHeadParams::init(dim, hidden, &types(names), &mut rng).unwrap();
    for b in p.b1.iter_mut().chain(p.b2.iter_mut()) {
        *b = rng.random_range(-0.5..0.5);
    }
    p
}

/// Plain loops over the weight matrices.
fn oracle_probs(x: &[f64], p: &NerHeadParams) -> Vec<f64> {
    let mut h = vec![0.0; p.hidden];
    for r in 0..p.hidden {
        let mut a = p.b1[r];
        for c in 0..2 * p.dim {
            a += p.w1[r * 2 * p.dim + c] * x[c];
        }
        h[r] = if a > 0.0 { a } else { 0.0 };
    }
    let k = p.labels.len();
    let mut z = vec![0.0; k];
    for c in 0..k {
        z[c] = p.b2[c];
        for r in 0..p.hidden {
            z[c] += p.w2[c * p.hidden + r] * h[r];
        }
    }
    let m = z.iter().cloned().fold(f64::MIN, f64::max);
    let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
    z.iter().map(|v| (v - m).exp() / s).collect()
}

#[test]
fn classification_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..20 {
        let p = random_head(seed, 5, 12, &["LOC", "ORG", "PER"]);
        let x: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
        let c = classify_span(&x, &p).unwrap();
        let want = oracle_probs(&x, &p);
        for (a, b) in c.probs.iter().zip(&want) {
            assert!((a - b).abs() < 1e-6);
        }
        let best = (0..want.len()).fold(0, |b, i| if want[i] > want[b] { i } else { b });
        assert_eq!(c.index, best);
    }
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..5 {
        let p = random_head(seed, 3, 6, &["A", "B"]);
        let batch: Vec<NerExample> = (0..4)
            .map(|i| NerExample {
                embedding: (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(),
                label: i % 3,
            })
            .collect();
        let (_, grads) = ner_loss_gradients(&batch, &p).unwrap();
        let h = 1e-5;
        let fields: [fn(&mut NerHeadParams) -> &mut Vec<f64>; 4] =
            [|p| &mut p.w1, |p| &mut p.b1, |p| &mut p.w2, |p| &mut p.b2];
        for (f, field) in fields.iter().enumerate() {
            let len = field(&mut p.clone()).len();
            let analytic = field(&mut grads.clone()).clone();
            for k in 0..len {
                let mut plus = p.clone();
                field(&mut plus)[k] += h;
                let mut minus = p.clone();
                field(&mut minus)[k] -= h;
                let lp = ner_loss_gradients(&batch, &plus).unwrap().0;
                let lm = ner_loss_gradients(&batch, &minus).unwrap().0;
                let numeric = (lp - lm) / (2.0 * h);
                let denom = numeric.abs().max(analytic[k].abs()).max(1e-6);
                assert!(
                    (numeric - analytic[k]).abs() / denom < 1e-4,
                    "seed {seed} field {f} index {k}: {numeric} vs {}",
                    analytic[k]
                );
            }
        }
    }
}

/// Sequences whose mention start tokens sit on `+u` for type A and `-u` for
/// type B, plus noise.
fn separable(
    n_seqs: usize,
    dim: usize,
    seed: u64,
    single_type: bool,
) -> (Vec<TypedSequence>, MemoryRepSource) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut source = MemoryRepSource::new();
    let mut dataset = Vec::new();
    for s in 0..n_seqs {
        let n = 10;
        let mut rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-0.3..0.3)).collect())
            .collect();
        let mut mentions = BTreeMap::new();
        for (start, len) in [(1, 2), (5, 1), (8, 3)] {
            let a = single_type || rng.random_bool(0.5);
            rows[start - 1][0] += if a { 2.0 } else { -2.0 };
            mentions.insert(
                Span::new(start, start + len - 1),
                if a { "A" } else { "B" }.to_owned(),
            );
        }
        let id = format!("t{s}");
        source.insert(
            id.clone(),
            ProbeInputs::from_reps(TensorF32::from_rows(&rows).unwrap()),
        );
        dataset.push(TypedSequence {
            seq_id: id.clone(),
            n_tokens: n,
            mentions,
            rep_file: format!("{id}.tomr"),
            token_texts: None,
        });
    }
    (dataset, source)
}

fn accuracy(head: &NerHeadParams, dataset: &[TypedSequence], source: &MemoryRepSource) -> f64 {
    let (mut right, mut total) = (0, 0);
    for seq in dataset {
        let reps = Reps::from_tensor(&source.get(&seq.seq_id).unwrap().reps).unwrap();
        for (span, ty) in &seq.mentions {
            let x = tommer::nerhead::span_embedding(&reps, *span).unwrap();
            let c = classify_span(&x, head).unwrap();
            right += usize::from(&head.labels[c.index] == ty);
            total += 1;
        }
    }
    right as f64 / total as f64
}

fn gold_config(seed: u64) -> NerTrainConfig {
    NerTrainConfig {
        mention_source: MentionSource::Gold,
        epochs: 5,
        seed,
        ..NerTrainConfig::default()
    }
}

#[test]
fn separable_types_are_learned() {
    let (train, src) = separable(60, 6, 1, false);
    let (test, test_src) = separable(30, 6, 2, false);
    let head = train_ner_head(&train, &src, None, &gold_config(0)).unwrap();
    assert_eq!(head.hidden, 1024);
    let acc = accuracy(&head, &test, &test_src);
    assert!(acc >= 0.99, "accuracy {acc}");
}

#[test]
fn single_type_is_always_predicted() {
    let (train, src) = separable(20, 4, 3, true);
    let head = train_ner_head(&train, &src, None, &gold_config(0)).unwrap();
    assert_eq!(head.labels, types(&["A", "NONE"]));
    assert_eq!(accuracy(&head, &train, &src), 1.0);
}

#[test]
fn seeds_change_weights_not_quality() {
    let (train, src) = separable(60, 6, 5, false);
    let (test, test_src) = separable(30, 6, 6, false);
    let a = train_ner_head(&train, &src, None, &gold_config(0)).unwrap();
    let b = train_ner_head(&train, &src, None, &gold_config(1)).unwrap();
    let again = train_ner_head(&train, &src, None, &gold_config(0)).unwrap();
    assert_eq!(a, again);
    assert_ne!(a.w1, b.w1);
    let (acc_a, acc_b) = (
        accuracy(&a, &test, &test_src),
        accuracy(&b, &test, &test_src),
    );
    assert!((acc_a - acc_b).abs() <= 0.02, "{acc_a} vs {acc_b}");
}
