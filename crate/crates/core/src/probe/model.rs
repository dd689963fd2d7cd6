use serde_json::{json, Map, Value};

use super::inputs::ProbeInputs;
use super::params::{
    LcattnParams, LtqkParams, Matcher, ProbeKind, ProbeParams, ProbeShape, TomParams,
};
use super::scoring::{score_all_spans, SpanProbMatrix};
use crate::error::{Error, Result};
use crate::repio::{Blob, Checkpoint};

/// Order of the combiner inputs, recorded in every checkpoint manifest.
pub const THETA_ORDER: [&str; 5] = ["m_ij", "max_m_kj", "min_m_kj", "v_j", "v_j_plus_1"];

/// A trained probe together with the metadata needed to apply it.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub params: ProbeParams,
    pub window: usize,
    /// Backbone layer the representations were read from.
    pub layer: Option<usize>,
    pub backbone: String,
    pub hyperparameters: Map<String, Value>,
}

impl ProbeModel {
    pub fn new(params: ProbeParams, window: usize) -> Self {
        ProbeModel {
            params,
            window,
            layer: None,
            backbone: String::new(),
            hyperparameters: Map::new(),
        }
    }

    pub fn kind(&self) -> ProbeKind {
        self.params.kind()
    }

    pub fn score(&self, inputs: &ProbeInputs) -> Result<SpanProbMatrix> {
        score_all_spans(inputs, &self.params, self.window)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut manifest = Map::new();
        let shape = self.params.shape();
        manifest.insert("kind".into(), json!(shape.kind().as_str()));
        manifest.insert("dim".into(), json!(shape.dim()));
        match shape {
            ProbeShape::Tom { rank, .. } => {
                manifest.insert("rank".into(), json!(rank));
            }
            ProbeShape::Ltqk {
                rank,
                heads,
                head_dim,
                ..
            } => {
                manifest.insert("rank".into(), json!(rank));
                manifest.insert("heads".into(), json!(heads));
                manifest.insert("head_dim".into(), json!(head_dim));
            }
            ProbeShape::Lcattn { layers, heads, .. } => {
                manifest.insert("layers".into(), json!(layers));
                manifest.insert("heads".into(), json!(heads));
            }
        }
        manifest.insert("window".into(), json!(self.window));
        manifest.insert("layer".into(), json!(self.layer));
        manifest.insert("backbone".into(), json!(self.backbone));
        manifest.insert(
            "hyperparameters".into(),
            Value::Object(self.hyperparameters.clone()),
        );
        manifest.insert("theta_order".into(), json!(THETA_ORDER));

        let blobs = self
            .params
            .tensors()
            .into_iter()
            .map(|(name, shape, data)| {
                Blob::new(name, shape, data.iter().map(|&x| x as f32).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Checkpoint { manifest, blobs })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let m = &ckpt.manifest;
        let field = |key: &str| -> Result<usize> {
            m.get(key)
                .and_then(Value::as_u64)
                .map(|x| x as usize)
                .ok_or_else(|| Error::Manifest(format!("missing or invalid {key:?}")))
        };
        let kind: ProbeKind = m
            .get("kind")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Manifest("missing \"kind\"".into()))?
            .parse()
            .map_err(Error::Manifest)?;
        let dim = field("dim")?;
        let shape = match kind {
            ProbeKind::Tom => ProbeShape::Tom {
                dim,
                rank: field("rank")?,
            },
            ProbeKind::Ltqk => ProbeShape::Ltqk {
                dim,
                rank: field("rank")?,
                heads: field("heads")?,
                head_dim: field("head_dim")?,
            },
            ProbeKind::Lcattn => ProbeShape::Lcattn {
                dim,
                layers: field("layers")?,
                heads: field("heads")?,
            },
        };
        let window = field("window")?;
        if window == 0 {
            return Err(Error::Manifest("window must be positive".into()));
        }
        if let Some(order) = m.get("theta_order") {
            if *order != json!(THETA_ORDER) {
                return Err(Error::Manifest(format!("unsupported theta order {order}")));
            }
        }

        let mut params = ProbeParams::zeros(shape);
        let expected: Vec<(&'static str, Vec<usize>)> = params
            .tensors()
            .into_iter()
            .map(|(n, s, _)| (n, s))
            .collect();
        if ckpt.blobs.len() != expected.len() {
            return Err(Error::Manifest(format!(
                "{} blobs for a {} probe, expected {}",
                ckpt.blobs.len(),
                kind.as_str(),
                expected.len()
            )));
        }
        for ((name, shape), (blob, dst)) in expected
            .iter()
            .zip(ckpt.blobs.iter().zip(params.slices_mut()))
        {
            if blob.spec.name != *name || blob.spec.shape != *shape {
                return Err(Error::Manifest(format!(
                    "blob {:?} {:?} does not match manifest-derived {name:?} {shape:?}",
                    blob.spec.name, blob.spec.shape
                )));
            }
            for (d, &x) in dst.iter_mut().zip(&blob.data) {
                *d = f64::from(x);
            }
        }
        Ok(ProbeModel {
            params,
            window,
            layer: m.get("layer").and_then(Value::as_u64).map(|x| x as usize),
            backbone: m
                .get("backbone")
                .and_then(Value::as_str)
                .unwrap_or_default()
                .to_owned(),
            hyperparameters: m
                .get("hyperparameters")
                .and_then(Value::as_object)
                .cloned()
                .unwrap_or_default(),
        })
    }
}

impl From<TomParams> for Matcher {
    fn from(p: TomParams) -> Self {
        Matcher::Tom(p)
    }
}

impl From<LtqkParams> for Matcher {
    fn from(p: LtqkParams) -> Self {
        Matcher::Ltqk(p)
    }
}

impl From<LcattnParams> for Matcher {
    fn from(p: LcattnParams) -> Self {
        Matcher::Lcattn(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repio::{load_checkpoint, save_checkpoint};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_round_trip_all_kinds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dir = tempfile::tempdir().unwrap();
        for shape in [
            ProbeShape::Tom { dim: 8, rank: 4 },
            ProbeShape::Ltqk {
                dim: 8,
                rank: 2,
                heads: 2,
                head_dim: 4,
            },
            ProbeShape::Lcattn {
                dim: 8,
                layers: 3,
                heads: 2,
            },
        ] {
            let mut model = ProbeModel::new(ProbeParams::init(shape, &mut rng), 25);
            model.params.theta = [0.5, -1.0, 0.25, 2.0, -0.125];
            model.layer = Some(6);
            model.backbone = "test/backbone".into();
            let path = dir.path().join("p.tomc");
            save_checkpoint(&model.to_checkpoint().unwrap(), &path).unwrap();
            let back = ProbeModel::from_checkpoint(&load_checkpoint(&path).unwrap()).unwrap();
            assert_eq!(back, model);
        }
    }

    #[test]
    fn rank_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = ProbeModel::new(
            ProbeParams::init(ProbeShape::Tom { dim: 8, rank: 32 }, &mut rng),
            25,
        );
        let mut ckpt = model.to_checkpoint().unwrap();
        ckpt.manifest.insert("rank".into(), json!(64));
        assert!(matches!(
            ProbeModel::from_checkpoint(&ckpt),
            Err(Error::Manifest(_))
        ));

        // manifest blob shapes claim rank 64, payload holds rank 32
        let mut bytes_ckpt = model.to_checkpoint().unwrap();
        for b in &mut bytes_ckpt.blobs[..2] {
            b.spec.shape = vec![64, 8];
        }
        let bytes = bytes_ckpt.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
