//! Parameter checkpoints: JSON mapping parameter names to shape plus
//! row-major values, with a mandatory version field.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{CoreError, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct SavedParam {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// What the parameters belong to (e.g. "agent", "critic-main1").
    pub kind: String,
    /// Component-specific metadata (model dimensions, vocabulary sizes).
    pub meta: serde_json::Value,
    pub params: Vec<SavedParam>,
}

impl Checkpoint {
    pub fn from_store(kind: &str, meta: serde_json::Value, store: &ParamStore) -> Self {
        let params = store
            .iter()
            .map(|p| SavedParam {
                name: p.name.clone(),
                rows: p.value.rows(),
                cols: p.value.cols(),
                values: p.value.data().to_vec(),
            })
            .collect();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            kind: kind.to_string(),
            meta,
            params,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(CoreError::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    /// Writes values into an already-structured store; every name and shape
    /// must match.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.params.len() != store.len() {
            return Err(CoreError::Checkpoint(format!(
                "parameter count mismatch: checkpoint has {}, store has {}",
                self.params.len(),
                store.len()
            )));
        }
        for saved in &self.params {
            let id = store.lookup(&saved.name).ok_or_else(|| {
                CoreError::Checkpoint(format!("unknown parameter {}", saved.name))
            })?;
            let value = Tensor::from_vec(saved.rows, saved.cols, saved.values.clone())
                .map_err(|_| {
                    CoreError::Checkpoint(format!("bad shape for parameter {}", saved.name))
                })?;
            if !value.same_shape(store.value(id)) {
                return Err(CoreError::Checkpoint(format!(
                    "shape mismatch for parameter {}: checkpoint {:?}, store {:?}",
                    saved.name,
                    value.shape(),
                    store.value(id).shape()
                )));
            }
            *store.value_mut(id) = value;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        store.register_xavier("layer.w", 5, 7, &mut rng);
        store.register_xavier("layer.b", 1, 7, &mut rng);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        Checkpoint::from_store("test", serde_json::json!({"dim": 7}), &store)
            .save(&path)
            .unwrap();

        let mut rng2 = ChaCha8Rng::seed_from_u64(99);
        let mut other = ParamStore::new();
        other.register_xavier("layer.w", 5, 7, &mut rng2);
        other.register_xavier("layer.b", 1, 7, &mut rng2);
        Checkpoint::load(&path).unwrap().restore_into(&mut other).unwrap();
        for (a, b) in store.iter().zip(other.iter()) {
            for (x, y) in a.value.data().iter().zip(b.value.data()) {
                assert_eq!(x.to_bits(), y.to_bits(), "{}: {x:?} vs {y:?}", a.name);
            }
        }
        assert!(store.values_bit_equal(&other));
    }

    #[test]
    fn version_and_shape_guards() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        std::fs::write(
            &path,
            r#"{"version":999,"kind":"x","meta":null,"params":[]}"#,
        )
        .unwrap();
        assert!(Checkpoint::load(&path).is_err());

        let mut store = ParamStore::new();
        store.register_zeros("w", 2, 2);
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            kind: "x".into(),
            meta: serde_json::Value::Null,
            params: vec![SavedParam {
                name: "w".into(),
                rows: 3,
                cols: 3,
                values: vec![0.0; 9],
            }],
        };
        assert!(ckpt.restore_into(&mut store).is_err());
    }
}
