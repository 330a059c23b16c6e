use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, CorrelationMatrix};
use crate::backend::Vocab;
use crate::error::{Error, Result};
use crate::hierarchy::LabelPath;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Best-so-far matrix by dev strict accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestSnapshot {
    pub epoch: usize,
    pub dev_acc: f64,
    pub values: Vec<f64>,
}

/// Versioned JSON checkpoint. `values` is the matrix in row-major order
/// with rows in `labels` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub labels: Vec<LabelPath>,
    pub vocab_fingerprint: String,
    pub vocab_size: usize,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<AdamState>,
    #[serde(default)]
    pub epochs_completed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best: Option<BestSnapshot>,
}

impl Checkpoint {
    pub fn new(u: &CorrelationMatrix, vocab: &Vocab) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            labels: u.labels().to_vec(),
            vocab_fingerprint: vocab.fingerprint(),
            vocab_size: u.vocab_size(),
            values: u.as_slice().to_vec(),
            optimizer: None,
            epochs_completed: 0,
            best: None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads and checks the version and the vocabulary fingerprint.
    pub fn load(path: &Path, vocab: &Vocab) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        if ck.vocab_fingerprint != vocab.fingerprint() || ck.vocab_size != vocab.len() {
            return Err(Error::Checkpoint("vocabulary fingerprint differs from the provider's".into()));
        }
        Ok(ck)
    }

    pub fn matrix(&self) -> Result<CorrelationMatrix> {
        CorrelationMatrix::from_parts(self.labels.clone(), self.vocab_size, self.values.clone())
    }

    pub fn best_matrix(&self) -> Result<CorrelationMatrix> {
        match &self.best {
            Some(b) => CorrelationMatrix::from_parts(self.labels.clone(), self.vocab_size, b.values.clone()),
            None => self.matrix(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::VocabSpec;

    fn vocab(extra: &str) -> Vocab {
        Vocab::new(VocabSpec {
            tokens: vec!["[MASK]".into(), "a".into(), extra.into()],
            mask_token: "[MASK]".into(),
            special_ids: vec![],
        })
        .unwrap()
    }

    #[test]
    fn roundtrip_and_fingerprint_check() {
        let labels = vec![LabelPath::parse("/x").unwrap(), LabelPath::parse("/y").unwrap()];
        let u = CorrelationMatrix::from_parts(labels, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let mut ck = Checkpoint::new(&u, &vocab("b"));
        ck.optimizer = Some(AdamState::new(6, 0.01, 10));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path, &vocab("b")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.matrix().unwrap(), u);
        assert!(matches!(Checkpoint::load(&path, &vocab("c")), Err(Error::Checkpoint(_))));
    }
}
