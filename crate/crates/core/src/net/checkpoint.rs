//! Versioned JSON checkpoints.
//!
//! Layout:
//! ```text
//! {
//!   "format": "nrss-checkpoint",
//!   "version": 1,
//!   "config": { "stages": 4, "atrous": false, "n_observers": 12, "scheme": "pascals", "input_channels": 3 },
//!   "gt_scale": 1.0,
//!   "generation": 2000,
//!   "tensors": [ { "name": "encoder.0.weight", "shape": [16, 3, 3, 3], "data": [...] }, ... ]
//! }
//! ```
//! Convolution weights are `[out, in, ky, kx]` row-major; biases are `[out]`.
//! Fully connected layers are stored as 1x1 convolutions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{NetConfig, NetworkParams};
use crate::error::{Error, Result};

pub const FORMAT: &str = "nrss-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: NetConfig,
    pub gt_scale: f64,
    pub generation: u64,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn from_params(params: &NetworkParams<f32>, gt_scale: f64) -> Self {
        let tensors = params
            .named_convs()
            .into_iter()
            .flat_map(|(name, c)| {
                [
                    TensorRecord {
                        name: format!("{name}.weight"),
                        shape: vec![c.out_c, c.in_c, c.kernel, c.kernel],
                        data: c.weight.clone(),
                    },
                    TensorRecord {
                        name: format!("{name}.bias"),
                        shape: vec![c.out_c],
                        data: c.bias.clone(),
                    },
                ]
            })
            .collect();
        Self {
            format: FORMAT.into(),
            version: VERSION,
            config: params.config,
            gt_scale,
            generation: params.generation,
            tensors,
        }
    }

    pub fn into_params(self) -> Result<(NetworkParams<f32>, f64)> {
        if self.format != FORMAT {
            return Err(Error::Checkpoint(format!(
                "unknown format {:?}",
                self.format
            )));
        }
        if self.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                self.version
            )));
        }
        let mut params = NetworkParams::<f32>::init(self.config, 0)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let expected: Vec<(String, usize)> = params
            .named_tensors()
            .into_iter()
            .map(|(n, d)| (n, d.len()))
            .collect();
        if expected.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for ((dst, (name, len)), rec) in params
            .tensors_mut()
            .into_iter()
            .zip(expected)
            .zip(self.tensors)
        {
            let count: usize = rec.shape.iter().product();
            if rec.name != name || rec.data.len() != len || count != len {
                return Err(Error::Checkpoint(format!(
                    "tensor {:?} with {} values does not match {name:?} ({len} values)",
                    rec.name,
                    rec.data.len()
                )));
            }
            if rec.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!(
                    "tensor {name:?} has non-finite values"
                )));
            }
            *dst = rec.data;
        }
        params.generation = self.generation;
        Ok((params, self.gt_scale))
    }
}

pub fn save_checkpoint(params: &NetworkParams<f32>, gt_scale: f64, path: &Path) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(file, &Checkpoint::from_params(params, gt_scale))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(NetworkParams<f32>, f64)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let ck: Checkpoint = serde_json::from_reader(file)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    ck.into_params()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let cfg = NetConfig {
            atrous: true,
            stages: 5,
            ..NetConfig::default()
        };
        let mut p = NetworkParams::<f32>::init(cfg, 9).unwrap();
        p.generation = 17;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        save_checkpoint(&p, 1000.0, &path).unwrap();
        let (q, scale) = load_checkpoint(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!(scale, 1000.0);
    }

    #[test]
    fn rejects_wrong_version() {
        let p = NetworkParams::<f32>::init(NetConfig::default(), 1).unwrap();
        let mut ck = Checkpoint::from_params(&p, 1.0);
        ck.version = 2;
        assert!(matches!(ck.into_params(), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn rejects_shape_mismatch() {
        let p = NetworkParams::<f32>::init(NetConfig::default(), 1).unwrap();
        let mut ck = Checkpoint::from_params(&p, 1.0);
        ck.tensors[0].data.pop();
        assert!(matches!(ck.into_params(), Err(Error::Checkpoint(_))));
    }
}
