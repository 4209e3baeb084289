use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_agreement, read_instances, read_rgb_planes};
use crate::stack::{AgreementMap, InstanceMap};

fn default_observers() -> usize {
    12
}

/// One line of a manifest. Paths are relative to the manifest's directory unless absolute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub image: PathBuf,
    pub agreement: PathBuf,
    pub instances: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default = "default_observers")]
    pub observers: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

/// Ground truth for one record.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub agreement: AgreementMap,
    pub instances: InstanceMap,
}

impl DatasetManifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ground_truth(&self, rec: &ManifestRecord) -> Result<GroundTruth> {
        let agreement = read_agreement(&self.resolve(&rec.agreement), rec.observers)?;
        let instances = read_instances(&self.resolve(&rec.instances))?;
        if agreement.dims() != instances.dims() {
            return Err(Error::Record {
                id: rec.id.clone(),
                reason: format!(
                    "agreement is {:?} but instances are {:?}",
                    agreement.dims(),
                    instances.dims()
                ),
            });
        }
        Ok(GroundTruth {
            agreement,
            instances,
        })
    }

    /// Planar RGB in `[0, 1]` with its `(width, height)`.
    pub fn image(&self, rec: &ManifestRecord) -> Result<(usize, usize, Vec<f32>)> {
        read_rgb_planes(&self.resolve(&rec.image))
    }
}

fn dims_of(path: &Path) -> Result<(u32, u32)> {
    image::image_dimensions(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses and validates a manifest, checking every referenced file up front.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let file = std::fs::File::open(path)?;
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if !seen.insert(rec.id.clone()) {
            return Err(Error::Manifest {
                line: i + 1,
                reason: format!("duplicate id {:?}", rec.id),
            });
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::Manifest {
            line: 0,
            reason: "manifest has no records".into(),
        });
    }
    let manifest = DatasetManifest { root, records };
    for rec in &manifest.records {
        let mut dims = Vec::new();
        for p in [&rec.image, &rec.agreement, &rec.instances] {
            let full = manifest.resolve(p);
            if !full.exists() {
                return Err(Error::MissingFile(full));
            }
            dims.push(dims_of(&full)?);
        }
        if dims.iter().any(|&d| d != dims[0]) {
            return Err(Error::Record {
                id: rec.id.clone(),
                reason: format!("image, agreement and instance sizes differ: {dims:?}"),
            });
        }
    }
    Ok(manifest)
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
