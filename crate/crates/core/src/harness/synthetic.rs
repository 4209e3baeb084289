use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{write_manifest, ManifestRecord};
use crate::error::{Error, Result};
use crate::io::{write_agreement, write_instances, write_rgb};
use crate::stack::{AgreementMap, InstanceMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    pub n_images: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    /// Inclusive agreement level range; levels within an image are distinct.
    pub min_level: u8,
    pub max_level: u8,
    pub n_observers: usize,
    /// Shape side length range in pixels.
    pub min_size: usize,
    pub max_size: usize,
    pub shapes: Vec<ShapeKind>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            n_images: 10,
            min_instances: 1,
            max_instances: 4,
            min_level: 1,
            max_level: 12,
            n_observers: 12,
            min_size: 12,
            max_size: 24,
            shapes: vec![ShapeKind::Rectangle, ShapeKind::Ellipse],
            seed: 0,
        }
    }
}

/// Placement attempts per shape before giving up.
pub const MAX_ATTEMPTS: usize = 500;
const BACKGROUND_MAX: f64 = 60.0;
const SHAPE_NOISE: f64 = 12.0;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width == 0 || self.height == 0 || self.n_images == 0 {
            return bad("canvas size and image count must be positive".into());
        }
        if self.min_instances == 0 || self.min_instances > self.max_instances {
            return bad(format!(
                "instance range {}..={} is empty or starts at 0",
                self.min_instances, self.max_instances
            ));
        }
        if self.min_level == 0
            || self.min_level > self.max_level
            || self.max_level as usize > self.n_observers
        {
            return bad(format!(
                "level range {}..={} must lie in 1..={}",
                self.min_level, self.max_level, self.n_observers
            ));
        }
        let n_levels = (self.max_level - self.min_level) as usize + 1;
        if self.max_instances > n_levels {
            return bad(format!(
                "{} instances need distinct levels but only {n_levels} are available",
                self.max_instances
            ));
        }
        if self.max_instances > u16::MAX as usize {
            return bad("too many instances".into());
        }
        if self.min_size == 0 || self.min_size > self.max_size {
            return bad("shape size range is empty".into());
        }
        if self.max_size > self.width.min(self.height) {
            return bad("shapes larger than the canvas".into());
        }
        if self.shapes.is_empty() {
            return bad("no shape kinds".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Placed {
    kind: ShapeKind,
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
}

impl Placed {
    fn contains(&self, x: usize, y: usize) -> bool {
        if x < self.x0 || y < self.y0 || x >= self.x0 + self.w || y >= self.y0 + self.h {
            return false;
        }
        match self.kind {
            ShapeKind::Rectangle => true,
            ShapeKind::Ellipse => {
                let (rx, ry) = (self.w as f64 / 2.0, self.h as f64 / 2.0);
                let dx = (x as f64 + 0.5 - self.x0 as f64 - rx) / rx;
                let dy = (y as f64 + 0.5 - self.y0 as f64 - ry) / ry;
                dx * dx + dy * dy <= 1.0
            }
        }
    }

    /// Bounding boxes separated by at least one pixel.
    fn clear_of(&self, o: &Placed) -> bool {
        self.x0 > o.x0 + o.w
            || o.x0 > self.x0 + self.w
            || self.y0 > o.y0 + o.h
            || o.y0 > self.y0 + self.h
    }
}

/// In-memory synthetic sample.
#[derive(Debug, Clone)]
pub struct SyntheticImage {
    pub id: String,
    pub image: RgbImage,
    pub agreement: AgreementMap,
    pub instances: InstanceMap,
    pub count: usize,
}

fn place(spec: &SyntheticSpec, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Placed>> {
    let mut placed: Vec<Placed> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut ok = None;
        for _ in 0..MAX_ATTEMPTS {
            let w = rng.gen_range(spec.min_size..=spec.max_size);
            let h = rng.gen_range(spec.min_size..=spec.max_size);
            let cand = Placed {
                kind: *spec.shapes.choose(rng).expect("validated non-empty"),
                x0: rng.gen_range(0..=spec.width - w),
                y0: rng.gen_range(0..=spec.height - h),
                w,
                h,
            };
            if placed.iter().all(|p| cand.clear_of(p)) {
                ok = Some(cand);
                break;
            }
        }
        match ok {
            Some(p) => placed.push(p),
            None => {
                return Err(Error::Placement {
                    shapes: n,
                    width: spec.width,
                    height: spec.height,
                    attempts: MAX_ATTEMPTS,
                })
            }
        }
    }
    Ok(placed)
}

/// Generates all images in memory; deterministic per seed.
pub fn synthesize(spec: &SyntheticSpec) -> Result<Vec<SyntheticImage>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width, spec.height);
    let levels: Vec<u8> = (spec.min_level..=spec.max_level).collect();
    let mut out = Vec::with_capacity(spec.n_images);
    for i in 0..spec.n_images {
        let n = rng.gen_range(spec.min_instances..=spec.max_instances);
        let shapes = place(spec, n, &mut rng)?;
        let chosen: Vec<u8> = levels.choose_multiple(&mut rng, n).copied().collect();
        let mut agree = vec![0u8; w * h];
        let mut labels = vec![0u16; w * h];
        let mut image = RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let hit = shapes.iter().position(|s| s.contains(x, y));
                let px = match hit {
                    Some(k) => {
                        agree[p] = chosen[k];
                        labels[p] = k as u16 + 1;
                        let base = 80.0 + 175.0 * chosen[k] as f64 / spec.n_observers as f64;
                        [0; 3].map(|_: u8| {
                            (base + rng.gen_range(-SHAPE_NOISE..=SHAPE_NOISE)).clamp(0.0, 255.0)
                                as u8
                        })
                    }
                    None => [0; 3].map(|_: u8| rng.gen_range(0.0..BACKGROUND_MAX) as u8),
                };
                image.put_pixel(x as u32, y as u32, Rgb(px));
            }
        }
        out.push(SyntheticImage {
            id: format!("syn_{i:04}"),
            image,
            agreement: AgreementMap::new(w, h, spec.n_observers, agree)?,
            instances: InstanceMap::new(w, h, labels)?,
            count: n,
        });
    }
    Ok(out)
}

/// Writes images, agreement maps, instance maps and `manifest.jsonl` under `dir`.
/// Returns the manifest path.
pub fn generate_synthetic(spec: &SyntheticSpec, dir: &Path) -> Result<PathBuf> {
    let images = synthesize(spec)?;
    for sub in ["images", "agreement", "instances"] {
        std::fs::create_dir_all(dir.join(sub))?;
    }
    let mut records = Vec::with_capacity(images.len());
    for s in &images {
        let rec = ManifestRecord {
            id: s.id.clone(),
            image: PathBuf::from("images").join(format!("{}.png", s.id)),
            agreement: PathBuf::from("agreement").join(format!("{}.png", s.id)),
            instances: PathBuf::from("instances").join(format!("{}.png", s.id)),
            count: Some(s.count),
            observers: spec.n_observers,
        };
        write_rgb(&dir.join(&rec.image), &s.image)?;
        write_agreement(&dir.join(&rec.agreement), &s.agreement)?;
        write_instances(&dir.join(&rec.instances), &s.instances)?;
        records.push(rec);
    }
    let manifest = dir.join("manifest.jsonl");
    write_manifest(&manifest, &records)?;
    Ok(manifest)
}
