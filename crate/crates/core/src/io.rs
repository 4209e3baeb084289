//! Single-channel raster files (PNG or PGM).
//!
//! | map        | on disk                        | in memory          |
//! |------------|--------------------------------|--------------------|
//! | agreement  | 8-bit, raw observer counts     | `0..=N`            |
//! | binary     | 8-bit, `{0, 255}`              | `{false, true}`    |
//! | saliency   | 8-bit                          | `value / 255`      |
//! | instances  | 16-bit (8-bit also accepted)   | labels, 0 = bg     |

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, RgbImage};

use crate::error::{Error, Result};
use crate::stack::{AgreementMap, BinaryMap, InstanceMap, SaliencyMap};

fn open(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn expect_luma8(path: &Path, img: DynamicImage) -> Result<GrayImage> {
    match img {
        DynamicImage::ImageLuma8(g) => Ok(g),
        other => Err(Error::Record {
            id: path.display().to_string(),
            reason: format!(
                "expected single-channel 8-bit image, found {:?}",
                other.color()
            ),
        }),
    }
}

fn save_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_agreement(path: &Path, n_observers: usize) -> Result<AgreementMap> {
    let g = expect_luma8(path, open(path)?)?;
    let (w, h) = g.dimensions();
    AgreementMap::new(w as usize, h as usize, n_observers, g.into_raw())
}

pub fn write_agreement(path: &Path, map: &AgreementMap) -> Result<()> {
    let img = GrayImage::from_raw(
        map.width() as u32,
        map.height() as u32,
        map.values().to_vec(),
    )
    .expect("buffer size checked at construction");
    img.save(path).map_err(save_err(path))
}

pub fn read_binary(path: &Path) -> Result<BinaryMap> {
    let g = expect_luma8(path, open(path)?)?;
    let (w, h) = g.dimensions();
    let raw = g.into_raw();
    if let Some((index, &value)) = raw.iter().enumerate().find(|(_, &v)| v != 0 && v != 255) {
        return Err(Error::NotBinary {
            index,
            value: value as u16,
            on: 255,
        });
    }
    BinaryMap::new(
        w as usize,
        h as usize,
        raw.into_iter().map(|v| v == 255).collect(),
    )
}

pub fn write_binary(path: &Path, map: &BinaryMap) -> Result<()> {
    let raw = map
        .values()
        .iter()
        .map(|&b| if b { 255 } else { 0 })
        .collect();
    let img = GrayImage::from_raw(map.width() as u32, map.height() as u32, raw)
        .expect("buffer size checked at construction");
    img.save(path).map_err(save_err(path))
}

pub fn read_saliency(path: &Path) -> Result<SaliencyMap> {
    let g = expect_luma8(path, open(path)?)?;
    let (w, h) = g.dimensions();
    let values = g.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    SaliencyMap::new(w as usize, h as usize, values)
}

pub fn saliency_to_gray(map: &SaliencyMap) -> GrayImage {
    let raw = map
        .values()
        .iter()
        .map(|&v| (v * 255.0).round() as u8)
        .collect();
    GrayImage::from_raw(map.width() as u32, map.height() as u32, raw)
        .expect("buffer size checked at construction")
}

pub fn write_saliency(path: &Path, map: &SaliencyMap) -> Result<()> {
    saliency_to_gray(map).save(path).map_err(save_err(path))
}

pub fn read_instances(path: &Path) -> Result<InstanceMap> {
    let img = open(path)?;
    let (w, h, labels) = match img {
        DynamicImage::ImageLuma16(g) => {
            let (w, h) = g.dimensions();
            (w, h, g.into_raw())
        }
        DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            (w, h, g.into_raw().into_iter().map(u16::from).collect())
        }
        other => {
            return Err(Error::Record {
                id: path.display().to_string(),
                reason: format!(
                    "expected single-channel instance map, found {:?}",
                    other.color()
                ),
            })
        }
    };
    InstanceMap::new(w as usize, h as usize, labels)
}

pub fn write_instances(path: &Path, map: &InstanceMap) -> Result<()> {
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(
        map.width() as u32,
        map.height() as u32,
        map.labels().to_vec(),
    )
    .expect("buffer size checked at construction");
    img.save(path).map_err(save_err(path))
}

/// Loads an RGB image as three row-major planes scaled to `[0, 1]`.
pub fn read_rgb_planes(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let img = open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut planes = vec![0f32; 3 * w * h];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            planes[c * w * h + i] = px[c] as f32 / 255.0;
        }
    }
    Ok((w, h, planes))
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    img.save(path).map_err(save_err(path))
}
