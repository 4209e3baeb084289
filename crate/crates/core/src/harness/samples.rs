use super::manifest::DatasetManifest;
use super::synthetic::SyntheticImage;
use crate::error::Result;
use crate::net::train::{CountSample, Sample};
use crate::net::Tensor;
use crate::stack::{build_nested_stack, normalize_saliency, AgreementMap};
use crate::subitizing::CountScheme;

fn sample(id: &str, image: Tensor<f32>, agreement: &AgreementMap) -> Sample {
    Sample {
        id: id.to_string(),
        image,
        stack: build_nested_stack(agreement),
        saliency: normalize_saliency(agreement),
    }
}

fn rgb_tensor(img: &image::RgbImage) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut planes = vec![0f32; 3 * w * h];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            planes[c * w * h + i] = px[c] as f32 / 255.0;
        }
    }
    Tensor::from_vec(3, h, w, planes).expect("sized from the image")
}

pub fn synthetic_samples(images: &[SyntheticImage]) -> Vec<Sample> {
    images
        .iter()
        .map(|s| sample(&s.id, rgb_tensor(&s.image), &s.agreement))
        .collect()
}

/// Loads every record as a training sample, in manifest order.
pub fn manifest_samples(manifest: &DatasetManifest) -> Result<Vec<Sample>> {
    manifest
        .records
        .iter()
        .map(|rec| {
            let gt = manifest.ground_truth(rec)?;
            let (w, h, planes) = manifest.image(rec)?;
            Ok(sample(
                &rec.id,
                Tensor::from_vec(3, h, w, planes)?,
                &gt.agreement,
            ))
        })
        .collect()
}

/// Records with a count, paired with their class under `scheme`.
pub fn manifest_count_samples(
    manifest: &DatasetManifest,
    scheme: CountScheme,
) -> Result<Vec<CountSample>> {
    let mut out = Vec::new();
    for rec in &manifest.records {
        let Some(count) = rec.count else { continue };
        let (w, h, planes) = manifest.image(rec)?;
        out.push(CountSample {
            image: Tensor::from_vec(3, h, w, planes)?,
            class: scheme.class_of(count)?,
        });
    }
    Ok(out)
}
