use image::{Rgb, RgbImage};

use crate::error::Result;
use crate::ranking::{instance_rank_scores, rank_order, RankVector};
use crate::stack::{same_dims, InstanceMap, SaliencyMap};

/// Rank-indexed fill colours; rank 1 first. Colour-blind safe (Paul Tol's muted and
/// medium-contrast sets).
pub const RANK_PALETTE: [[u8; 3]; 12] = [
    [0xCC, 0x66, 0x77],
    [0x33, 0x22, 0x88],
    [0xDD, 0xCC, 0x77],
    [0x11, 0x77, 0x33],
    [0x88, 0xCC, 0xEE],
    [0x88, 0x22, 0x55],
    [0x44, 0xAA, 0x99],
    [0x99, 0x99, 0x33],
    [0xAA, 0x44, 0x99],
    [0x66, 0x99, 0xCC],
    [0x66, 0x11, 0x00],
    [0xDD, 0xDD, 0xDD],
];
pub const CORRECT_BORDER: [u8; 3] = [0x00, 0x00, 0xFF];
pub const INCORRECT_BORDER: [u8; 3] = [0xFF, 0x00, 0x00];
pub const BORDER_WIDTH: usize = 2;

/// Palette entry for a (possibly tied, fractional) rank; ties share the lower index.
pub fn palette_color(rank: f64) -> [u8; 3] {
    let i = (rank.floor().max(1.0) as usize - 1).min(RANK_PALETTE.len() - 1);
    RANK_PALETTE[i]
}

/// True when both rank vectors cover the same instances with identical ranks.
pub fn same_order(gt: &RankVector, pred: &RankVector) -> bool {
    gt.entries() == pred.entries()
}

/// Fills each instance with the colour of its predicted rank over a dimmed saliency backdrop,
/// then draws a blue border if the predicted order equals `gt_rank`, red otherwise.
pub fn render_rank_overlay(
    saliency: &SaliencyMap,
    instances: &InstanceMap,
    gt_rank: &RankVector,
) -> Result<RgbImage> {
    same_dims(saliency.dims(), instances.dims())?;
    let pred = rank_order(&instance_rank_scores(saliency, instances)?);
    let correct = same_order(gt_rank, &pred);
    let (w, h) = saliency.dims();
    let labels = instances.labels();
    let sal = saliency.values();
    let border = if correct {
        CORRECT_BORDER
    } else {
        INCORRECT_BORDER
    };
    let bw = BORDER_WIDTH.min(w.div_ceil(2)).min(h.div_ceil(2));
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        if x < bw || y < bw || x + bw >= w || y + bw >= h {
            return Rgb(border);
        }
        let p = y * w + x;
        match pred.rank_of(labels[p]) {
            Some(r) if labels[p] != 0 => Rgb(palette_color(r)),
            _ => {
                let g = (sal[p] * 96.0).round() as u8;
                Rgb([g, g, g])
            }
        }
    });
    Ok(img)
}

/// Hex strings of the palette, rank 1 first.
pub fn palette_hex() -> Vec<String> {
    RANK_PALETTE
        .iter()
        .map(|c| format!("#{:02X}{:02X}{:02X}", c[0], c[1], c[2]))
        .collect()
}
