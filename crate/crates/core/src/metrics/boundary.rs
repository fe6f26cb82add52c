//! Boundary extraction and tolerance-disk matching for the boundary F-measure.

use crate::error::Result;
use crate::mask::{shift_down, shift_up, Mask};

/// Foreground pixels with at least one 4-neighbor that is background or
/// outside the image.
pub fn extract_boundary(mask: &Mask) -> Mask {
    let (w, h) = mask.dims();
    let stride = mask.stride();
    let mut out = Mask::new(w, h).expect("dims already valid");
    let zeros = vec![0u64; stride];
    let mut left = vec![0u64; stride];
    let mut right = vec![0u64; stride];
    for y in 0..h {
        let row = mask.row(y);
        if row.iter().all(|&v| v == 0) {
            continue;
        }
        let up = if y > 0 { mask.row(y - 1) } else { &zeros };
        let down = if y + 1 < h { mask.row(y + 1) } else { &zeros };
        shift_up(row, 1, &mut left);
        shift_down(row, 1, &mut right);
        let dst = out.row_mut(y);
        for i in 0..stride {
            let interior = row[i] & left[i] & right[i] & up[i] & down[i];
            dst[i] = row[i] & !interior;
        }
    }
    out
}

/// Dilation by the Euclidean disk `dx² + dy² <= radius²`, clipped to the image.
pub fn dilate_disk(mask: &Mask, radius: u32) -> Mask {
    let (w, h) = mask.dims();
    let r = radius as usize;
    let stride = mask.stride();
    let tail = mask.tail_mask();
    // Disk half-width for each vertical offset.
    let half: Vec<usize> = (0..=r).map(|dy| isqrt(r * r - dy * dy)).collect();

    let mut widths = half.clone();
    widths.sort_unstable();
    widths.dedup();
    // Horizontally dilated copies of every row, one plane per distinct width.
    let planes: Vec<(usize, Vec<u64>)> = widths
        .into_iter()
        .map(|hw| {
            let mut plane = vec![0u64; stride * h];
            for y in 0..h {
                let row = mask.row(y);
                if row.iter().any(|&v| v != 0) {
                    dilate_row(row, hw, tail, &mut plane[y * stride..(y + 1) * stride]);
                }
            }
            (hw, plane)
        })
        .collect();
    let plane_for = |hw: usize| &planes.iter().find(|(w, _)| *w == hw).unwrap().1;

    let mut out = Mask::new(w, h).expect("dims already valid");
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        let dst = out.row_mut(y);
        for sy in lo..=hi {
            let plane = plane_for(half[sy.abs_diff(y)]);
            for (d, &v) in dst.iter_mut().zip(&plane[sy * stride..(sy + 1) * stride]) {
                *d |= v;
            }
        }
    }
    out
}

fn dilate_row(row: &[u64], half_width: usize, tail: u64, out: &mut [u64]) {
    out.copy_from_slice(row);
    let mut up = vec![0u64; row.len()];
    let mut down = vec![0u64; row.len()];
    let mut span = 0;
    while span < half_width {
        let step = (span + 1).min(half_width - span);
        shift_up(out, step, &mut up);
        shift_down(out, step, &mut down);
        for ((o, u), d) in out.iter_mut().zip(&up).zip(&down) {
            *o |= u | d;
        }
        *out.last_mut().unwrap() &= tail;
        span += step;
    }
}

fn isqrt(n: usize) -> usize {
    let mut r = (n as f64).sqrt() as usize;
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    r
}

fn masked_count(a: &Mask, b: &Mask) -> usize {
    a.words()
        .iter()
        .zip(b.words())
        .map(|(x, y)| (x & y).count_ones() as usize)
        .sum()
}

/// Boundary F-measure with a pixel tolerance radius.
///
/// Precision is the fraction of predicted boundary pixels within `radius` of
/// some ground-truth boundary pixel; recall is the symmetric fraction.
/// Two empty boundaries score 1, exactly one empty boundary scores 0.
pub fn boundary_f(pred: &Mask, gt: &Mask, radius: u32) -> Result<f64> {
    pred.check_dims(gt)?;
    let pb = extract_boundary(pred);
    let gb = extract_boundary(gt);
    let (np, ng) = (pb.count_ones(), gb.count_ones());
    match (np, ng) {
        (0, 0) => return Ok(1.0),
        (0, _) | (_, 0) => return Ok(0.0),
        _ => {}
    }
    let matched_pred = masked_count(&pb, &dilate_disk(&gb, radius));
    let matched_gt = masked_count(&gb, &dilate_disk(&pb, radius));
    let precision = matched_pred as f64 / np as f64;
    let recall = matched_gt as f64 / ng as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Tolerance radius of 0.8% of the image diagonal, rounded up, at least 1.
pub fn default_radius(width: usize, height: usize) -> u32 {
    let diag = ((width * width + height * height) as f64).sqrt();
    ((0.008 * diag).ceil() as u32).max(1)
}
