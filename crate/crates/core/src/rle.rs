//! Row-major run-length codec.
//!
//! `counts` alternates background and foreground runs starting with
//! background; a mask that begins with foreground gets a leading zero run.
//! The JSON form is `{"w": .., "h": .., "counts": [..]}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{set_range, Mask};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    #[serde(rename = "w")]
    pub width: u32,
    #[serde(rename = "h")]
    pub height: u32,
    pub counts: Vec<u32>,
}

impl RleMask {
    /// Checks the codec invariants: positive dims, counts summing to the
    /// pixel count, and no zero-length run other than a leading one.
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Format(format!(
                "rle dimensions must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        let total: u64 = self.counts.iter().map(|&c| c as u64).sum();
        let expected = self.width as u64 * self.height as u64;
        if total != expected {
            return Err(Error::Format(format!(
                "rle counts sum to {total}, expected {expected} for {}x{}",
                self.width, self.height
            )));
        }
        if let Some(i) = self.counts.iter().skip(1).position(|&c| c == 0) {
            return Err(Error::Format(format!("zero-length run at index {}", i + 1)));
        }
        Ok(())
    }

    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }
}

pub fn rle_encode(mask: &Mask) -> RleMask {
    let (w, h) = mask.dims();
    let mut counts = Vec::new();
    let mut current = false;
    let mut run: u32 = 0;
    for y in 0..h {
        let row = mask.row(y);
        let mut x = 0;
        while x < w {
            let next = next_change(row, x, w, current);
            run += (next - x) as u32;
            x = next;
            if x < w {
                counts.push(run);
                run = 0;
                current = !current;
            }
        }
    }
    counts.push(run);
    RleMask {
        width: w as u32,
        height: h as u32,
        counts,
    }
}

/// First column at or after `x` whose bit differs from `value`, or `w`.
fn next_change(row: &[u64], x: usize, w: usize, value: bool) -> usize {
    let mut i = x / 64;
    let mut word = if value { !row[i] } else { row[i] };
    word &= u64::MAX << (x % 64);
    loop {
        if word != 0 {
            return (i * 64 + word.trailing_zeros() as usize).min(w);
        }
        i += 1;
        if i >= row.len() {
            return w;
        }
        word = if value { !row[i] } else { row[i] };
    }
}

pub fn rle_decode(rle: &RleMask) -> Result<Mask> {
    rle.validate()?;
    let (w, h) = (rle.width as usize, rle.height as usize);
    let mut mask = Mask::new(w, h)?;
    let mut pos = 0usize;
    for (i, &c) in rle.counts.iter().enumerate() {
        let end = pos + c as usize;
        if i % 2 == 1 {
            let mut p = pos;
            while p < end {
                let (y, x) = (p / w, p % w);
                let stop = (end - y * w).min(w);
                set_range(mask.row_mut(y), x, stop);
                p = y * w + stop;
            }
        }
        pos = end;
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_encodings() {
        let zero = Mask::new(2, 2).unwrap();
        assert_eq!(rle_encode(&zero).counts, vec![4]);
        let ones = Mask::from_fn(2, 2, |_, _| true).unwrap();
        assert_eq!(rle_encode(&ones).counts, vec![0, 4]);
        let pattern = Mask::from_gray(4, 1, &[0, 255, 255, 0]).unwrap();
        assert_eq!(rle_encode(&pattern).counts, vec![1, 2, 1]);
    }

    #[test]
    fn runs_continue_across_rows() {
        let m = Mask::from_fn(3, 2, |x, y| (y == 0 && x == 2) || (y == 1 && x == 0)).unwrap();
        assert_eq!(rle_encode(&m).counts, vec![2, 2, 2]);
    }

    #[test]
    fn decode_rejects_bad_sums_and_zero_runs() {
        let bad = RleMask { width: 2, height: 2, counts: vec![1, 2] };
        assert!(matches!(rle_decode(&bad), Err(Error::Format(_))));
        let zero_run = RleMask { width: 2, height: 2, counts: vec![1, 0, 3] };
        assert!(matches!(rle_decode(&zero_run), Err(Error::Format(_))));
        let leading = RleMask { width: 2, height: 2, counts: vec![0, 1, 3] };
        assert!(rle_decode(&leading).unwrap().get(0, 0));
    }

    #[test]
    fn json_shape() {
        let m = Mask::from_gray(4, 1, &[0, 255, 255, 0]).unwrap();
        let json = serde_json::to_string(&rle_encode(&m)).unwrap();
        assert_eq!(json, r#"{"w":4,"h":1,"counts":[1,2,1]}"#);
    }

    proptest! {
        #[test]
        fn roundtrip(w in 1usize..=64, h in 1usize..=64, density in 0u8..=255, seed: u64) {
            let mut s = seed | 1;
            let m = Mask::from_fn(w, h, |_, _| {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                (s & 0xff) < density as u64
            }).unwrap();
            let rle = rle_encode(&m);
            prop_assert!(rle.validate().is_ok());
            prop_assert_eq!(rle.area(), m.count_ones() as u64);
            prop_assert_eq!(rle_decode(&rle).unwrap(), m);
        }
    }
}
