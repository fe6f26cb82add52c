//! Binary masks and per-frame mask sequences.
//!
//! A [`Mask`] stores its pixels as a row-major bitset. Each row occupies a
//! whole number of 64-bit words (bit `x % 64` of word `x / 64` holds column
//! `x`); padding bits past the last column are always zero, so row kernels
//! can work a word at a time without edge special-casing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rle::{rle_decode, rle_encode, RleMask};

const WORD: usize = 64;

/// Grayscale values strictly above this map to foreground on ingestion.
pub const GRAY_THRESHOLD: u8 = 127;

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "RleMask", try_from = "RleMask")]
pub struct Mask {
    width: usize,
    height: usize,
    stride: usize,
    bits: Vec<u64>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Mask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("ones", &self.count_ones())
            .finish()
    }
}

impl Mask {
    /// All-zero mask. Both dimensions must be at least 1.
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Input(format!(
                "mask dimensions must be positive, got {width}x{height}"
            )));
        }
        let stride = width.div_ceil(WORD);
        Ok(Mask {
            width,
            height,
            stride,
            bits: vec![0; stride * height],
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut mask = Mask::new(width, height)?;
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    mask.set(x, y, true);
                }
            }
        }
        Ok(mask)
    }

    /// Builds a mask from row-major 8-bit grayscale samples; values above
    /// [`GRAY_THRESHOLD`] are foreground.
    pub fn from_gray(width: usize, height: usize, pixels: &[u8]) -> Result<Self> {
        let mut mask = Mask::new(width, height)?;
        if pixels.len() != width * height {
            return Err(Error::Input(format!(
                "expected {} grayscale samples for {width}x{height}, got {}",
                width * height,
                pixels.len()
            )));
        }
        for (y, row) in pixels.chunks_exact(width).enumerate() {
            let words = mask.row_mut(y);
            for (x, &v) in row.iter().enumerate() {
                if v > GRAY_THRESHOLD {
                    words[x / WORD] |= 1 << (x % WORD);
                }
            }
        }
        Ok(mask)
    }

    /// Row-major 8-bit rendering, 255 for foreground and 0 for background.
    pub fn to_gray(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(if self.get(x, y) { 255 } else { 0 });
            }
        }
        out
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        assert!(x < self.width && y < self.height, "pixel ({x}, {y}) out of bounds");
        self.bits[y * self.stride + x / WORD] >> (x % WORD) & 1 == 1
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        assert!(x < self.width && y < self.height, "pixel ({x}, {y}) out of bounds");
        let word = &mut self.bits[y * self.stride + x / WORD];
        if value {
            *word |= 1 << (x % WORD);
        } else {
            *word &= !(1 << (x % WORD));
        }
    }

    /// Sets columns `x0..x1` of row `y`, clipped to the image.
    pub fn fill_span(&mut self, y: usize, x0: usize, x1: usize) {
        let x1 = x1.min(self.width);
        if y >= self.height || x0 >= x1 {
            return;
        }
        set_range(self.row_mut(y), x0, x1);
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&w| w == 0)
    }

    pub fn intersection_count(&self, other: &Mask) -> Result<usize> {
        self.check_dims(other)?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum())
    }

    pub fn union_count(&self, other: &Mask) -> Result<usize> {
        self.check_dims(other)?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| (a | b).count_ones() as usize)
            .sum())
    }

    pub fn union_with(&mut self, other: &Mask) -> Result<()> {
        self.check_dims(other)?;
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
        Ok(())
    }

    /// Foreground coordinates in row-major order.
    pub fn ones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.height).flat_map(move |y| {
            self.row(y).iter().enumerate().flat_map(move |(i, &word)| {
                BitIter(word).map(move |b| (i * WORD + b, y))
            })
        })
    }

    /// Translates by `(dx, dy)`; pixels shifted out are dropped and vacated
    /// pixels are zero.
    pub fn shifted(&self, dx: isize, dy: isize) -> Mask {
        let mut out = Mask::new(self.width, self.height).expect("dims already valid");
        let mut scratch = vec![0u64; self.stride];
        for y in 0..self.height {
            let Some(src_y) = y.checked_add_signed(-dy).filter(|&sy| sy < self.height) else {
                continue;
            };
            let src = self.row(src_y);
            match dx.cmp(&0) {
                std::cmp::Ordering::Equal => scratch.copy_from_slice(src),
                std::cmp::Ordering::Greater => shift_up(src, dx as usize, &mut scratch),
                std::cmp::Ordering::Less => shift_down(src, dx.unsigned_abs(), &mut scratch),
            }
            let tail = self.tail_mask();
            let dst = out.row_mut(y);
            dst.copy_from_slice(&scratch);
            *dst.last_mut().unwrap() &= tail;
        }
        out
    }

    /// Iterated dilation by a 3×3 square structuring element.
    pub fn dilate_square(&self, iterations: usize) -> Mask {
        let mut cur = self.clone();
        for _ in 0..iterations {
            cur = cur.morph_step(true);
        }
        cur
    }

    /// Iterated erosion by a 3×3 square; pixels outside the image count as
    /// background.
    pub fn erode_square(&self, iterations: usize) -> Mask {
        let mut cur = self.clone();
        for _ in 0..iterations {
            cur = cur.morph_step(false);
        }
        cur
    }

    fn morph_step(&self, dilate: bool) -> Mask {
        let tail = self.tail_mask();
        let horizontal: Vec<u64> = (0..self.height)
            .flat_map(|y| {
                let row = self.row(y);
                let mut left = vec![0u64; self.stride];
                let mut right = vec![0u64; self.stride];
                shift_up(row, 1, &mut left);
                shift_down(row, 1, &mut right);
                let mut combined: Vec<u64> = row
                    .iter()
                    .zip(left.iter().zip(&right))
                    .map(|(&c, (&l, &r))| if dilate { c | l | r } else { c & l & r })
                    .collect();
                *combined.last_mut().unwrap() &= tail;
                combined
            })
            .collect();
        let mut out = Mask::new(self.width, self.height).expect("dims already valid");
        let s = self.stride;
        for y in 0..self.height {
            let dst = &mut out.bits[y * s..(y + 1) * s];
            dst.copy_from_slice(&horizontal[y * s..(y + 1) * s]);
            for ny in [y.checked_sub(1), Some(y + 1).filter(|&v| v < self.height)] {
                match ny {
                    Some(ny) => {
                        for (d, &h) in dst.iter_mut().zip(&horizontal[ny * s..(ny + 1) * s]) {
                            if dilate {
                                *d |= h;
                            } else {
                                *d &= h;
                            }
                        }
                    }
                    None if !dilate => dst.fill(0),
                    None => {}
                }
            }
        }
        out
    }

    pub(crate) fn check_dims(&self, other: &Mask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        Ok(())
    }

    pub(crate) fn stride(&self) -> usize {
        self.stride
    }

    pub(crate) fn row(&self, y: usize) -> &[u64] {
        &self.bits[y * self.stride..(y + 1) * self.stride]
    }

    pub(crate) fn row_mut(&mut self, y: usize) -> &mut [u64] {
        &mut self.bits[y * self.stride..(y + 1) * self.stride]
    }

    pub(crate) fn words(&self) -> &[u64] {
        &self.bits
    }

    /// Valid-bit mask for the last word of each row.
    pub(crate) fn tail_mask(&self) -> u64 {
        match self.width % WORD {
            0 => u64::MAX,
            r => (1u64 << r) - 1,
        }
    }
}

impl From<Mask> for RleMask {
    fn from(mask: Mask) -> Self {
        rle_encode(&mask)
    }
}

impl TryFrom<RleMask> for Mask {
    type Error = Error;

    fn try_from(rle: RleMask) -> Result<Self> {
        rle_decode(&rle)
    }
}

/// Iterator over set bit positions of a word, lowest first.
pub(crate) struct BitIter(pub(crate) u64);

impl Iterator for BitIter {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let b = self.0.trailing_zeros() as usize;
        self.0 &= self.0 - 1;
        Some(b)
    }
}

/// `dst[x] = src[x - s]`: moves content toward higher columns.
pub(crate) fn shift_up(src: &[u64], s: usize, dst: &mut [u64]) {
    let (ws, bs) = (s / WORD, s % WORD);
    for i in 0..dst.len() {
        let lo = i.checked_sub(ws).map_or(0, |j| src[j]);
        let carry = match i.checked_sub(ws + 1) {
            Some(j) if bs > 0 => src[j] >> (WORD - bs),
            _ => 0,
        };
        dst[i] = if bs > 0 { lo << bs | carry } else { lo };
    }
}

/// `dst[x] = src[x + s]`: moves content toward lower columns.
pub(crate) fn shift_down(src: &[u64], s: usize, dst: &mut [u64]) {
    let (ws, bs) = (s / WORD, s % WORD);
    let n = src.len();
    for i in 0..dst.len() {
        let hi = if i + ws < n { src[i + ws] } else { 0 };
        let carry = if bs > 0 && i + ws + 1 < n {
            src[i + ws + 1] << (WORD - bs)
        } else {
            0
        };
        dst[i] = if bs > 0 { hi >> bs | carry } else { hi };
    }
}

/// Sets bits `x0..x1` in a row of words.
pub(crate) fn set_range(row: &mut [u64], x0: usize, x1: usize) {
    if x0 >= x1 {
        return;
    }
    let (w0, w1) = (x0 / WORD, (x1 - 1) / WORD);
    let lo = u64::MAX << (x0 % WORD);
    let hi = u64::MAX >> (WORD - 1 - (x1 - 1) % WORD);
    if w0 == w1 {
        row[w0] |= lo & hi;
        return;
    }
    row[w0] |= lo;
    for w in &mut row[w0 + 1..w1] {
        *w = u64::MAX;
    }
    row[w1] |= hi;
}

/// Ordered frames sharing one width and height; holds at least one frame.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Mask>", into = "Vec<Mask>")]
pub struct MaskSequence {
    frames: Vec<Mask>,
}

impl MaskSequence {
    pub fn new(frames: Vec<Mask>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Input("mask sequence needs at least one frame".into()))?;
        for (t, frame) in frames.iter().enumerate().skip(1) {
            if frame.dims() != first.dims() {
                return Err(Error::DimensionMismatch {
                    expected: format!("{}x{}", first.width(), first.height()),
                    actual: format!("{}x{} at frame {t}", frame.width(), frame.height()),
                });
            }
        }
        Ok(MaskSequence { frames })
    }

    /// `len` all-zero frames.
    pub fn empty(width: usize, height: usize, len: usize) -> Result<Self> {
        let frame = Mask::new(width, height)?;
        MaskSequence::new(vec![frame; len])
    }

    /// All-zero sequence with the same extent as `self`.
    pub fn empty_like(&self) -> Self {
        let (w, h) = self.dims();
        MaskSequence::empty(w, h, self.len()).expect("extent already valid")
    }

    pub fn frames(&self) -> &[Mask] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Mask> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    /// Always false; sequences hold at least one frame.
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    pub(crate) fn check_shape(&self, other: &MaskSequence) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} frames", self.len()),
                actual: format!("{} frames", other.len()),
            });
        }
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        Ok(())
    }
}

impl TryFrom<Vec<Mask>> for MaskSequence {
    type Error = Error;

    fn try_from(frames: Vec<Mask>) -> Result<Self> {
        MaskSequence::new(frames)
    }
}

impl From<MaskSequence> for Vec<Mask> {
    fn from(seq: MaskSequence) -> Self {
        seq.frames
    }
}

/// Pixel-wise union of same-sized masks.
pub fn union_masks(masks: &[Mask]) -> Result<Mask> {
    let (first, rest) = masks
        .split_first()
        .ok_or_else(|| Error::Input("union of an empty mask list".into()))?;
    let mut out = first.clone();
    for m in rest {
        out.union_with(m)?;
    }
    Ok(out)
}

/// Frame-wise union of sequences with equal length and dimensions.
pub fn union_sequences(seqs: &[MaskSequence]) -> Result<MaskSequence> {
    let (first, rest) = seqs
        .split_first()
        .ok_or_else(|| Error::Input("union of an empty sequence list".into()))?;
    let mut frames = first.frames.clone();
    for seq in rest {
        first.check_shape(seq)?;
        for (acc, m) in frames.iter_mut().zip(&seq.frames) {
            acc.union_with(m)?;
        }
    }
    MaskSequence::new(frames)
}

/// True iff some frame of the sequence has a foreground pixel.
pub fn indicator(seq: &MaskSequence) -> bool {
    seq.frames.iter().any(|m| !m.is_empty())
}
