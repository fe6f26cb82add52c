//! Mask and feature sources on disk.
//!
//! A mask source is either a directory of 8-bit grayscale `%05d.png` frames
//! or an RLE-JSON file holding an array of frame objects. Feature tensors are
//! JSON `{"n", "t", "d", "values"}` documents or `.npy` arrays of shape
//! `(n, t, d)`.

use std::fs;
use std::path::Path;

use gateseg_core::gating::FeatureTensor;
use gateseg_core::{rle_decode, rle_encode, Mask, MaskSequence, RleMask};
use image::{GrayImage, ImageFormat};

use crate::error::{HarnessError, Result};
use crate::manifest::Dims;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskFormat {
    PngDir,
    RleJson,
}

impl MaskFormat {
    /// `.json` files are RLE-JSON; anything else is a frame directory.
    pub fn infer(path: &Path) -> MaskFormat {
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json && !path.is_dir() {
            MaskFormat::RleJson
        } else {
            MaskFormat::PngDir
        }
    }
}

/// Loads a mask sequence and checks it against the expected frame size and
/// frame count when given.
pub fn load_mask_source(path: &Path, dims: Option<Dims>, frames: Option<usize>) -> Result<MaskSequence> {
    let masks = match MaskFormat::infer(path) {
        MaskFormat::PngDir => read_png_frames(path)?,
        MaskFormat::RleJson => read_rle_frames(path)?,
    };
    if let Some(t) = frames {
        if masks.len() != t {
            return Err(HarnessError::data(
                path,
                format!("expected {t} frames, found {}", masks.len()),
            ));
        }
    }
    let (w, h) = match dims {
        Some(d) => (d.width, d.height),
        None => masks[0].dims(),
    };
    for (i, m) in masks.iter().enumerate() {
        if m.dims() != (w, h) {
            return Err(HarnessError::data(
                path,
                format!("frame {i}: size {}x{} does not match expected {w}x{h}", m.width(), m.height()),
            ));
        }
    }
    MaskSequence::new(masks).map_err(|e| HarnessError::data(path, e.to_string()))
}

pub fn read_rle_frames(path: &Path) -> Result<Vec<Mask>> {
    let bytes = fs::read(path).map_err(HarnessError::io(path))?;
    let rles: Vec<RleMask> =
        serde_json::from_slice(&bytes).map_err(|e| HarnessError::data(path, format!("malformed RLE-JSON: {e}")))?;
    if rles.is_empty() {
        return Err(HarnessError::data(path, "RLE-JSON array holds no frames"));
    }
    rles.iter()
        .enumerate()
        .map(|(i, r)| rle_decode(r).map_err(|e| HarnessError::data(path, format!("frame {i}: {e}"))))
        .collect()
}

/// Frames sorted by numeric file stem; the stems must run 0, 1, 2, ...
pub fn read_png_frames(dir: &Path) -> Result<Vec<Mask>> {
    let entries = fs::read_dir(dir).map_err(HarnessError::io(dir))?;
    let mut indexed = Vec::new();
    for entry in entries {
        let path = entry.map_err(HarnessError::io(dir))?.path();
        if !path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let index: usize = stem
            .parse()
            .ok()
            .filter(|_| stem.bytes().all(|b| b.is_ascii_digit()))
            .ok_or_else(|| HarnessError::data(&path, "frame file name is not a zero-padded number"))?;
        indexed.push((index, path));
    }
    if indexed.is_empty() {
        return Err(HarnessError::data(dir, "no PNG frames found"));
    }
    indexed.sort();
    let mut frames = Vec::with_capacity(indexed.len());
    for (expected, (index, path)) in indexed.iter().enumerate() {
        if *index != expected {
            return Err(HarnessError::data(dir, format!("frame {expected} is missing (next file is {})", path.display())));
        }
        let img = image::open(path)
            .map_err(|e| HarnessError::data(path, format!("frame {index}: {e}")))?
            .into_luma8();
        let (w, h) = img.dimensions();
        let mask = Mask::from_gray(w as usize, h as usize, img.as_raw())
            .map_err(|e| HarnessError::data(path, format!("frame {index}: {e}")))?;
        frames.push(mask);
    }
    Ok(frames)
}

pub fn frame_file_name(index: usize) -> String {
    format!("{index:05}.png")
}

pub fn write_png_frames(seq: &MaskSequence, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    for (i, m) in seq.frames().iter().enumerate() {
        let path = dir.join(frame_file_name(i));
        let img = GrayImage::from_raw(m.width() as u32, m.height() as u32, m.to_gray())
            .expect("buffer sized from mask dims");
        img.save_with_format(&path, ImageFormat::Png)
            .map_err(|e| HarnessError::data(&path, e.to_string()))?;
    }
    Ok(())
}

pub fn write_rle_frames(seq: &MaskSequence, path: &Path) -> Result<()> {
    let rles: Vec<RleMask> = seq.frames().iter().map(rle_encode).collect();
    write_json(path, &rles)
}

pub fn write_mask_source(seq: &MaskSequence, path: &Path, format: MaskFormat) -> Result<()> {
    match format {
        MaskFormat::PngDir => write_png_frames(seq, path),
        MaskFormat::RleJson => write_rle_frames(seq, path),
    }
}

pub(crate) fn write_json<T: serde::Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(HarnessError::io(parent))?;
    }
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| HarnessError::data(path, e.to_string()))?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(HarnessError::io(path))
}

pub fn load_features(path: &Path) -> Result<FeatureTensor> {
    let bytes = fs::read(path).map_err(HarnessError::io(path))?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("npy")) {
        let (shape, values) = parse_npy(&bytes).map_err(|m| HarnessError::data(path, m))?;
        let [n, t, d] = shape[..] else {
            return Err(HarnessError::data(path, format!("expected a rank-3 array, got shape {shape:?}")));
        };
        FeatureTensor::new(n, t, d, values).map_err(|e| HarnessError::data(path, e.to_string()))
    } else {
        serde_json::from_slice(&bytes).map_err(|e| HarnessError::data(path, format!("malformed feature tensor: {e}")))
    }
}

const NPY_MAGIC: &[u8] = b"\x93NUMPY";

/// Little-endian `<f8`/`<f4` C-order arrays, format versions 1 to 3.
pub fn parse_npy(bytes: &[u8]) -> std::result::Result<(Vec<usize>, Vec<f64>), String> {
    if bytes.len() < 10 || !bytes.starts_with(NPY_MAGIC) {
        return Err("not an NPY file".into());
    }
    let major = bytes[6];
    let (header_len, header_start) = match major {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err("truncated NPY header".into());
            }
            (u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize, 12)
        }
        v => return Err(format!("unsupported NPY version {v}")),
    };
    let data_start = header_start + header_len;
    let header = bytes
        .get(header_start..data_start)
        .and_then(|h| std::str::from_utf8(h).ok())
        .ok_or("truncated NPY header")?;
    let descr = header_value(header, "descr").ok_or("NPY header lacks 'descr'")?;
    let width = match descr.trim_matches(|c| c == '\'' || c == '"') {
        "<f8" | "f8" => 8,
        "<f4" | "f4" => 4,
        other => return Err(format!("unsupported NPY dtype {other}")),
    };
    if header_value(header, "fortran_order").is_some_and(|v| v.trim() != "False") {
        return Err("Fortran-ordered NPY arrays are not supported".into());
    }
    let shape_src = header_value(header, "shape").ok_or("NPY header lacks 'shape'")?;
    let shape = shape_src
        .trim_matches(|c| c == '(' || c == ')')
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| format!("bad NPY shape {shape_src}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let count: usize = shape.iter().product();
    let data = &bytes[data_start..];
    if data.len() != count * width {
        return Err(format!("NPY payload holds {} bytes, shape {shape:?} needs {}", data.len(), count * width));
    }
    let values = if width == 8 {
        data.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    } else {
        data.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect()
    };
    Ok((shape, values))
}

/// Raw text of `'key': value` in an NPY header dict.
fn header_value<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    let start = header.find(&format!("'{key}'"))? + key.len() + 2;
    let rest = header[start..].trim_start().strip_prefix(':')?.trim_start();
    let end = if rest.starts_with('(') {
        rest.find(')')? + 1
    } else {
        rest.find([',', '}'])?
    };
    Some(rest[..end].trim())
}

pub fn write_npy(tensor: &FeatureTensor, path: &Path) -> Result<()> {
    let (n, t, d) = tensor.shape();
    let mut header = format!("{{'descr': '<f8', 'fortran_order': False, 'shape': ({n}, {t}, {d}), }}");
    let unpadded = NPY_MAGIC.len() + 4 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');
    let mut bytes = Vec::with_capacity(NPY_MAGIC.len() + 4 + header.len() + tensor.values().len() * 8);
    bytes.extend_from_slice(NPY_MAGIC);
    bytes.extend_from_slice(&[1, 0]);
    bytes.extend_from_slice(&(header.len() as u16).to_le_bytes());
    bytes.extend_from_slice(header.as_bytes());
    for v in tensor.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(HarnessError::io(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(w: usize, h: usize, phase: usize) -> Mask {
        Mask::from_fn(w, h, |x, y| (x + y + phase) % 3 == 0).unwrap()
    }

    #[test]
    fn format_inference() {
        assert_eq!(MaskFormat::infer(Path::new("a/b.json")), MaskFormat::RleJson);
        assert_eq!(MaskFormat::infer(Path::new("a/b.JSON")), MaskFormat::RleJson);
        assert_eq!(MaskFormat::infer(Path::new("a/frames")), MaskFormat::PngDir);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let seq = MaskSequence::new(vec![checker(7, 5, 0), checker(7, 5, 1), checker(7, 5, 2)]).unwrap();
        let frames = dir.path().join("frames");
        write_png_frames(&seq, &frames).unwrap();
        assert!(frames.join("00002.png").exists());
        assert_eq!(load_mask_source(&frames, None, Some(3)).unwrap(), seq);
    }

    #[test]
    fn frames_sort_numerically() {
        let dir = tempfile::tempdir().unwrap();
        let masks: Vec<Mask> = (0..12).map(|i| checker(4, 4, i)).collect();
        let seq = MaskSequence::new(masks).unwrap();
        write_png_frames(&seq, dir.path()).unwrap();
        // Unpadded names still sort by value, not lexically.
        fs::rename(dir.path().join("00010.png"), dir.path().join("10.png")).unwrap();
        fs::rename(dir.path().join("00002.png"), dir.path().join("2.png")).unwrap();
        assert_eq!(load_mask_source(dir.path(), None, None).unwrap(), seq);
    }

    #[test]
    fn gray_threshold_applies_to_png() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_raw(4, 1, vec![0, 127, 128, 255]).unwrap();
        img.save(dir.path().join("00000.png")).unwrap();
        let seq = load_mask_source(dir.path(), None, None).unwrap();
        let m = &seq.frames()[0];
        assert_eq!((0..4).map(|x| m.get(x, 0)).collect::<Vec<_>>(), vec![false, false, true, true]);
    }

    #[test]
    fn rle_bad_sum_names_frame() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        fs::write(&path, r#"[{"w":2,"h":2,"counts":[4]},{"w":2,"h":2,"counts":[1,2]}]"#).unwrap();
        let err = load_mask_source(&path, None, None).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("frame 1"), "{err}");
    }

    #[test]
    fn count_and_dims_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let seq = MaskSequence::empty(3, 2, 2).unwrap();
        write_rle_frames(&seq, &path).unwrap();
        assert!(load_mask_source(&path, None, Some(3)).unwrap_err().to_string().contains("expected 3 frames"));
        let err = load_mask_source(&path, Some(Dims { width: 4, height: 2 }), None).unwrap_err();
        assert!(err.to_string().contains("frame 0"), "{err}");
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_mask_source(dir.path(), None, None).unwrap_err();
        assert!(err.to_string().contains("no PNG frames"));
    }

    #[test]
    fn npy_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let values: Vec<f64> = (0..24).map(|i| i as f64 * 0.25 - 3.0).collect();
        let tensor = FeatureTensor::new(2, 3, 4, values).unwrap();
        let path = dir.path().join("f.npy");
        write_npy(&tensor, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((10 + header_len) % 64, 0);
        assert_eq!(load_features(&path).unwrap(), tensor);
    }

    #[test]
    fn npy_f4_and_rank_check() {
        let header = "{'descr': '<f4', 'fortran_order': False, 'shape': (1, 1, 2), }\n";
        let mut bytes = NPY_MAGIC.to_vec();
        bytes.extend_from_slice(&[1, 0]);
        bytes.extend_from_slice(&(header.len() as u16).to_le_bytes());
        bytes.extend_from_slice(header.as_bytes());
        bytes.extend_from_slice(&1.5f32.to_le_bytes());
        bytes.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(parse_npy(&bytes).unwrap(), (vec![1, 1, 2], vec![1.5, -2.0]));

        let bad = bytes.iter().copied().take(bytes.len() - 1).collect::<Vec<_>>();
        assert!(parse_npy(&bad).unwrap_err().contains("payload"));
        assert!(parse_npy(b"nonsense!!").is_err());
    }

    #[test]
    fn json_features() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.json");
        fs::write(&path, r#"{"n":1,"t":1,"d":2,"values":[0.5,1.0]}"#).unwrap();
        assert_eq!(load_features(&path).unwrap().values(), &[0.5, 1.0]);
        fs::write(&path, r#"{"n":1,"t":1,"d":3,"values":[0.5,1.0]}"#).unwrap();
        assert_eq!(load_features(&path).unwrap_err().exit_code(), 3);
    }
}
