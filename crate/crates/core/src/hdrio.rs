//! PFM / 8-bit PNG frame I/O and bracket manifests.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;

/// Writes a little-endian color PFM. Rows are stored bottom to top.
pub fn write_pfm(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_pfm_to(frame, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_pfm_to(frame: &Frame, w: &mut impl Write) -> std::io::Result<()> {
    write!(w, "PF\n{} {}\n-1.0\n", frame.width(), frame.height())?;
    let row_len = frame.width() * 3;
    for row in frame.data().chunks_exact(row_len.max(1)).rev() {
        for v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn header_line(r: &mut impl BufRead, path: &Path) -> Result<String> {
    let mut line = String::new();
    let n = r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    if n == 0 {
        return Err(Error::format("PFM", path, "unexpected end of header"));
    }
    Ok(line.trim().to_string())
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_pfm_from(&mut BufReader::new(file), path)
}

pub fn read_pfm_from(r: &mut impl BufRead, path: &Path) -> Result<Frame> {
    match header_line(r, path)?.as_str() {
        "PF" => {}
        "Pf" => {
            return Err(Error::format(
                "PFM",
                path,
                "grayscale (Pf) files are not supported",
            ))
        }
        other => return Err(Error::format("PFM", path, format!("bad magic {other:?}"))),
    }
    let dims = header_line(r, path)?;
    let parsed: Vec<usize> = dims
        .split_whitespace()
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::format("PFM", path, format!("bad dimensions {dims:?}")))?;
    let [width, height] = parsed[..] else {
        return Err(Error::format(
            "PFM",
            path,
            format!("bad dimensions {dims:?}"),
        ));
    };
    let scale_line = header_line(r, path)?;
    let scale: f32 = scale_line
        .parse()
        .map_err(|_| Error::format("PFM", path, format!("bad scale {scale_line:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format("PFM", path, "scale must be finite and non-zero"));
    }
    let little_endian = scale < 0.0;

    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| Error::format("PFM", path, "dimensions overflow"))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() != count * 4 {
        return Err(Error::format(
            "PFM",
            path,
            format!(
                "payload has {} bytes, {width}x{height} RGB needs {}",
                bytes.len(),
                count * 4
            ),
        ));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| {
            let b = [b[0], b[1], b[2], b[3]];
            if little_endian {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    let row_len = width * 3;
    let mut data = Vec::with_capacity(count);
    for row in values.chunks_exact(row_len.max(1)).rev() {
        data.extend_from_slice(row);
    }
    Frame::new(width, height, data)
        .map_err(|e| Error::format("PFM", path, e.to_string()))
}

/// Maps [0, 1] to an 8-bit code, rounding half away from zero.
pub fn quantize_u8(v: f32) -> u8 {
    (v as f64 * 255.0).round() as u8
}

pub fn dequantize_u8(c: u8) -> f32 {
    c as f32 / 255.0
}

/// Writes an 8-bit RGB PNG. Values must already lie in [0, 1].
pub fn write_png8(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(v) = frame.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidValue(format!(
            "PNG value {v} outside [0, 1]; clip before writing"
        )));
    }
    let bytes: Vec<u8> = frame.data().iter().map(|&v| quantize_u8(v)).collect();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(
        BufWriter::new(file),
        frame.width() as u32,
        frame.height() as u32,
    );
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let to_err = |e: png::EncodingError| Error::format("PNG", path, e.to_string());
    let mut writer = enc.write_header().map_err(to_err)?;
    writer.write_image_data(&bytes).map_err(to_err)?;
    writer.finish().map_err(to_err)
}

pub fn read_png8(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let to_err = |e: png::DecodingError| Error::format("PNG", path, e.to_string());
    let mut reader = decoder.read_info().map_err(to_err)?;
    let info = reader.info();
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(
            "PNG",
            path,
            format!(
                "expected 8-bit RGB, got {:?} at {:?}",
                info.color_type, info.bit_depth
            ),
        ));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(w * h * 3)];
    let out = reader.next_frame(&mut buf).map_err(to_err)?;
    let data = buf[..out.buffer_size()]
        .iter()
        .map(|&c| dequantize_u8(c))
        .collect();
    Frame::new(w, h, data)
}

/// CRF parameters as stored in a manifest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifestCrf {
    pub n: f64,
    pub sigma: f64,
}

/// Describes a set of per-exposure frame sequences on disk.
///
/// `paths[k][i]` is frame `i` of exposure `k`, relative to the manifest's directory
/// unless absolute. `frame_exposures`, when present, holds a per-frame exposure for
/// single-stream SDR videos produced with a time-varying exposure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BracketManifest {
    pub exposures: Vec<f64>,
    pub ev_spacing: f64,
    pub paths: Vec<Vec<String>>,
    #[serde(default)]
    pub crf: Option<ManifestCrf>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_exposures: Option<Vec<f64>>,
}

impl BracketManifest {
    pub fn validate(&self) -> Result<()> {
        if self.exposures.is_empty() {
            return Err(Error::InvalidValue("manifest has no exposures".into()));
        }
        if let Some(e) = self.exposures.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return Err(Error::InvalidValue(format!(
                "exposure {e} must be positive and finite"
            )));
        }
        if self.paths.len() != self.exposures.len() {
            return Err(Error::Shape(format!(
                "{} exposures but {} path lists",
                self.exposures.len(),
                self.paths.len()
            )));
        }
        let frames = self.paths[0].len();
        if frames == 0 || self.paths.iter().any(|p| p.len() != frames) {
            return Err(Error::Shape(
                "every exposure needs the same, non-zero number of frames".into(),
            ));
        }
        if let Some(fe) = &self.frame_exposures {
            if fe.len() != frames || fe.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
                return Err(Error::InvalidValue(
                    "frame_exposures must hold one positive value per frame".into(),
                ));
            }
        }
        if !self.ev_spacing.is_finite() || self.ev_spacing < 0.0 {
            return Err(Error::InvalidValue(format!(
                "ev_spacing {} must be finite and non-negative",
                self.ev_spacing
            )));
        }
        Ok(())
    }

    /// Sorts exposures (and their path lists) ascending.
    pub fn normalize(&mut self) {
        let mut order: Vec<usize> = (0..self.exposures.len()).collect();
        order.sort_by(|&a, &b| self.exposures[a].total_cmp(&self.exposures[b]));
        self.exposures = order.iter().map(|&i| self.exposures[i]).collect();
        self.paths = order.iter().map(|&i| self.paths[i].clone()).collect();
    }

    /// True when consecutive exposures differ by exactly `2^ev_spacing`
    /// (relative tolerance `rel_tol`).
    pub fn ladder_is_consistent(&self, rel_tol: f64) -> bool {
        let ratio = self.ev_spacing.exp2();
        self.exposures
            .windows(2)
            .all(|w| ((w[1] / w[0]) / ratio - 1.0).abs() <= rel_tol)
    }

    /// Resolves `paths[k][i]` against the manifest location.
    pub fn resolve(&self, manifest_path: &Path, k: usize, i: usize) -> PathBuf {
        let p = Path::new(&self.paths[k][i]);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            manifest_path
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join(p)
        }
    }
}

pub fn write_manifest(manifest: &BracketManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    manifest.validate()?;
    let mut m = manifest.clone();
    m.normalize();
    let mut text = serde_json::to_string_pretty(&m)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<BracketManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: BracketManifest = serde_json::from_str(&text)
        .map_err(|e| Error::format("manifest", path, e.to_string()))?;
    m.validate()?;
    Ok(m)
}

/// Sorted list of files in `dir` with the given extension.
pub fn list_frames(dir: impl AsRef<Path>, extension: &str) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case(extension))
        {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn roundtrip(frame: &Frame) -> Frame {
        let mut bytes = Vec::new();
        write_pfm_to(frame, &mut bytes).unwrap();
        read_pfm_from(&mut Cursor::new(bytes), Path::new("mem.pfm")).unwrap()
    }

    #[test]
    fn pfm_single_pixel_roundtrip() {
        let f = Frame::new(1, 1, vec![0.25, 0.5, 0.75]).unwrap();
        assert_eq!(roundtrip(&f), f);
    }

    #[test]
    fn pfm_header_and_row_order() {
        let f = Frame::from_fn(2, 2, |x, y| [x as f32, y as f32, 0.0]);
        let mut bytes = Vec::new();
        write_pfm_to(&f, &mut bytes).unwrap();
        assert!(bytes.starts_with(b"PF\n2 2\n-1.0\n"));
        // first stored row is the bottom one (y = 1)
        let first = f32::from_le_bytes(bytes[12 + 4..12 + 8].try_into().unwrap());
        assert_eq!(first, 1.0);
    }

    #[test]
    fn pfm_big_endian_parse() {
        let mut bytes = b"PF\n1 1\n1.0\n".to_vec();
        for v in [1.5f32, -2.0, 3.25] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        let f = read_pfm_from(&mut Cursor::new(bytes), Path::new("be.pfm")).unwrap();
        assert_eq!(f.data(), &[1.5, -2.0, 3.25]);
    }

    #[test]
    fn pfm_little_endian_parse() {
        let mut bytes = b"PF\n1 1\n-1.0\n".to_vec();
        for v in [1.5f32, -2.0, 3.25] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let f = read_pfm_from(&mut Cursor::new(bytes), Path::new("le.pfm")).unwrap();
        assert_eq!(f.data(), &[1.5, -2.0, 3.25]);
    }

    #[test]
    fn pfm_errors() {
        let bad = |bytes: Vec<u8>| read_pfm_from(&mut Cursor::new(bytes), Path::new("x")).is_err();
        // truncated payload
        let mut t = b"PF\n2 2\n-1.0\n".to_vec();
        t.extend_from_slice(&[0u8; 4 * 11]);
        assert!(bad(t));
        // too much payload
        let mut t = b"PF\n1 1\n-1.0\n".to_vec();
        t.extend_from_slice(&[0u8; 16]);
        assert!(bad(t));
        // grayscale
        let mut g = b"Pf\n1 1\n-1.0\n".to_vec();
        g.extend_from_slice(&[0u8; 4]);
        assert!(bad(g));
        assert!(bad(b"P6\n1 1\n255\n".to_vec()));
        assert!(bad(b"PF\n1\n-1.0\n".to_vec()));
        assert!(bad(b"PF\n1 1\nabc\n".to_vec()));
    }

    #[test]
    fn png_codes() {
        assert_eq!(quantize_u8(0.0), 0);
        assert_eq!(quantize_u8(1.0), 255);
        assert_eq!(quantize_u8(0.5), 128);
        assert!((dequantize_u8(128) - 0.501_960_8).abs() < 1e-6);
    }

    #[test]
    fn png_file_roundtrip_and_range_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.png");
        let f = Frame::new(2, 1, vec![0.0, 0.5, 1.0, 0.2, 0.4, 0.6]).unwrap();
        write_png8(&f, &p).unwrap();
        let g = read_png8(&p).unwrap();
        assert_eq!(g.data()[0], 0.0);
        assert_eq!(g.data()[1], 128.0 / 255.0);
        assert_eq!(g.data()[2], 1.0);
        // decoded values requantize to themselves
        write_png8(&g, &p).unwrap();
        assert_eq!(read_png8(&p).unwrap(), g);

        let bad = Frame::new(1, 1, vec![1.2, 0.0, 0.0]).unwrap();
        assert!(write_png8(&bad, &p).is_err());
    }

    fn manifest() -> BracketManifest {
        BracketManifest {
            exposures: vec![0.32, 0.00125, 0.02],
            ev_spacing: 4.0,
            paths: vec![
                vec!["plus/0.pfm".into()],
                vec!["minus/0.pfm".into()],
                vec!["base/0.pfm".into()],
            ],
            crf: Some(ManifestCrf { n: 0.9, sigma: 0.6 }),
            seed: Some(7),
            frame_exposures: None,
        }
    }

    #[test]
    fn manifest_roundtrip_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let m = manifest();
        write_manifest(&m, &p).unwrap();
        let back = read_manifest(&p).unwrap();
        assert_eq!(back.exposures, vec![0.00125, 0.02, 0.32]);
        assert_eq!(back.paths[0][0], "minus/0.pfm");
        assert_eq!(back.paths[2][0], "plus/0.pfm");
        assert!(back.ladder_is_consistent(1e-12));
        let mut sorted = m.clone();
        sorted.normalize();
        assert_eq!(back, sorted);

        let text = std::fs::read_to_string(&p).unwrap();
        let order: Vec<usize> = ["\"exposures\"", "\"ev_spacing\"", "\"paths\"", "\"crf\"", "\"seed\""]
            .iter()
            .map(|k| text.find(k).unwrap())
            .collect();
        assert!(order.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let mut m = manifest();
        m.exposures[0] = -1.0;
        assert!(write_manifest(&m, &p).is_err());

        std::fs::write(&p, r#"{"exposures":[1.0],"ev_spacing":4.0}"#).unwrap();
        assert!(read_manifest(&p).is_err());
        std::fs::write(&p, r#"{"exposures":[-1.0],"ev_spacing":4.0,"paths":[["a"]]}"#).unwrap();
        assert!(read_manifest(&p).is_err());
        std::fs::write(&p, r#"{"exposures":[1.0],"ev_spacing":4.0,"paths":[["a"]]}"#).unwrap();
        assert!(read_manifest(&p).is_ok());
    }

    proptest::proptest! {
        #[test]
        fn pfm_roundtrip_is_bit_exact(bits in proptest::collection::vec(proptest::num::u32::ANY, 1..64)) {
            // any finite f32, denormals included
            let vals: Vec<f32> = bits.iter().map(|&b| f32::from_bits(b)).map(|v| if v.is_finite() { v } else { 0.0 }).collect();
            let n = vals.len();
            let mut data = vals.clone();
            data.extend(vals.iter().rev());
            data.extend(vals.iter());
            let f = Frame::new(n, 1, data).unwrap();
            let back = roundtrip(&f);
            let same = back.data().iter().zip(f.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            proptest::prop_assert!(same);
        }

        #[test]
        fn quantization_idempotent(x in 0.0f32..=1.0) {
            let q = quantize_u8(x);
            proptest::prop_assert_eq!(quantize_u8(dequantize_u8(q)), q);
        }
    }
}
