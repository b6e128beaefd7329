//! The S3MF feature file format.
//!
//! ```text
//! offset size field
//!      0    4 magic "S3MF"
//!      4    2 version (u16 LE) = 1
//!      6    1 dtype (u8) = 0, f32 little-endian
//!      7    1 reserved (u8) = 0
//!      8    8 rows (u64 LE)
//!     16    4 cols (u32 LE)
//!     20    4 frame shift numerator (u32 LE)
//!     24    4 frame shift denominator (u32 LE)
//!     28    . rows * cols f32 LE, row-major
//! ```
//!
//! The frame shift in seconds is `numerator / denominator`.

use std::fs;
use std::path::Path;

use crate::error::{ProbeError, Result};

pub const S3MF_MAGIC: [u8; 4] = *b"S3MF";
pub const S3MF_VERSION: u16 = 1;
pub const S3MF_HEADER_LEN: usize = 28;
const DTYPE_F32_LE: u8 = 0;

/// Time between consecutive frames as an exact rational number of seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameShift {
    pub numerator: u32,
    pub denominator: u32,
}

impl FrameShift {
    pub fn new(numerator: u32, denominator: u32) -> Result<Self> {
        if numerator == 0 || denominator == 0 {
            return Err(ProbeError::Data(format!(
                "frame shift {numerator}/{denominator} must be positive"
            )));
        }
        Ok(FrameShift {
            numerator,
            denominator,
        })
    }

    /// Converts a shift in seconds to a reduced fraction with microsecond resolution.
    pub fn from_secs(secs: f64) -> Result<Self> {
        if !(secs.is_finite() && secs > 0.0) {
            return Err(ProbeError::Data(format!(
                "frame shift {secs} must be positive"
            )));
        }
        let micros = (secs * 1e6).round();
        if micros < 1.0 || micros > f64::from(u32::MAX) {
            return Err(ProbeError::Data(format!(
                "frame shift {secs} s not representable at microsecond resolution"
            )));
        }
        let num = micros as u64;
        let den = 1_000_000u64;
        let g = gcd(num, den);
        FrameShift::new((num / g) as u32, (den / g) as u32)
    }

    pub fn secs(&self) -> f64 {
        f64::from(self.numerator) / f64::from(self.denominator)
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// A `T x D` matrix of frame vectors for one utterance and layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub utterance_id: String,
    pub layer: u32,
    frame_shift: FrameShift,
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl FeatureSequence {
    /// Builds a sequence from row-major data, checking shape and finiteness.
    pub fn new(
        utterance_id: impl Into<String>,
        layer: u32,
        frame_shift: FrameShift,
        rows: usize,
        cols: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(ProbeError::Data(format!(
                "feature matrix must be non-empty, got {rows}x{cols}"
            )));
        }
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(ProbeError::Data(format!(
                "{} values do not fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(ProbeError::Data(format!(
                "non-finite value at row {}, col {}",
                i / cols,
                i % cols
            )));
        }
        Ok(FeatureSequence {
            utterance_id: utterance_id.into(),
            layer,
            frame_shift,
            rows,
            cols,
            data,
        })
    }

    /// Builds a sequence from a list of equal-length frames.
    pub fn from_frames(
        utterance_id: impl Into<String>,
        layer: u32,
        frame_shift: FrameShift,
        frames: &[Vec<f32>],
    ) -> Result<Self> {
        let cols = frames.first().map_or(0, Vec::len);
        if frames.iter().any(|f| f.len() != cols) {
            return Err(ProbeError::Data("frames have unequal lengths".into()));
        }
        let data = frames.iter().flatten().copied().collect();
        FeatureSequence::new(utterance_id, layer, frame_shift, frames.len(), cols, data)
    }

    pub fn num_frames(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.cols
    }

    pub fn frame_shift(&self) -> FrameShift {
        self.frame_shift
    }

    pub fn frame_shift_secs(&self) -> f64 {
        self.frame_shift.secs()
    }

    /// Duration covered by the frames, `T * shift`.
    pub fn duration_secs(&self) -> f64 {
        self.rows as f64 * self.frame_shift_secs()
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Returns a copy with the given utterance id and layer.
    pub fn with_identity(mut self, utterance_id: impl Into<String>, layer: u32) -> Self {
        self.utterance_id = utterance_id.into();
        self.layer = layer;
        self
    }
}

/// Serializes a sequence into S3MF bytes.
pub fn encode_feature_bytes(features: &FeatureSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(S3MF_HEADER_LEN + features.data.len() * 4);
    out.extend_from_slice(&S3MF_MAGIC);
    out.extend_from_slice(&S3MF_VERSION.to_le_bytes());
    out.push(DTYPE_F32_LE);
    out.push(0);
    out.extend_from_slice(&(features.rows as u64).to_le_bytes());
    out.extend_from_slice(&(features.cols as u32).to_le_bytes());
    out.extend_from_slice(&features.frame_shift.numerator.to_le_bytes());
    out.extend_from_slice(&features.frame_shift.denominator.to_le_bytes());
    for v in &features.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes(b.try_into().expect("4 bytes"))
}

/// Shape and frame shift from an S3MF header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureHeader {
    pub rows: usize,
    pub cols: usize,
    pub frame_shift: FrameShift,
}

impl FeatureHeader {
    /// Payload size in bytes.
    pub fn payload_len(&self) -> usize {
        self.rows * self.cols * 4
    }
}

/// Parses the 28-byte header at the start of `bytes`.
pub fn decode_feature_header(bytes: &[u8]) -> Result<FeatureHeader> {
    if bytes.len() < 4 || bytes[..4] != S3MF_MAGIC {
        return Err(ProbeError::Format("missing S3MF magic".into()));
    }
    if bytes.len() < S3MF_HEADER_LEN {
        return Err(ProbeError::Truncated(format!(
            "header needs {S3MF_HEADER_LEN} bytes, file has {}",
            bytes.len()
        )));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != S3MF_VERSION {
        return Err(ProbeError::Format(format!(
            "unsupported S3MF version {version}"
        )));
    }
    if bytes[6] != DTYPE_F32_LE {
        return Err(ProbeError::Format(format!(
            "unsupported dtype code {}",
            bytes[6]
        )));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let cols = le_u32(&bytes[16..20]);
    let frame_shift = FrameShift::new(le_u32(&bytes[20..24]), le_u32(&bytes[24..28]))
        .map_err(|e| ProbeError::Format(e.to_string()))?;
    if rows == 0 || cols == 0 {
        return Err(ProbeError::Format(format!(
            "empty matrix {rows}x{cols} in header"
        )));
    }
    let rows = usize::try_from(rows)
        .ok()
        .filter(|r| {
            r.checked_mul(cols as usize)
                .and_then(|n| n.checked_mul(4))
                .is_some()
        })
        .ok_or_else(|| ProbeError::Format(format!("header shape {rows}x{cols} overflows")))?;
    Ok(FeatureHeader {
        rows,
        cols: cols as usize,
        frame_shift,
    })
}

/// Parses S3MF bytes. The returned sequence has an empty utterance id and layer 0.
pub fn decode_feature_bytes(bytes: &[u8]) -> Result<FeatureSequence> {
    let header = decode_feature_header(bytes)?;
    let expected = header.payload_len();
    let payload = &bytes[S3MF_HEADER_LEN..];
    if payload.len() != expected {
        return Err(ProbeError::Truncated(format!(
            "header declares {}x{} ({expected} payload bytes), found {}",
            header.rows,
            header.cols,
            payload.len()
        )));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    FeatureSequence::new(
        String::new(),
        0,
        header.frame_shift,
        header.rows,
        header.cols,
        data,
    )
}

/// Reads only the header of an S3MF file and checks the file size against it.
pub fn read_feature_header(path: impl AsRef<Path>) -> Result<FeatureHeader> {
    use std::io::Read;
    let path = path.as_ref();
    let mut file = fs::File::open(path).map_err(|e| ProbeError::io(path, e))?;
    let mut buf = Vec::with_capacity(S3MF_HEADER_LEN);
    file.by_ref()
        .take(S3MF_HEADER_LEN as u64)
        .read_to_end(&mut buf)
        .map_err(|e| ProbeError::io(path, e))?;
    let header = decode_feature_header(&buf)?;
    let len = file.metadata().map_err(|e| ProbeError::io(path, e))?.len();
    if len != (S3MF_HEADER_LEN + header.payload_len()) as u64 {
        return Err(ProbeError::Truncated(format!(
            "header declares {}x{}, file has {len} bytes",
            header.rows, header.cols
        )));
    }
    Ok(header)
}

pub fn write_feature_file(path: impl AsRef<Path>, features: &FeatureSequence) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_feature_bytes(features)).map_err(|e| ProbeError::io(path, e))
}

/// Reads an S3MF file. The utterance id is taken from the file stem.
pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| ProbeError::io(path, e))?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(decode_feature_bytes(&bytes)?.with_identity(stem, 0))
}
