//! Single-file NIfTI-1 reader/writer.
//!
//! Reading accepts uint8/int16/uint16/int32/float32/float64 payloads with
//! `scl_slope`/`scl_inter` applied, little-endian only, and rejects headers
//! whose orientation is not axis-aligned (diagonal sform, or identity
//! qform rotation): dims come from `dim[1..3]` and spacing from
//! `pixdim[1..3]`, so obliquely stored data would be silently misread.
//! Writing always emits float32 with a diagonal sform; `.nii.gz` output is
//! gzip-compressed deterministically.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{MafError, Result};
use crate::volume::{Dims3, Volume3};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;
const DT_UINT16: i16 = 512;

fn i16_at(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn i32_at(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn f32_at(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

/// Read a `.nii` or `.nii.gz` volume (gzip auto-detected from content).
pub fn read(path: &Path) -> Result<Volume3> {
    let raw = std::fs::read(path).map_err(|e| MafError::io(path, e))?;
    let bytes = if is_gzip(&raw) {
        let mut decoder = GzDecoder::new(raw.as_slice());
        let mut out = Vec::new();
        decoder
            .read_to_end(&mut out)
            .map_err(|e| MafError::format(path, format!("gzip decompression failed: {e}")))?;
        out
    } else {
        raw
    };
    parse(&bytes, path)
}

/// Parse an uncompressed NIfTI-1 byte stream.
pub fn parse(bytes: &[u8], path: &Path) -> Result<Volume3> {
    let err = |reason: String| MafError::format(path, reason);

    if bytes.len() < HEADER_SIZE {
        return Err(err(format!(
            "file is {} bytes, smaller than the {HEADER_SIZE}-byte NIfTI-1 header",
            bytes.len()
        )));
    }
    let sizeof_hdr = i32_at(bytes, 0);
    if sizeof_hdr != HEADER_SIZE as i32 {
        if sizeof_hdr.swap_bytes() == HEADER_SIZE as i32 {
            return Err(err("big-endian NIfTI files are not supported".into()));
        }
        return Err(err(format!(
            "sizeof_hdr is {sizeof_hdr}, expected {HEADER_SIZE}; not a NIfTI-1 file"
        )));
    }
    let magic = &bytes[344..348];
    if magic == b"ni1\0" {
        return Err(err(
            "two-file NIfTI (.hdr/.img pairs) is not supported; use single-file .nii".into(),
        ));
    }
    if magic != b"n+1\0" {
        return Err(err(format!(
            "bad magic {:?}, expected \"n+1\\0\"",
            String::from_utf8_lossy(magic)
        )));
    }

    let ndim = i16_at(bytes, 40);
    if !(1..=7).contains(&ndim) {
        return Err(err(format!("dim[0] = {ndim} out of range 1..=7")));
    }
    let mut dim = [1usize; 7];
    for (i, d) in dim.iter_mut().enumerate().take(ndim as usize) {
        let v = i16_at(bytes, 42 + i * 2);
        if v < 1 {
            return Err(err(format!("dim[{}] = {v} must be >= 1", i + 1)));
        }
        *d = v as usize;
    }
    if ndim < 3 {
        return Err(err(format!("volume is {ndim}D, expected 3D")));
    }
    if dim[3..].iter().any(|&d| d != 1) {
        return Err(err(format!(
            "volume has trailing dims {:?}; only 3D volumes are supported",
            &dim[3..ndim as usize]
        )));
    }
    let dims = Dims3::new(dim[0], dim[1], dim[2]);

    let mut spacing = [1.0f32; 3];
    for (i, s) in spacing.iter_mut().enumerate() {
        let p = f32_at(bytes, 76 + (i + 1) * 4);
        // Sloppy headers store 0 here; fall back to unit spacing.
        *s = if p.is_finite() && p > 0.0 { p } else { 1.0 };
    }

    check_axis_aligned(bytes, path)?;

    let datatype = i16_at(bytes, 70);
    let elem = match datatype {
        DT_UINT8 => 1,
        DT_INT16 | DT_UINT16 => 2,
        DT_INT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => {
            return Err(err(format!(
                "unsupported NIfTI datatype code {other} (supported: uint8, int16, uint16, int32, float32, float64)"
            )))
        }
    };

    let vox_offset = f32_at(bytes, 108);
    if !vox_offset.is_finite() || vox_offset < HEADER_SIZE as f32 {
        return Err(err(format!("invalid vox_offset {vox_offset}")));
    }
    let data_start = vox_offset as usize;
    let n = dims.voxel_count();
    let needed = data_start + n * elem;
    if bytes.len() < needed {
        return Err(err(format!(
            "file is {} bytes but {needed} are needed for {} voxels of {elem} bytes at offset {data_start}",
            bytes.len(),
            n
        )));
    }

    let slope_raw = f32_at(bytes, 112);
    let inter = f32_at(bytes, 116);
    let slope = if slope_raw == 0.0 || !slope_raw.is_finite() {
        1.0
    } else {
        slope_raw
    };
    let rescale = |v: f64| -> f32 { (v * slope as f64 + inter as f64) as f32 };

    let payload = &bytes[data_start..needed];
    let mut data = Vec::with_capacity(n);
    match datatype {
        DT_UINT8 => data.extend(payload.iter().map(|&b| rescale(b as f64))),
        DT_INT16 => data.extend(
            payload
                .chunks_exact(2)
                .map(|c| rescale(i16::from_le_bytes([c[0], c[1]]) as f64)),
        ),
        DT_UINT16 => data.extend(
            payload
                .chunks_exact(2)
                .map(|c| rescale(u16::from_le_bytes([c[0], c[1]]) as f64)),
        ),
        DT_INT32 => data.extend(
            payload
                .chunks_exact(4)
                .map(|c| rescale(i32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)),
        ),
        DT_FLOAT32 => data.extend(
            payload
                .chunks_exact(4)
                .map(|c| rescale(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)),
        ),
        DT_FLOAT64 => data.extend(payload.chunks_exact(8).map(|c| {
            rescale(f64::from_le_bytes([
                c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7],
            ]))
        })),
        _ => unreachable!("datatype validated above"),
    }

    if data.iter().any(|x| !x.is_finite()) {
        let validity: Vec<bool> = data.iter().map(|x| x.is_finite()).collect();
        for x in &mut data {
            if !x.is_finite() {
                *x = 0.0;
            }
        }
        return Volume3::with_validity(dims, spacing, data, validity);
    }
    Volume3::new(dims, spacing, data)
}

/// Reject orientations this reader would misinterpret: the sform's 3x3 part
/// must be diagonal, or (without an sform) the qform rotation must be the
/// identity.
fn check_axis_aligned(bytes: &[u8], path: &Path) -> Result<()> {
    let sform_code = i16_at(bytes, 254);
    if sform_code > 0 {
        let mut mat = [[0.0f32; 3]; 3];
        for (r, row) in mat.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = f32_at(bytes, 280 + r * 16 + c * 4);
            }
        }
        let scale = mat
            .iter()
            .flatten()
            .fold(0.0f32, |a, &v| a.max(v.abs()))
            .max(f32::MIN_POSITIVE);
        for (r, row) in mat.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if r != c && v.abs() > 1e-3 * scale {
                    return Err(MafError::format(
                        path,
                        format!(
                            "orientation is not axis-aligned (sform[{r}][{c}] = {v}); \
                             resample the volume to an axis-aligned grid first"
                        ),
                    ));
                }
            }
        }
        return Ok(());
    }
    let qform_code = i16_at(bytes, 252);
    if qform_code > 0 {
        let b = f32_at(bytes, 256);
        let c = f32_at(bytes, 260);
        let d = f32_at(bytes, 264);
        if b.abs() > 1e-3 || c.abs() > 1e-3 || d.abs() > 1e-3 {
            return Err(MafError::format(
                path,
                format!(
                    "orientation is not axis-aligned (qform quaternion b={b} c={c} d={d}); \
                     resample the volume to an axis-aligned grid first"
                ),
            ));
        }
    }
    Ok(())
}

/// Serialize a volume as an uncompressed NIfTI-1 byte stream (float32).
pub fn encode(v: &Volume3) -> Vec<u8> {
    let dims = v.dims();
    let spacing = v.spacing();
    let mut header = [0u8; HEADER_SIZE];

    header[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    let dim: [i16; 8] = [3, dims.w as i16, dims.h as i16, dims.d as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        header[40 + i * 2..42 + i * 2].copy_from_slice(&d.to_le_bytes());
    }
    header[70..72].copy_from_slice(&DT_FLOAT32.to_le_bytes());
    header[72..74].copy_from_slice(&32i16.to_le_bytes());
    let pixdim: [f32; 8] = [1.0, spacing[0], spacing[1], spacing[2], 1.0, 1.0, 1.0, 1.0];
    for (i, p) in pixdim.iter().enumerate() {
        header[76 + i * 4..80 + i * 4].copy_from_slice(&p.to_le_bytes());
    }
    header[108..112].copy_from_slice(&(VOX_OFFSET as f32).to_le_bytes());
    header[112..116].copy_from_slice(&1.0f32.to_le_bytes());
    header[116..120].copy_from_slice(&0.0f32.to_le_bytes());
    // Diagonal sform carrying the spacing.
    header[254..256].copy_from_slice(&1i16.to_le_bytes());
    header[280..284].copy_from_slice(&spacing[0].to_le_bytes());
    header[300..304].copy_from_slice(&spacing[1].to_le_bytes());
    header[320..324].copy_from_slice(&spacing[2].to_le_bytes());
    header[344..348].copy_from_slice(b"n+1\0");

    let mut out = Vec::with_capacity(VOX_OFFSET + v.data().len() * 4);
    out.extend_from_slice(&header);
    out.extend_from_slice(&[0u8; VOX_OFFSET - HEADER_SIZE]);
    for &x in v.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

/// Write a volume as `.nii` (or gzip-compressed `.nii.gz`).
pub fn write(path: &Path, v: &Volume3, gz: bool) -> Result<()> {
    let encoded = encode(v);
    let bytes = if gz {
        let mut encoder = GzEncoder::new(Vec::new(), Compression::default());
        std::io::Write::write_all(&mut encoder, &encoded)
            .and_then(|_| encoder.finish())
            .map_err(|e| MafError::io(path, e))?
    } else {
        encoded
    };
    std::fs::write(path, bytes).map_err(|e| MafError::io(path, e))
}
