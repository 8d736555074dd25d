//! Raw volume container: little-endian float32 data plus a JSON sidecar.
//!
//! `<name>.rvol` holds `w*h*d` f32 values in x-fastest order;
//! `<name>.rvol.json` holds `{"dims": [w, h, d], "spacing": [sx, sy, sz]}`.
//! Writing then reading is byte-identical.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{MafError, Result};
use crate::volume::{Dims3, Volume3};

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    dims: [usize; 3],
    spacing: [f32; 3],
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn write(path: &Path, v: &Volume3) -> Result<()> {
    let mut bytes = Vec::with_capacity(v.data().len() * 4);
    for &x in v.data() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| MafError::io(path, e))?;

    let dims = v.dims();
    let sidecar = Sidecar {
        dims: [dims.w, dims.h, dims.d],
        spacing: v.spacing(),
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    let sc_path = sidecar_path(path);
    std::fs::write(&sc_path, json + "\n").map_err(|e| MafError::io(&sc_path, e))
}

pub fn read(path: &Path) -> Result<Volume3> {
    let sc_path = sidecar_path(path);
    let sc_text = std::fs::read_to_string(&sc_path).map_err(|e| MafError::io(&sc_path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&sc_text)
        .map_err(|e| MafError::format(&sc_path, format!("invalid sidecar JSON: {e}")))?;
    let dims = Dims3::new(sidecar.dims[0], sidecar.dims[1], sidecar.dims[2]);

    let bytes = std::fs::read(path).map_err(|e| MafError::io(path, e))?;
    let expected = dims.voxel_count() * 4;
    if bytes.len() != expected {
        return Err(MafError::format(
            path,
            format!(
                "file is {} bytes but sidecar dims {} require {expected}",
                bytes.len(),
                dims
            ),
        ));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    // Tolerate non-finite payloads by masking them out.
    if data.iter().any(|x| !x.is_finite()) {
        let validity: Vec<bool> = data.iter().map(|x| x.is_finite()).collect();
        let cleaned: Vec<f32> = data
            .iter()
            .map(|&x| if x.is_finite() { x } else { 0.0 })
            .collect();
        return Volume3::with_validity(dims, sidecar.spacing, cleaned, validity);
    }
    Volume3::new(dims, sidecar.spacing, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Volume3 {
        Volume3::from_fn(Dims3::new(5, 4, 3), [1.0, 1.5, 2.0], |x, y, z| {
            (x as f32) * 0.1 - (y as f32) * 0.2 + (z as f32) * 0.3
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("v.rvol");
        let v = sample();
        write(&path, &v).unwrap();
        let first = std::fs::read(&path).unwrap();
        let first_sidecar = std::fs::read(sidecar_path(&path)).unwrap();

        let back = read(&path).unwrap();
        assert_eq!(back, v);

        write(&path, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
        assert_eq!(std::fs::read(sidecar_path(&path)).unwrap(), first_sidecar);
    }

    #[test]
    fn missing_sidecar_is_an_io_error_with_path() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("v.rvol");
        std::fs::write(&path, [0u8; 16]).unwrap();
        let err = read(&path).unwrap_err();
        assert!(err.to_string().contains("v.rvol.json"), "{err}");
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("v.rvol");
        let v = sample();
        write(&path, &v).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read(&path), Err(MafError::Format { .. })));
    }

    #[test]
    fn non_finite_payload_becomes_invalid_voxels() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("v.rvol");
        let v = sample();
        write(&path, &v).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0..4].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        let back = read(&path).unwrap();
        assert!(!back.valid_at_index(0));
        assert_eq!(back.data()[0], 0.0);
        assert!(back.valid_at_index(1));
    }
}
