//! Volume file formats.
//!
//! Two containers are supported, chosen by file extension:
//! - `.nii` / `.nii.gz`: single-file NIfTI-1 (float32 written; float32,
//!   int16 and friends read, with `scl_slope`/`scl_inter` honored);
//! - `.rvol`: raw little-endian float32 with a `<name>.rvol.json` sidecar
//!   holding dims and spacing.
//!
//! Validity grids are not persisted; fused-run artifacts carry per-voxel
//! contribution counts instead.

pub mod nifti;
pub mod rvol;

use std::path::Path;

use crate::error::{MafError, Result};
use crate::volume::Volume3;

/// Volume container format, detected from the file name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeFormat {
    Rvol,
    Nifti,
    NiftiGz,
}

impl VolumeFormat {
    /// Detect the format from a path's extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        let name = path
            .file_name()
            .map(|s| s.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        if name.ends_with(".rvol") {
            Ok(VolumeFormat::Rvol)
        } else if name.ends_with(".nii.gz") {
            Ok(VolumeFormat::NiftiGz)
        } else if name.ends_with(".nii") {
            Ok(VolumeFormat::Nifti)
        } else {
            Err(MafError::format(
                path,
                "unsupported volume format (expected .rvol, .nii or .nii.gz)",
            ))
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            VolumeFormat::Rvol => "rvol",
            VolumeFormat::Nifti => "nii",
            VolumeFormat::NiftiGz => "nii.gz",
        }
    }
}

/// Read a volume, dispatching on the file extension.
pub fn read_volume(path: &Path) -> Result<Volume3> {
    match VolumeFormat::from_path(path)? {
        VolumeFormat::Rvol => rvol::read(path),
        VolumeFormat::Nifti | VolumeFormat::NiftiGz => nifti::read(path),
    }
}

/// Write a volume, dispatching on the file extension.
pub fn write_volume(path: &Path, v: &Volume3) -> Result<()> {
    match VolumeFormat::from_path(path)? {
        VolumeFormat::Rvol => rvol::write(path, v),
        VolumeFormat::Nifti => nifti::write(path, v, false),
        VolumeFormat::NiftiGz => nifti::write(path, v, true),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims3;

    #[test]
    fn format_detection() {
        assert_eq!(
            VolumeFormat::from_path(Path::new("a/b/vol.rvol")).unwrap(),
            VolumeFormat::Rvol
        );
        assert_eq!(
            VolumeFormat::from_path(Path::new("x.nii")).unwrap(),
            VolumeFormat::Nifti
        );
        assert_eq!(
            VolumeFormat::from_path(Path::new("x.NII.GZ")).unwrap(),
            VolumeFormat::NiftiGz
        );
        assert!(VolumeFormat::from_path(Path::new("x.mha")).is_err());
    }

    #[test]
    fn dispatch_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let v = Volume3::from_fn(Dims3::new(4, 3, 2), [1.0, 2.0, 3.0], |x, y, z| {
            (x + 10 * y + 100 * z) as f32 * 0.5
        })
        .unwrap();
        for name in ["v.rvol", "v.nii", "v.nii.gz"] {
            let path = tmp.path().join(name);
            write_volume(&path, &v).unwrap();
            let back = read_volume(&path).unwrap();
            assert_eq!(back.dims(), v.dims());
            assert_eq!(back.data(), v.data(), "{name}");
            assert_eq!(back.spacing(), v.spacing());
        }
    }
}
