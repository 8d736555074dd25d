//! Dense 3D scalar volumes, boolean masks and voxel-wise operations.
//!
//! Volumes store `f32` intensities in x-fastest order (`index = x + w*(y + h*z)`)
//! with an optional validity grid marking voxels that carry defined values.
//! All statistics accumulate in `f64`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MafError, Result};

/// One of the three principal grid axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn label(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Voxel counts along x, y, z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims3 {
    pub w: usize,
    pub h: usize,
    pub d: usize,
}

impl Dims3 {
    pub fn new(w: usize, h: usize, d: usize) -> Self {
        Dims3 { w, h, d }
    }

    pub fn voxel_count(self) -> usize {
        self.w * self.h * self.d
    }

    /// Flat index for (x, y, z); x varies fastest.
    #[inline]
    pub fn index(self, x: usize, y: usize, z: usize) -> usize {
        x + self.w * (y + self.h * z)
    }

    /// Inverse of [`Dims3::index`].
    #[inline]
    pub fn coords(self, index: usize) -> (usize, usize, usize) {
        let x = index % self.w;
        let y = (index / self.w) % self.h;
        let z = index / (self.w * self.h);
        (x, y, z)
    }

    pub fn extent(self, axis: Axis) -> usize {
        match axis {
            Axis::X => self.w,
            Axis::Y => self.h,
            Axis::Z => self.d,
        }
    }

    fn check_nonempty(self) -> Result<()> {
        if self.w == 0 || self.h == 0 || self.d == 0 {
            return Err(MafError::Parameter(format!(
                "volume dims must be positive, got {}x{}x{}",
                self.w, self.h, self.d
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Dims3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.w, self.h, self.d)
    }
}

/// A rigid rotation about one principal axis.
///
/// The pivot is always the geometric center of the voxel grid,
/// `((w-1)/2, (h-1)/2, (d-1)/2)` in index space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidRotation {
    pub axis: Axis,
    pub angle_degrees: f64,
}

impl RigidRotation {
    pub fn new(axis: Axis, angle_degrees: f64) -> Self {
        RigidRotation {
            axis,
            angle_degrees,
        }
    }

    /// The rotation undoing this one.
    pub fn inverse(self) -> Self {
        RigidRotation {
            axis: self.axis,
            angle_degrees: -self.angle_degrees,
        }
    }

    fn validate(self) -> Result<()> {
        if !self.angle_degrees.is_finite() {
            return Err(MafError::Parameter(format!(
                "rotation angle must be finite, got {}",
                self.angle_degrees
            )));
        }
        if self.angle_degrees.abs() > 180.0 {
            return Err(MafError::Parameter(format!(
                "rotation angle must satisfy |angle| <= 180, got {}",
                self.angle_degrees
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for RigidRotation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "rot({}{:+})", self.axis, self.angle_degrees)
    }
}

/// A dense W x H x D scalar grid with voxel spacing and optional validity.
///
/// Immutable after construction; all operations return new volumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3 {
    dims: Dims3,
    spacing: [f32; 3],
    data: Vec<f32>,
    validity: Option<Vec<bool>>,
}

impl Volume3 {
    /// Fully valid volume. Every intensity must be finite.
    pub fn new(dims: Dims3, spacing: [f32; 3], data: Vec<f32>) -> Result<Self> {
        Self::build(dims, spacing, data, None)
    }

    /// Volume with an explicit validity grid. Intensities must be finite
    /// wherever validity is true.
    pub fn with_validity(
        dims: Dims3,
        spacing: [f32; 3],
        data: Vec<f32>,
        validity: Vec<bool>,
    ) -> Result<Self> {
        Self::build(dims, spacing, data, Some(validity))
    }

    fn build(
        dims: Dims3,
        spacing: [f32; 3],
        data: Vec<f32>,
        validity: Option<Vec<bool>>,
    ) -> Result<Self> {
        dims.check_nonempty()?;
        if data.len() != dims.voxel_count() {
            return Err(MafError::Shape(format!(
                "data length {} does not match dims {} ({} voxels)",
                data.len(),
                dims,
                dims.voxel_count()
            )));
        }
        if spacing.iter().any(|s| *s <= 0.0 || !s.is_finite()) {
            return Err(MafError::Parameter(format!(
                "spacing components must be strictly positive and finite, got {:?}",
                spacing
            )));
        }
        if let Some(v) = &validity {
            if v.len() != data.len() {
                return Err(MafError::Shape(format!(
                    "validity length {} does not match dims {}",
                    v.len(),
                    dims
                )));
            }
            if let Some(i) = (0..data.len()).find(|&i| v[i] && !data[i].is_finite()) {
                let (x, y, z) = dims.coords(i);
                return Err(MafError::Parameter(format!(
                    "non-finite intensity {} at valid voxel ({x},{y},{z})",
                    data[i]
                )));
            }
        } else if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            let (x, y, z) = dims.coords(i);
            return Err(MafError::Parameter(format!(
                "non-finite intensity {} at voxel ({x},{y},{z})",
                data[i]
            )));
        }
        Ok(Volume3 {
            dims,
            spacing,
            data,
            validity,
        })
    }

    /// Constant-valued, fully valid volume.
    pub fn constant(dims: Dims3, spacing: [f32; 3], value: f32) -> Result<Self> {
        Self::new(dims, spacing, vec![value; dims.voxel_count()])
    }

    /// Build from a per-coordinate function; fully valid.
    pub fn from_fn(
        dims: Dims3,
        spacing: [f32; 3],
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.voxel_count());
        for z in 0..dims.d {
            for y in 0..dims.h {
                for x in 0..dims.w {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, spacing, data)
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Validity grid, if any voxel is marked invalid. `None` means fully valid.
    pub fn validity(&self) -> Option<&[bool]> {
        self.validity.as_deref()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.dims.index(x, y, z)]
    }

    #[inline]
    pub fn valid_at_index(&self, index: usize) -> bool {
        self.validity.as_ref().map_or(true, |v| v[index])
    }

    #[inline]
    pub fn valid_at(&self, x: usize, y: usize, z: usize) -> bool {
        self.valid_at_index(self.dims.index(x, y, z))
    }

    pub fn is_fully_valid(&self) -> bool {
        self.validity.as_ref().map_or(true, |v| v.iter().all(|&b| b))
    }

    pub fn valid_count(&self) -> usize {
        match &self.validity {
            None => self.dims.voxel_count(),
            Some(v) => v.iter().filter(|&&b| b).count(),
        }
    }

    /// Drop the validity grid when it is all-true, so downstream equality
    /// checks treat "fully valid" uniformly.
    pub(crate) fn normalized(mut self) -> Self {
        if let Some(v) = &self.validity {
            if v.iter().all(|&b| b) {
                self.validity = None;
            }
        }
        self
    }
}

/// A boolean voxel grid with the same layout as [`Volume3`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask3 {
    dims: Dims3,
    bits: Vec<bool>,
}

impl Mask3 {
    pub fn new(dims: Dims3, bits: Vec<bool>) -> Result<Self> {
        dims.check_nonempty()?;
        if bits.len() != dims.voxel_count() {
            return Err(MafError::Shape(format!(
                "mask length {} does not match dims {}",
                bits.len(),
                dims
            )));
        }
        Ok(Mask3 { dims, bits })
    }

    pub fn from_fn(dims: Dims3, mut f: impl FnMut(usize, usize, usize) -> bool) -> Result<Self> {
        let mut bits = Vec::with_capacity(dims.voxel_count());
        for z in 0..dims.d {
            for y in 0..dims.h {
                for x in 0..dims.w {
                    bits.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, bits)
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.bits[self.dims.index(x, y, z)]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Voxel-wise `self AND NOT other`.
    pub fn and_not(&self, other: &Mask3) -> Result<Mask3> {
        check_same_dims(self.dims, other.dims, "mask and_not")?;
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(&a, &b)| a && !b)
            .collect();
        Mask3::new(self.dims, bits)
    }

    /// Voxel-wise intersection.
    pub fn and(&self, other: &Mask3) -> Result<Mask3> {
        check_same_dims(self.dims, other.dims, "mask and")?;
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(&a, &b)| a && b)
            .collect();
        Mask3::new(self.dims, bits)
    }
}

pub(crate) fn check_same_dims(a: Dims3, b: Dims3, what: &str) -> Result<()> {
    if a != b {
        return Err(MafError::Shape(format!("{what}: dims {a} vs {b}")));
    }
    Ok(())
}

/// Rotate a volume about a principal axis and resample on the original grid.
///
/// Each output voxel pulls its value from the inverse-rotated source
/// coordinate by trilinear interpolation. Output voxels whose source
/// coordinate leaves the grid, or whose interpolation touches an invalid
/// source voxel with nonzero weight, are set to 0 and marked invalid.
/// The pivot is the geometric center of the grid in index space.
pub fn rotate_resample(v: &Volume3, r: RigidRotation) -> Result<Volume3> {
    r.validate()?;
    if r.angle_degrees == 0.0 {
        return Ok(v.clone());
    }

    let dims = v.dims;
    let (w, h, d) = (dims.w, dims.h, dims.d);
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let cz = (d as f64 - 1.0) / 2.0;

    // Pulling values for the forward rotation means applying the inverse
    // rotation to output coordinates.
    let theta = -r.angle_degrees.to_radians();
    let (sin, cos) = theta.sin_cos();

    let src_data = &v.data;
    let src_valid = v.validity.as_deref();

    let mut data = vec![0.0f32; dims.voxel_count()];
    let mut validity = vec![false; dims.voxel_count()];

    let plane = w * h;
    data.par_chunks_mut(plane)
        .zip(validity.par_chunks_mut(plane))
        .enumerate()
        .for_each(|(z, (data_slab, valid_slab))| {
            let dz = z as f64 - cz;
            for y in 0..h {
                let dy = y as f64 - cy;
                for x in 0..w {
                    let dx = x as f64 - cx;
                    let (sx, sy, sz) = match r.axis {
                        Axis::X => (dx, dy * cos - dz * sin, dy * sin + dz * cos),
                        Axis::Y => (dz * sin + dx * cos, dy, dz * cos - dx * sin),
                        Axis::Z => (dx * cos - dy * sin, dx * sin + dy * cos, dz),
                    };
                    let (sx, sy, sz) = (sx + cx, sy + cy, sz + cz);
                    let out = dims.index(x, y, z) - z * plane;
                    if let Some(value) =
                        trilinear(src_data, src_valid, dims, sx, sy, sz)
                    {
                        data_slab[out] = value;
                        valid_slab[out] = true;
                    }
                }
            }
        });

    Ok(Volume3 {
        dims,
        spacing: v.spacing,
        data,
        validity: Some(validity),
    }
    .normalized())
}

/// Trilinear interpolation at a continuous source coordinate.
///
/// Returns `None` when the coordinate is out of bounds or any corner with
/// nonzero weight is invalid. Uses the `a + t*(b-a)` form so constants and
/// integer coordinates reproduce source values exactly.
#[inline]
fn trilinear(
    data: &[f32],
    validity: Option<&[bool]>,
    dims: Dims3,
    sx: f64,
    sy: f64,
    sz: f64,
) -> Option<f32> {
    let (w, h, d) = (dims.w as f64, dims.h as f64, dims.d as f64);
    if !(sx >= 0.0 && sx <= w - 1.0 && sy >= 0.0 && sy <= h - 1.0 && sz >= 0.0 && sz <= d - 1.0) {
        return None;
    }
    let fx = sx.floor();
    let fy = sy.floor();
    let fz = sz.floor();
    let tx = sx - fx;
    let ty = sy - fy;
    let tz = sz - fz;
    let x0 = fx as usize;
    let y0 = fy as usize;
    let z0 = fz as usize;
    // Zero-fraction coordinates collapse to the base corner so that corners
    // with zero weight are neither read nor validity-checked.
    let x1 = if tx > 0.0 { x0 + 1 } else { x0 };
    let y1 = if ty > 0.0 { y0 + 1 } else { y0 };
    let z1 = if tz > 0.0 { z0 + 1 } else { z0 };

    if let Some(valid) = validity {
        for &z in &[z0, z1] {
            for &y in &[y0, y1] {
                for &x in &[x0, x1] {
                    if !valid[dims.index(x, y, z)] {
                        return None;
                    }
                }
            }
        }
    }

    let at = |x: usize, y: usize, z: usize| data[dims.index(x, y, z)] as f64;
    let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);

    let c00 = lerp(at(x0, y0, z0), at(x1, y0, z0), tx);
    let c10 = lerp(at(x0, y1, z0), at(x1, y1, z0), tx);
    let c01 = lerp(at(x0, y0, z1), at(x1, y0, z1), tx);
    let c11 = lerp(at(x0, y1, z1), at(x1, y1, z1), tx);
    let c0 = lerp(c00, c10, ty);
    let c1 = lerp(c01, c11, ty);
    Some(lerp(c0, c1, tz) as f32)
}

/// Per-voxel mean, population variance and contribution count over a sample
/// list, restricted to valid contributions.
///
/// Per voxel with `n` valid contributions:
/// - `n >= min_count`: mean and variance (sum of squared deviations over `n`)
///   are both valid;
/// - `1 <= n < min_count`: mean over the available contributions stays valid,
///   variance is 0 and invalid;
/// - `n == 0`: both invalid and 0.
///
/// Contributions are sorted before accumulation, which makes the result
/// exactly invariant under permutations of the sample list.
pub fn voxelwise_mean_var(
    vs: &[Volume3],
    min_count: usize,
) -> Result<(Volume3, Volume3, Volume3)> {
    if vs.is_empty() {
        return Err(MafError::Parameter(
            "voxelwise_mean_var requires at least one volume".into(),
        ));
    }
    if min_count == 0 {
        return Err(MafError::Parameter("min_count must be positive".into()));
    }
    let dims = vs[0].dims;
    let spacing = vs[0].spacing;
    for v in &vs[1..] {
        check_same_dims(dims, v.dims, "voxelwise_mean_var")?;
    }

    let n_vox = dims.voxel_count();
    let mut mean = vec![0.0f32; n_vox];
    let mut mean_valid = vec![false; n_vox];
    let mut var = vec![0.0f32; n_vox];
    let mut var_valid = vec![false; n_vox];
    let mut count = vec![0.0f32; n_vox];

    let chunk = dims.w * dims.h.max(1);
    mean.par_chunks_mut(chunk)
        .zip(mean_valid.par_chunks_mut(chunk))
        .zip(var.par_chunks_mut(chunk))
        .zip(var_valid.par_chunks_mut(chunk))
        .zip(count.par_chunks_mut(chunk))
        .enumerate()
        .for_each(|(ci, ((((m_c, mv_c), s_c), sv_c), n_c))| {
            let base = ci * chunk;
            let mut samples: Vec<f32> = Vec::with_capacity(vs.len());
            for off in 0..m_c.len() {
                let i = base + off;
                samples.clear();
                for v in vs {
                    if v.valid_at_index(i) {
                        samples.push(v.data[i]);
                    }
                }
                let n = samples.len();
                n_c[off] = n as f32;
                if n == 0 {
                    continue;
                }
                samples.sort_by(f32::total_cmp);
                let sum: f64 = samples.iter().map(|&x| x as f64).sum();
                let mu = sum / n as f64;
                m_c[off] = mu as f32;
                mv_c[off] = true;
                if n >= min_count {
                    let ss: f64 = samples
                        .iter()
                        .map(|&x| {
                            let dev = x as f64 - mu;
                            dev * dev
                        })
                        .sum();
                    s_c[off] = (ss / n as f64) as f32;
                    sv_c[off] = true;
                }
            }
        });

    let mean = Volume3 {
        dims,
        spacing,
        data: mean,
        validity: Some(mean_valid),
    }
    .normalized();
    let var = Volume3 {
        dims,
        spacing,
        data: var,
        validity: Some(var_valid),
    }
    .normalized();
    let count = Volume3 {
        dims,
        spacing,
        data: count,
        validity: None,
    };
    Ok((mean, var, count))
}

/// Voxel-wise absolute difference; validity is the conjunction of the inputs.
pub fn absdiff(a: &Volume3, b: &Volume3) -> Result<Volume3> {
    check_same_dims(a.dims, b.dims, "absdiff")?;
    let data: Vec<f32> = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x - y).abs())
        .collect();
    let validity = match (&a.validity, &b.validity) {
        (None, None) => None,
        _ => Some(
            (0..data.len())
                .map(|i| a.valid_at_index(i) && b.valid_at_index(i))
                .collect(),
        ),
    };
    // Invalid voxels may hold non-finite differences only if inputs did;
    // inputs guarantee finiteness at valid voxels, so the product is finite
    // wherever it is valid.
    let out = Volume3 {
        dims: a.dims,
        spacing: a.spacing,
        data,
        validity,
    };
    Ok(out.normalized())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(n: usize) -> Dims3 {
        Dims3::new(n, n, n)
    }

    fn ramp_volume(d: Dims3) -> Volume3 {
        Volume3::from_fn(d, [1.0; 3], |x, y, z| {
            (x as f32) + 10.0 * (y as f32) + 100.0 * (z as f32)
        })
        .unwrap()
    }

    #[test]
    fn layout_round_trip() {
        let d = Dims3::new(5, 7, 3);
        for z in 0..d.d {
            for y in 0..d.h {
                for x in 0..d.w {
                    assert_eq!(d.coords(d.index(x, y, z)), (x, y, z));
                }
            }
        }
    }

    #[test]
    fn construction_validates() {
        let d = dims(2);
        assert!(matches!(
            Volume3::new(d, [1.0; 3], vec![0.0; 7]),
            Err(MafError::Shape(_))
        ));
        assert!(matches!(
            Volume3::new(d, [1.0, 0.0, 1.0], vec![0.0; 8]),
            Err(MafError::Parameter(_))
        ));
        let mut data = vec![0.0; 8];
        data[3] = f32::NAN;
        assert!(matches!(
            Volume3::new(d, [1.0; 3], data.clone()),
            Err(MafError::Parameter(_))
        ));
        // NaN at an invalid voxel is allowed.
        let mut validity = vec![true; 8];
        validity[3] = false;
        Volume3::with_validity(d, [1.0; 3], data, validity).unwrap();
    }

    #[test]
    fn rotate_zero_angle_is_identity() {
        let v = ramp_volume(dims(8));
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            let r = rotate_resample(&v, RigidRotation::new(axis, 0.0)).unwrap();
            assert_eq!(r, v);
        }
    }

    #[test]
    fn rotate_rejects_bad_angles() {
        let v = ramp_volume(dims(4));
        assert!(matches!(
            rotate_resample(&v, RigidRotation::new(Axis::Z, f64::NAN)),
            Err(MafError::Parameter(_))
        ));
        assert!(matches!(
            rotate_resample(&v, RigidRotation::new(Axis::Z, 181.0)),
            Err(MafError::Parameter(_))
        ));
    }

    #[test]
    fn rotate_constant_preserves_value_exactly() {
        let c = 0.3f32;
        let v = Volume3::constant(dims(16), [1.0; 3], c).unwrap();
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            let r = rotate_resample(&v, RigidRotation::new(axis, 45.0)).unwrap();
            let mut n_valid = 0;
            for (i, &val) in r.data().iter().enumerate() {
                if r.valid_at_index(i) {
                    assert_eq!(val, c);
                    n_valid += 1;
                } else {
                    assert_eq!(val, 0.0);
                }
            }
            // 45 degrees pushes the cube corners out of the grid.
            assert!(n_valid > 0 && n_valid < v.dims().voxel_count());
        }
    }

    #[test]
    fn rotate_90_about_z_maps_axes() {
        // A 90-degree rotation lands on grid points up to trig rounding;
        // check the interior against the permuted source coordinates.
        let v = ramp_volume(dims(9));
        let r = rotate_resample(&v, RigidRotation::new(Axis::Z, 90.0)).unwrap();
        // Forward map with the pivot at the center c: (x,y) -> (c - (y-c), c + (x-c)).
        // Pulling means output(x,y) = input(c + (y-c), c - (x-c)).
        let c = 4isize;
        for z in 0..9 {
            for y in 1..8usize {
                for x in 1..8usize {
                    assert!(r.valid_at(x, y, z));
                    let sx = (c + (y as isize - c)) as usize;
                    let sy = (c - (x as isize - c)) as usize;
                    let expect = v.get(sx, sy, z);
                    assert!(
                        (r.get(x, y, z) - expect).abs() < 1e-3,
                        "({x},{y},{z}): got {} expected {expect}",
                        r.get(x, y, z)
                    );
                }
            }
        }
    }

    #[test]
    fn rotation_invalidates_touched_invalid_voxels() {
        let d = dims(8);
        let mut validity = vec![true; d.voxel_count()];
        validity[d.index(4, 4, 4)] = false;
        let v = Volume3::with_validity(d, [1.0; 3], vec![1.0; d.voxel_count()], validity).unwrap();
        let r = rotate_resample(&v, RigidRotation::new(Axis::Z, 30.0)).unwrap();
        // Something near the center must become invalid.
        let mut invalid_near_center = 0;
        for z in 3..=5 {
            for y in 3..=5 {
                for x in 3..=5 {
                    if !r.valid_at(x, y, z) {
                        invalid_near_center += 1;
                    }
                }
            }
        }
        assert!(invalid_near_center > 0);
    }

    #[test]
    fn mean_var_hand_oracle() {
        let d = dims(2);
        let vols: Vec<Volume3> = [1.0f32, 2.0, 3.0]
            .iter()
            .map(|&c| Volume3::constant(d, [1.0; 3], c).unwrap())
            .collect();
        let (mean, var, count) = voxelwise_mean_var(&vols, 2).unwrap();
        let expected_var = 2.0f64 / 3.0;
        for i in 0..d.voxel_count() {
            assert!((mean.data()[i] as f64 - 2.0).abs() < 1e-12);
            assert!((var.data()[i] as f64 - expected_var).abs() < 1e-7);
            assert_eq!(count.data()[i], 3.0);
        }
    }

    #[test]
    fn mean_var_identical_samples() {
        let d = dims(3);
        let v = ramp_volume(d);
        let vols = vec![v.clone(); 9];
        let (mean, var, count) = voxelwise_mean_var(&vols, 2).unwrap();
        assert_eq!(mean.data(), v.data());
        assert!(var.data().iter().all(|&x| x == 0.0));
        assert!(count.data().iter().all(|&n| n == 9.0));
    }

    #[test]
    fn mean_var_min_count_rule() {
        let d = dims(2);
        let a = Volume3::constant(d, [1.0; 3], 5.0).unwrap();
        let mut validity = vec![true; d.voxel_count()];
        validity[0] = false;
        let b =
            Volume3::with_validity(d, [1.0; 3], vec![7.0; d.voxel_count()], validity).unwrap();
        let (mean, var, count) = voxelwise_mean_var(&[a, b], 2).unwrap();
        // Voxel 0: only A contributes.
        assert_eq!(mean.data()[0], 5.0);
        assert!(mean.valid_at_index(0));
        assert_eq!(var.data()[0], 0.0);
        assert!(!var.valid_at_index(0));
        assert_eq!(count.data()[0], 1.0);
        // Elsewhere both contribute.
        assert_eq!(mean.data()[1], 6.0);
        assert_eq!(var.data()[1], 1.0);
        assert!(var.valid_at_index(1));
        assert_eq!(count.data()[1], 2.0);
    }

    #[test]
    fn mean_var_rejects_bad_input() {
        assert!(matches!(
            voxelwise_mean_var(&[], 1),
            Err(MafError::Parameter(_))
        ));
        let a = Volume3::constant(dims(2), [1.0; 3], 0.0).unwrap();
        let b = Volume3::constant(dims(3), [1.0; 3], 0.0).unwrap();
        assert!(matches!(
            voxelwise_mean_var(&[a.clone(), b], 1),
            Err(MafError::Shape(_))
        ));
        assert!(matches!(
            voxelwise_mean_var(&[a], 0),
            Err(MafError::Parameter(_))
        ));
    }

    #[test]
    fn mean_var_permutation_invariant_bitwise() {
        let d = dims(6);
        let mut vols = Vec::new();
        for k in 0..5 {
            vols.push(
                Volume3::from_fn(d, [1.0; 3], |x, y, z| {
                    ((x * 31 + y * 17 + z * 7 + k * 13) % 101) as f32 * 0.37 - 15.0
                })
                .unwrap(),
            );
        }
        let (m1, s1, _) = voxelwise_mean_var(&vols, 2).unwrap();
        vols.reverse();
        vols.swap(1, 3);
        let (m2, s2, _) = voxelwise_mean_var(&vols, 2).unwrap();
        assert_eq!(m1.data(), m2.data());
        assert_eq!(s1.data(), s2.data());
    }

    #[test]
    fn absdiff_matches_loop_oracle() {
        let d = Dims3::new(4, 5, 3);
        let a = Volume3::from_fn(d, [1.0; 3], |x, y, z| {
            (x as f32 * 1.3) - (y as f32 * 0.7) + (z as f32 * 0.1)
        })
        .unwrap();
        let b = Volume3::from_fn(d, [1.0; 3], |x, y, z| {
            (z as f32 * 2.1) - (x as f32 * 0.2) + (y as f32)
        })
        .unwrap();
        let out = absdiff(&a, &b).unwrap();
        for z in 0..d.d {
            for y in 0..d.h {
                for x in 0..d.w {
                    assert_eq!(out.get(x, y, z), (a.get(x, y, z) - b.get(x, y, z)).abs());
                }
            }
        }
        let same = absdiff(&a, &a).unwrap();
        assert!(same.data().iter().all(|&v| v == 0.0));

        let c3 = Volume3::constant(d, [1.0; 3], 3.0).unwrap();
        let c5 = Volume3::constant(d, [1.0; 3], 5.0).unwrap();
        assert!(absdiff(&c3, &c5).unwrap().data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn absdiff_validity_conjunction() {
        let d = dims(2);
        let mut va = vec![true; 8];
        va[0] = false;
        let mut vb = vec![true; 8];
        vb[1] = false;
        let a = Volume3::with_validity(d, [1.0; 3], vec![1.0; 8], va).unwrap();
        let b = Volume3::with_validity(d, [1.0; 3], vec![2.0; 8], vb).unwrap();
        let out = absdiff(&a, &b).unwrap();
        assert!(!out.valid_at_index(0));
        assert!(!out.valid_at_index(1));
        assert!(out.valid_at_index(2));
    }
}
