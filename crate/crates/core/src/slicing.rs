//! Slicing plans, slice extraction/stacking and 2.5D stack assembly.
//!
//! A slicing plane is one of the three principal plane families, optionally
//! preceded by a rigid pre-rotation of the volume (an oblique plane). Slicing
//! cuts the (possibly rotated) volume perpendicular to the plane normal into
//! ordered 2D slices; stacking reassembles them and, for oblique planes,
//! rotates the result back into the original frame.

use serde::{Deserialize, Serialize};

use crate::error::{MafError, Result};
use crate::volume::{check_same_dims, rotate_resample, Axis, Dims3, RigidRotation, Volume3};

/// Principal plane family, named by radiological convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaneKind {
    /// Perpendicular to z; slices are (x, y) images.
    Axial,
    /// Perpendicular to x; slices are (y, z) images.
    Sagittal,
    /// Perpendicular to y; slices are (x, z) images.
    Coronal,
}

impl PlaneKind {
    pub const ALL: [PlaneKind; 3] = [PlaneKind::Axial, PlaneKind::Sagittal, PlaneKind::Coronal];

    /// The grid axis this plane family is perpendicular to.
    pub fn normal(self) -> Axis {
        match self {
            PlaneKind::Axial => Axis::Z,
            PlaneKind::Sagittal => Axis::X,
            PlaneKind::Coronal => Axis::Y,
        }
    }

    /// In-plane (u, v) image dims for a volume of the given dims.
    pub fn slice_dims(self, dims: Dims3) -> (usize, usize) {
        match self {
            PlaneKind::Axial => (dims.w, dims.h),
            PlaneKind::Sagittal => (dims.h, dims.d),
            PlaneKind::Coronal => (dims.w, dims.d),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PlaneKind::Axial => "axial",
            PlaneKind::Sagittal => "sagittal",
            PlaneKind::Coronal => "coronal",
        }
    }
}

impl std::fmt::Display for PlaneKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// A slicing plane: a principal family plus an optional pre-rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlicingPlane {
    pub kind: PlaneKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre_rotation: Option<RigidRotation>,
}

impl SlicingPlane {
    /// Principal plane without pre-rotation.
    pub fn principal(kind: PlaneKind) -> Self {
        SlicingPlane {
            kind,
            pre_rotation: None,
        }
    }

    /// Oblique plane: `rotation` is applied to the volume before slicing.
    ///
    /// Rotating about the plane's own normal only spins slices in-plane and
    /// adds no new slicing geometry, so that combination is rejected.
    pub fn oblique(kind: PlaneKind, rotation: RigidRotation) -> Result<Self> {
        if rotation.axis == kind.normal() {
            return Err(MafError::Parameter(format!(
                "pre-rotation about {} is parallel to the {} plane normal and adds no new slicing geometry",
                rotation.axis,
                kind.label()
            )));
        }
        Ok(SlicingPlane {
            kind,
            pre_rotation: Some(rotation),
        })
    }

    /// Short identifier, e.g. `axial` or `sagittal+rot(z+45)`.
    pub fn label(&self) -> String {
        match self.pre_rotation {
            None => self.kind.label().to_string(),
            Some(r) => format!("{}+{}", self.kind.label(), r),
        }
    }
}

impl std::fmt::Display for SlicingPlane {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

/// An ordered list of pairwise-distinct slicing planes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SlicingPlan {
    planes: Vec<SlicingPlane>,
}

impl SlicingPlan {
    pub fn new(planes: Vec<SlicingPlane>) -> Result<Self> {
        if planes.is_empty() {
            return Err(MafError::Parameter("slicing plan must be non-empty".into()));
        }
        for i in 0..planes.len() {
            for j in (i + 1)..planes.len() {
                if planes[i] == planes[j] {
                    return Err(MafError::Parameter(format!(
                        "slicing plan contains duplicate plane '{}'",
                        planes[i]
                    )));
                }
            }
        }
        Ok(SlicingPlan { planes })
    }

    pub fn planes(&self) -> &[SlicingPlane] {
        &self.planes
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }

    /// The three principal planes.
    pub fn principal() -> Self {
        SlicingPlan {
            planes: PlaneKind::ALL.map(SlicingPlane::principal).to_vec(),
        }
    }
}

/// The canonical 9-plane fusion plan with +45-degree pre-rotations.
pub fn canonical_maf_plan() -> SlicingPlan {
    canonical_maf_plan_with_angle(45.0).expect("default angle is valid")
}

/// Canonical plan with a configurable oblique angle.
///
/// Three principal planes plus, for each rotation axis, the two plane
/// families actually tilted by a rotation about that axis (the family whose
/// normal is the rotation axis is only spun in-plane and is excluded).
pub fn canonical_maf_plan_with_angle(angle_degrees: f64) -> Result<SlicingPlan> {
    if !angle_degrees.is_finite() || angle_degrees == 0.0 || angle_degrees.abs() > 180.0 {
        return Err(MafError::Parameter(format!(
            "oblique angle must be nonzero with |angle| <= 180, got {angle_degrees}"
        )));
    }
    let mut planes: Vec<SlicingPlane> = PlaneKind::ALL.map(SlicingPlane::principal).to_vec();
    for axis in [Axis::X, Axis::Y, Axis::Z] {
        let rotation = RigidRotation::new(axis, angle_degrees);
        for kind in PlaneKind::ALL {
            if kind.normal() != axis {
                planes.push(SlicingPlane::oblique(kind, rotation)?);
            }
        }
    }
    SlicingPlan::new(planes)
}

/// A single 2D slice with optional per-pixel validity.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice2 {
    width: usize,
    height: usize,
    data: Vec<f32>,
    validity: Option<Vec<bool>>,
}

impl Slice2 {
    pub fn new(
        width: usize,
        height: usize,
        data: Vec<f32>,
        validity: Option<Vec<bool>>,
    ) -> Result<Self> {
        if data.len() != width * height {
            return Err(MafError::Shape(format!(
                "slice data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if let Some(v) = &validity {
            if v.len() != data.len() {
                return Err(MafError::Shape(format!(
                    "slice validity length {} does not match {width}x{height}",
                    v.len()
                )));
            }
        }
        Ok(Slice2 {
            width,
            height,
            data,
            validity,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn validity(&self) -> Option<&[bool]> {
        self.validity.as_deref()
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.data[u + self.width * v]
    }

    #[inline]
    pub fn valid_at(&self, u: usize, v: usize) -> bool {
        self.validity
            .as_ref()
            .map_or(true, |m| m[u + self.width * v])
    }
}

/// Ordered slices of a volume along one slicing plane, in the plane's frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSet {
    plane: SlicingPlane,
    spacing: [f32; 3],
    slices: Vec<Slice2>,
}

impl SliceSet {
    pub fn new(plane: SlicingPlane, spacing: [f32; 3], slices: Vec<Slice2>) -> Result<Self> {
        if slices.is_empty() {
            return Err(MafError::Parameter("slice set must be non-empty".into()));
        }
        let (w, h) = (slices[0].width, slices[0].height);
        for (d, s) in slices.iter().enumerate() {
            if s.width != w || s.height != h {
                return Err(MafError::Shape(format!(
                    "slice {d} is {}x{}, expected {w}x{h}",
                    s.width, s.height
                )));
            }
        }
        Ok(SliceSet {
            plane,
            spacing,
            slices,
        })
    }

    pub fn plane(&self) -> &SlicingPlane {
        &self.plane
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn slices(&self) -> &[Slice2] {
        &self.slices
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }
}

/// Extract one slice from an axis-aligned volume; no rotation involved.
pub(crate) fn extract_slice(v: &Volume3, kind: PlaneKind, d: usize) -> Slice2 {
    let dims = v.dims();
    let (su, sv) = kind.slice_dims(dims);
    let mut data = Vec::with_capacity(su * sv);
    let mut validity = v.validity().map(|_| Vec::with_capacity(su * sv));
    let mut push = |x: usize, y: usize, z: usize| {
        let i = dims.index(x, y, z);
        data.push(v.data()[i]);
        if let Some(val) = &mut validity {
            val.push(v.valid_at_index(i));
        }
    };
    match kind {
        PlaneKind::Axial => {
            for y in 0..dims.h {
                for x in 0..dims.w {
                    push(x, y, d);
                }
            }
        }
        PlaneKind::Sagittal => {
            for z in 0..dims.d {
                for y in 0..dims.h {
                    push(d, y, z);
                }
            }
        }
        PlaneKind::Coronal => {
            for z in 0..dims.d {
                for x in 0..dims.w {
                    push(x, d, z);
                }
            }
        }
    }
    Slice2 {
        width: su,
        height: sv,
        data,
        validity,
    }
}

/// Cut a volume into ordered 2D slices along a slicing plane.
///
/// If the plane carries a pre-rotation it is applied first; the slice count
/// equals the (rotated) volume's extent along the plane normal and slices
/// carry validity inherited from the rotation.
pub fn slice_volume(v: &Volume3, plane: &SlicingPlane) -> Result<SliceSet> {
    let rotated;
    let source = match plane.pre_rotation {
        Some(r) => {
            rotated = rotate_resample(v, r)?;
            &rotated
        }
        None => v,
    };
    let count = source.dims().extent(plane.kind.normal());
    let slices = (0..count)
        .map(|d| extract_slice(source, plane.kind, d))
        .collect();
    SliceSet::new(*plane, v.spacing(), slices)
}

/// Reassemble a slice set into a volume in the original frame.
///
/// Stacking along the plane normal is a pure reindexing (bit-exact inverse
/// of slicing); for oblique planes the inverse pre-rotation is then applied,
/// composing slice validity with back-rotation bounds.
pub fn stack_slices(s: &SliceSet) -> Result<Volume3> {
    let kind = s.plane.kind;
    let (su, sv) = (s.slices[0].width, s.slices[0].height);
    let count = s.slices.len();
    let dims = match kind {
        PlaneKind::Axial => Dims3::new(su, sv, count),
        PlaneKind::Sagittal => Dims3::new(count, su, sv),
        PlaneKind::Coronal => Dims3::new(su, count, sv),
    };

    let n = dims.voxel_count();
    let mut data = vec![0.0f32; n];
    let any_validity = s.slices.iter().any(|sl| sl.validity.is_some());
    let mut validity = if any_validity {
        Some(vec![true; n])
    } else {
        None
    };

    for (d, slice) in s.slices.iter().enumerate() {
        for v in 0..sv {
            for u in 0..su {
                let i = match kind {
                    PlaneKind::Axial => dims.index(u, v, d),
                    PlaneKind::Sagittal => dims.index(d, u, v),
                    PlaneKind::Coronal => dims.index(u, d, v),
                };
                data[i] = slice.get(u, v);
                if let Some(val) = &mut validity {
                    val[i] = slice.valid_at(u, v);
                }
            }
        }
    }

    let volume = match validity {
        Some(val) => Volume3::with_validity(dims, s.spacing, data, val)?.normalized(),
        None => Volume3::new(dims, s.spacing, data)?,
    };

    match s.plane.pre_rotation {
        Some(r) => rotate_resample(&volume, r.inverse()),
        None => Ok(volume),
    }
}

/// The 9-channel 2.5D input for one target slice: for each of the three
/// input sequences, the (d-1, d, d+1) neighbor triple, clamped at the ends.
#[derive(Debug, Clone, PartialEq)]
pub struct Stack25D {
    index: usize,
    width: usize,
    height: usize,
    channels: Vec<Slice2>,
}

/// Number of channels in a 2.5D stack: 3 sequences x 3 neighboring slices.
pub const STACK_CHANNELS: usize = 9;

/// Channel index of the target slice of the first sequence (the channel an
/// identity translator returns).
pub const CENTER_CHANNEL: usize = 1;

impl Stack25D {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Channels in sequence-major order:
    /// `[s0@d-1, s0@d, s0@d+1, s1@d-1, s1@d, s1@d+1, s2@d-1, s2@d, s2@d+1]`.
    pub fn channels(&self) -> &[Slice2] {
        &self.channels
    }

    pub fn channel(&self, i: usize) -> &Slice2 {
        &self.channels[i]
    }

    /// The target slice of the first sequence.
    pub fn center(&self) -> &Slice2 {
        &self.channels[CENTER_CHANNEL]
    }
}

/// Assemble the 2.5D stack for target slice `d` from co-registered, already
/// axis-aligned slice sets (one per sequence, same plane).
pub(crate) fn build_stack_from_sets(sets: &[SliceSet; 3], d: usize) -> Result<Stack25D> {
    let count = sets[0].len();
    for s in sets.iter().skip(1) {
        if s.len() != count {
            return Err(MafError::Shape(format!(
                "sequence slice counts differ: {} vs {count}",
                s.len()
            )));
        }
    }
    if d >= count {
        return Err(MafError::Parameter(format!(
            "slice index {d} out of range 0..{count}"
        )));
    }
    let (w, h) = (sets[0].slices[0].width, sets[0].slices[0].height);
    let lo = d.saturating_sub(1);
    let hi = (d + 1).min(count - 1);
    let mut channels = Vec::with_capacity(STACK_CHANNELS);
    for set in sets {
        for idx in [lo, d, hi] {
            let slice = &set.slices[idx];
            if slice.width != w || slice.height != h {
                return Err(MafError::Shape(format!(
                    "channel slice is {}x{}, expected {w}x{h}",
                    slice.width, slice.height
                )));
            }
            channels.push(slice.clone());
        }
    }
    Ok(Stack25D {
        index: d,
        width: w,
        height: h,
        channels,
    })
}

/// Build the 2.5D input stack for target slice `d` of a slicing plane.
///
/// Applies the plane's pre-rotation to each sequence if present. Callers
/// that need every `d` should slice once and reuse (see
/// `predictor::predict_sliceset`); this form re-slices per call.
pub fn build_25d_stack(seqs: &[Volume3; 3], plane: &SlicingPlane, d: usize) -> Result<Stack25D> {
    let dims = seqs[0].dims();
    for s in seqs.iter().skip(1) {
        check_same_dims(dims, s.dims(), "build_25d_stack sequences")?;
    }
    let sets = [
        slice_volume(&seqs[0], plane)?,
        slice_volume(&seqs[1], plane)?,
        slice_volume(&seqs[2], plane)?,
    ];
    build_stack_from_sets(&sets, d)
}
