//! Slice predictors: the abstract per-slice translator and its
//! implementations.
//!
//! A predictor maps a 9-channel 2.5D stack to a single-channel output slice.
//! Analytic predictors stand in for trained models in tests; stochastic ones
//! draw a reproducible parameter sample per [`SampleSeed`]; external
//! predictors bridge to real models through a subprocess exchange format.

mod analytic;
mod external;

pub use analytic::{analytic_predictor, AnalyticSpec};
pub use external::{external_predictor, ExternalPredictor, RequestManifest};

use rayon::prelude::*;

use crate::error::{MafError, Result};
use crate::slicing::{
    build_stack_from_sets, slice_volume, SliceSet, Slice2, SlicingPlane, Stack25D,
};
use crate::volume::{check_same_dims, rotate_resample, Volume3};

/// Identifies one stochastic parameter draw. Equal seeds on the same
/// stochastic predictor yield bit-identical outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct SampleSeed(pub u64);

impl std::fmt::Display for SampleSeed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A per-slice translator from 9-channel stacks to single-channel slices.
///
/// Deterministic predictors must return bit-identical outputs for identical
/// inputs and must tolerate concurrent calls; implementations receive whole
/// slice sets so process-based predictors can batch.
pub trait SlicePredictor: Send + Sync {
    /// Opaque name for reporting and bank-membership checks.
    fn name(&self) -> String;

    /// Whether outputs depend on a [`SampleSeed`].
    fn is_stochastic(&self) -> bool {
        false
    }

    /// Translate every stack of a slice set. Each output buffer must hold
    /// exactly `width * height` values for its input stack.
    fn predict_set(
        &self,
        stacks: &[Stack25D],
        plane: &SlicingPlane,
        seed: Option<SampleSeed>,
    ) -> Result<Vec<Vec<f32>>>;
}

/// Apply a pure per-stack function to every stack in parallel, tagging
/// failures with the slice index.
pub(crate) fn predict_each<F>(name: &str, stacks: &[Stack25D], f: F) -> Result<Vec<Vec<f32>>>
where
    F: Fn(&Stack25D) -> Result<Vec<f32>> + Sync,
{
    stacks
        .par_iter()
        .enumerate()
        .map(|(index, stack)| {
            f(stack).map_err(|e| MafError::Predictor {
                name: name.to_string(),
                index,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// An ordered bank of predictors `f_1..f_M` with pairwise-distinct names.
pub struct PredictorBank {
    members: Vec<Box<dyn SlicePredictor>>,
}

impl PredictorBank {
    pub fn new(members: Vec<Box<dyn SlicePredictor>>) -> Result<Self> {
        if members.is_empty() {
            return Err(MafError::Parameter(
                "predictor bank must have at least one member".into(),
            ));
        }
        for i in 0..members.len() {
            for j in (i + 1)..members.len() {
                if members[i].name() == members[j].name() {
                    return Err(MafError::Parameter(format!(
                        "predictor bank members must have distinct names; '{}' repeats",
                        members[i].name()
                    )));
                }
            }
        }
        Ok(PredictorBank { members })
    }

    pub fn members(&self) -> &[Box<dyn SlicePredictor>] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Translate a volume slice-wise along one plane: build the 2.5D stack for
/// every slice index and apply the predictor.
///
/// The three sequences must be co-registered; a stochastic predictor
/// requires a seed. The returned set lives in the plane's frame and carries
/// per-pixel validity inherited from the target slice of the first sequence,
/// so stacking it composes correctly with oblique pre-rotations.
pub fn predict_sliceset(
    p: &dyn SlicePredictor,
    seqs: &[Volume3; 3],
    plane: &SlicingPlane,
    seed: Option<SampleSeed>,
) -> Result<SliceSet> {
    let dims = seqs[0].dims();
    for s in seqs.iter().skip(1) {
        check_same_dims(dims, s.dims(), "predict_sliceset sequences")?;
    }
    if p.is_stochastic() && seed.is_none() {
        return Err(MafError::Parameter(format!(
            "stochastic predictor '{}' requires a sample seed",
            p.name()
        )));
    }

    // Rotate once per sequence, then slice axis-aligned.
    let aligned = SlicingPlane::principal(plane.kind);
    let mut sets = Vec::with_capacity(3);
    for seq in seqs {
        let set = match plane.pre_rotation {
            Some(r) => slice_volume(&rotate_resample(seq, r)?, &aligned)?,
            None => slice_volume(seq, &aligned)?,
        };
        sets.push(set);
    }
    let sets: [SliceSet; 3] = sets.try_into().expect("three sequences");

    let count = sets[0].len();
    let stacks: Vec<Stack25D> = (0..count)
        .map(|d| build_stack_from_sets(&sets, d))
        .collect::<Result<_>>()?;

    let outputs = p.predict_set(&stacks, plane, seed)?;
    if outputs.len() != count {
        return Err(MafError::Predictor {
            name: p.name(),
            index: outputs.len().min(count.saturating_sub(1)),
            reason: format!("predictor returned {} slices, expected {count}", outputs.len()),
        });
    }

    let mut slices = Vec::with_capacity(count);
    for (d, out) in outputs.into_iter().enumerate() {
        let stack = &stacks[d];
        let (w, h) = (stack.width(), stack.height());
        if out.len() != w * h {
            return Err(MafError::Predictor {
                name: p.name(),
                index: d,
                reason: format!(
                    "output has {} pixels, expected {w}x{h} = {}",
                    out.len(),
                    w * h
                ),
            });
        }
        let validity = stack.center().validity().map(|v| v.to_vec());
        slices.push(Slice2::new(w, h, out, validity)?);
    }

    SliceSet::new(*plane, seqs[0].spacing(), slices)
}
