//! Fused predictions and voxel-wise uncertainty maps.
//!
//! Three estimators share one output shape: a fused prediction volume (the
//! per-voxel sample mean), an uncertainty volume (the per-voxel population
//! variance) and a contribution-count volume.
//!
//! - MC-Dropout: one stochastic model sampled with M distinct seeds on a
//!   fixed slicing plane.
//! - Deep ensemble: M distinct models on a fixed slicing plane.
//! - Multi-axis fusion: one deterministic model over M slicing planes, each
//!   predicted volume mapped back into the original frame before fusing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MafError, Result};
use crate::predictor::{predict_sliceset, PredictorBank, SampleSeed, SlicePredictor};
use crate::slicing::{stack_slices, SlicingPlan, SlicingPlane};
use crate::volume::{voxelwise_mean_var, Volume3};

/// Which estimator produced a [`FusionResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMethod {
    McDropout,
    DeepEnsemble,
    MultiAxisFusion,
}

impl FusionMethod {
    pub fn label(self) -> &'static str {
        match self {
            FusionMethod::McDropout => "mc-dropout",
            FusionMethod::DeepEnsemble => "ensemble",
            FusionMethod::MultiAxisFusion => "maf",
        }
    }
}

impl std::fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for FusionMethod {
    type Err = MafError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mc-dropout" => Ok(FusionMethod::McDropout),
            "ensemble" | "deep-ensemble" => Ok(FusionMethod::DeepEnsemble),
            "maf" | "multi-axis-fusion" => Ok(FusionMethod::MultiAxisFusion),
            other => Err(MafError::Parameter(format!(
                "unknown method '{other}' (expected mc-dropout, ensemble or maf)"
            ))),
        }
    }
}

/// Fused prediction, voxel-wise uncertainty and per-voxel sample counts.
#[derive(Debug, Clone)]
pub struct FusionResult {
    pub prediction: Volume3,
    pub uncertainty: Volume3,
    pub contributions: Volume3,
    pub method: FusionMethod,
    pub m_samples: usize,
}

/// Voxels need at least this many valid samples before a variance is
/// reported; below it the variance is zero and marked invalid.
pub const VARIANCE_MIN_COUNT: usize = 2;

fn fuse_samples(
    samples: Vec<Volume3>,
    method: FusionMethod,
) -> Result<FusionResult> {
    let m_samples = samples.len();
    let (prediction, uncertainty, contributions) =
        voxelwise_mean_var(&samples, VARIANCE_MIN_COUNT)?;
    Ok(FusionResult {
        prediction,
        uncertainty,
        contributions,
        method,
        m_samples,
    })
}

/// MC-Dropout estimator: sample a stochastic predictor with M distinct seeds
/// on one slicing plane, then fuse per-voxel sample mean and population
/// variance.
pub fn fuse_mc_dropout(
    p: &dyn SlicePredictor,
    seqs: &[Volume3; 3],
    plane: &SlicingPlane,
    seeds: &[SampleSeed],
) -> Result<FusionResult> {
    if !p.is_stochastic() {
        return Err(MafError::Parameter(format!(
            "mc-dropout requires a stochastic predictor, '{}' is deterministic",
            p.name()
        )));
    }
    if seeds.len() < 2 {
        return Err(MafError::Parameter(format!(
            "mc-dropout requires at least 2 seeds, got {}",
            seeds.len()
        )));
    }
    for i in 0..seeds.len() {
        for j in (i + 1)..seeds.len() {
            if seeds[i] == seeds[j] {
                return Err(MafError::Parameter(format!(
                    "mc-dropout seeds must be pairwise distinct; seed {} repeats",
                    seeds[i]
                )));
            }
        }
    }

    let samples: Vec<Volume3> = seeds
        .par_iter()
        .map(|&seed| stack_slices(&predict_sliceset(p, seqs, plane, Some(seed))?))
        .collect::<Result<_>>()?;
    fuse_samples(samples, FusionMethod::McDropout)
}

/// Deep-ensemble estimator: one pass per bank member on one slicing plane.
pub fn fuse_ensemble(
    bank: &PredictorBank,
    seqs: &[Volume3; 3],
    plane: &SlicingPlane,
) -> Result<FusionResult> {
    if bank.len() < 2 {
        return Err(MafError::Parameter(format!(
            "ensemble requires at least 2 members, got {}",
            bank.len()
        )));
    }
    let samples: Vec<Volume3> = bank
        .members()
        .par_iter()
        .map(|member| {
            predict_sliceset(member.as_ref(), seqs, plane, None)
                .and_then(|set| stack_slices(&set))
                .map_err(|e| e.context(&format!("ensemble member '{}'", member.name())))
        })
        .collect::<Result<_>>()?;
    fuse_samples(samples, FusionMethod::DeepEnsemble)
}

/// Multi-axis fusion: translate the volume along every plane of the plan
/// with one deterministic model, map each predicted volume back into the
/// original frame, then fuse.
///
/// Voxels lost to oblique rotations are excluded from the statistics rather
/// than averaged in as zeros; the contribution volume records how many
/// planes reached each voxel.
pub fn fuse_maf(
    p: &dyn SlicePredictor,
    seqs: &[Volume3; 3],
    plan: &SlicingPlan,
) -> Result<FusionResult> {
    if plan.is_empty() {
        return Err(MafError::Parameter("maf requires a non-empty plan".into()));
    }
    if p.is_stochastic() {
        return Err(MafError::Parameter(format!(
            "maf uses a single deterministic model, '{}' is stochastic",
            p.name()
        )));
    }
    let samples: Vec<Volume3> = plan
        .planes()
        .par_iter()
        .map(|plane| {
            predict_sliceset(p, seqs, plane, None)
                .and_then(|set| stack_slices(&set))
                .map_err(|e| e.context(&format!("plane '{plane}'")))
        })
        .collect::<Result<_>>()?;
    fuse_samples(samples, FusionMethod::MultiAxisFusion)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{centered_sphere, smooth_phantom};
    use crate::predictor::{analytic_predictor, AnalyticSpec};
    use crate::slicing::{canonical_maf_plan, PlaneKind};
    use crate::volume::Dims3;

    fn axial() -> SlicingPlane {
        SlicingPlane::principal(PlaneKind::Axial)
    }

    fn triple(v: &Volume3) -> [Volume3; 3] {
        [v.clone(), v.clone(), v.clone()]
    }

    fn seeds(m: usize) -> Vec<SampleSeed> {
        (1..=m as u64).map(SampleSeed).collect()
    }

    fn dyadic_volume(n: usize) -> Volume3 {
        // Values are multiples of 1/8: affine shifts by small integers and
        // scalings by powers of two stay exact in f32.
        Volume3::from_fn(Dims3::new(n, n, n), [1.0; 3], |x, y, z| {
            ((x * 5 + y * 3 + z * 7) % 64) as f32 * 0.125
        })
        .unwrap()
    }

    #[test]
    fn mc_dropout_zero_sigma_degenerates() {
        let v = dyadic_volume(8);
        let p = analytic_predictor(&AnalyticSpec::AdditiveNoise { sigma: 0.0, seed: 3 }).unwrap();
        let out = fuse_mc_dropout(p.as_ref(), &triple(&v), &axial(), &seeds(9)).unwrap();
        assert_eq!(out.method, FusionMethod::McDropout);
        assert_eq!(out.m_samples, 9);
        assert!(out.uncertainty.data().iter().all(|&x| x == 0.0));
        assert_eq!(out.prediction, v);
        assert!(out.contributions.data().iter().all(|&n| n == 9.0));
    }

    #[test]
    fn mc_dropout_validates_inputs() {
        let v = dyadic_volume(4);
        let noise =
            analytic_predictor(&AnalyticSpec::AdditiveNoise { sigma: 0.1, seed: 0 }).unwrap();
        let ident = analytic_predictor(&AnalyticSpec::IdentityCenterChannel).unwrap();
        assert!(matches!(
            fuse_mc_dropout(ident.as_ref(), &triple(&v), &axial(), &seeds(3)),
            Err(MafError::Parameter(_))
        ));
        assert!(matches!(
            fuse_mc_dropout(noise.as_ref(), &triple(&v), &axial(), &[SampleSeed(1)]),
            Err(MafError::Parameter(_))
        ));
        let dup = [SampleSeed(1), SampleSeed(2), SampleSeed(1)];
        assert!(matches!(
            fuse_mc_dropout(noise.as_ref(), &triple(&v), &axial(), &dup),
            Err(MafError::Parameter(_))
        ));
    }

    #[test]
    fn mc_dropout_variance_tracks_noise_level() {
        // Mean voxel variance of M iid N(0, sigma^2) samples concentrates on
        // sigma^2 (M-1)/M with standard error sigma^2 sqrt(2(M-1))/(M sqrt(V)).
        let sigma = 0.1f64;
        let m = 9usize;
        let n = 32usize;
        let v = Volume3::constant(Dims3::new(n, n, n), [1.0; 3], 0.5).unwrap();
        let p = analytic_predictor(&AnalyticSpec::AdditiveNoise {
            sigma: sigma as f32,
            seed: 17,
        })
        .unwrap();
        let out = fuse_mc_dropout(p.as_ref(), &triple(&v), &axial(), &seeds(m)).unwrap();
        let mean_var: f64 = out.uncertainty.data().iter().map(|&x| x as f64).sum::<f64>()
            / out.uncertainty.data().len() as f64;
        let expected = sigma * sigma * (m as f64 - 1.0) / m as f64;
        let se = sigma * sigma * (2.0 * (m as f64 - 1.0)).sqrt()
            / (m as f64 * ((n * n * n) as f64).sqrt());
        assert!(
            (mean_var - expected).abs() < 3.0 * se,
            "mean variance {mean_var}, expected {expected} +- {:.2e}",
            3.0 * se
        );
    }

    #[test]
    fn ensemble_of_identical_members_has_zero_uncertainty() {
        let v = dyadic_volume(8);
        // Identical behavior with distinct identities.
        let bank = PredictorBank::new(vec![
            analytic_predictor(&AnalyticSpec::IdentityCenterChannel).unwrap(),
            analytic_predictor(&AnalyticSpec::Affine { a: 1.0, b: 0.0 }).unwrap(),
            analytic_predictor(&AnalyticSpec::GaussianBlur { sigma: 0.0 }).unwrap(),
        ])
        .unwrap();
        let out = fuse_ensemble(&bank, &triple(&v), &axial()).unwrap();
        assert_eq!(out.prediction, v);
        assert!(out.uncertainty.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn ensemble_hand_oracle_is_exact() {
        let v = Volume3::constant(Dims3::new(6, 6, 6), [1.0; 3], 5.0).unwrap();
        let bank = PredictorBank::new(vec![
            analytic_predictor(&AnalyticSpec::Affine { a: 1.0, b: 0.0 }).unwrap(),
            analytic_predictor(&AnalyticSpec::Affine { a: 1.0, b: 2.0 }).unwrap(),
        ])
        .unwrap();
        let out = fuse_ensemble(&bank, &triple(&v), &axial()).unwrap();
        assert!(out.prediction.data().iter().all(|&x| x == 6.0));
        assert!(out.uncertainty.data().iter().all(|&x| x == 1.0));
        assert_eq!(out.m_samples, 2);
    }

    #[test]
    fn ensemble_requires_two_members() {
        let v = dyadic_volume(4);
        let bank = PredictorBank::new(vec![
            analytic_predictor(&AnalyticSpec::IdentityCenterChannel).unwrap(),
        ])
        .unwrap();
        assert!(matches!(
            fuse_ensemble(&bank, &triple(&v), &axial()),
            Err(MafError::Parameter(_))
        ));
    }

    #[test]
    fn maf_identity_on_principal_planes_is_exact() {
        let v = dyadic_volume(10);
        let p = analytic_predictor(&AnalyticSpec::IdentityCenterChannel).unwrap();
        let out = fuse_maf(p.as_ref(), &triple(&v), &SlicingPlan::principal()).unwrap();
        assert_eq!(out.prediction, v);
        assert!(out.uncertainty.data().iter().all(|&x| x == 0.0));
        assert!(out.contributions.data().iter().all(|&n| n == 3.0));
        assert_eq!(out.method, FusionMethod::MultiAxisFusion);
        assert_eq!(out.m_samples, 3);
    }

    #[test]
    fn maf_canonical_plan_uncertainty_stays_below_interpolation_noise() {
        let v = smooth_phantom(48);
        let p = analytic_predictor(&AnalyticSpec::IdentityCenterChannel).unwrap();
        let out = fuse_maf(p.as_ref(), &triple(&v), &canonical_maf_plan()).unwrap();
        assert_eq!(out.m_samples, 9);
        let sphere = centered_sphere(v.dims(), 1.0);
        let mut sum = 0.0f64;
        let mut count = 0usize;
        for (i, &inside) in sphere.bits().iter().enumerate() {
            if inside {
                assert!(out.prediction.valid_at_index(i));
                sum += out.uncertainty.data()[i] as f64;
                count += 1;
            }
        }
        let mean_unc = sum / count as f64;
        // Interpolation noise bound: rotation round trips on the phantom sit
        // well under 1% relative L2, so per-voxel variances over the sphere
        // average far below 1e-5 in squared-intensity units.
        assert!(mean_unc < 1.0e-5, "mean uncertainty {mean_unc}");
        // Every sphere voxel keeps all 9 contributions.
        for (i, &inside) in sphere.bits().iter().enumerate() {
            if inside {
                assert_eq!(out.contributions.data()[i], 9.0);
            }
        }
    }

    #[test]
    fn maf_single_plane_degenerates_to_plain_translation() {
        let v = dyadic_volume(8);
        let p = analytic_predictor(&AnalyticSpec::GaussianBlur { sigma: 1.0 }).unwrap();
        let plan = SlicingPlan::new(vec![axial()]).unwrap();
        let out = fuse_maf(p.as_ref(), &triple(&v), &plan).unwrap();
        let direct =
            stack_slices(&predict_sliceset(p.as_ref(), &triple(&v), &axial(), None).unwrap())
                .unwrap();
        assert_eq!(out.prediction.data(), direct.data());
        assert!(out.uncertainty.data().iter().all(|&x| x == 0.0));
        // Single contribution: variance is undefined, therefore invalid.
        assert!(!out.uncertainty.valid_at_index(0));
    }

    #[test]
    fn maf_rejects_stochastic_predictors() {
        let v = dyadic_volume(4);
        let p = analytic_predictor(&AnalyticSpec::AdditiveNoise { sigma: 0.1, seed: 1 }).unwrap();
        assert!(matches!(
            fuse_maf(p.as_ref(), &triple(&v), &SlicingPlan::principal()),
            Err(MafError::Parameter(_))
        ));
    }

    #[test]
    fn plane_permutation_leaves_result_unchanged() {
        let v = smooth_phantom(24);
        let p = analytic_predictor(&AnalyticSpec::GaussianBlur { sigma: 0.8 }).unwrap();
        let planes = canonical_maf_plan().planes().to_vec();
        let mut shuffled = planes.clone();
        shuffled.reverse();
        shuffled.swap(2, 5);
        let a = fuse_maf(p.as_ref(), &triple(&v), &SlicingPlan::new(planes).unwrap()).unwrap();
        let b = fuse_maf(p.as_ref(), &triple(&v), &SlicingPlan::new(shuffled).unwrap()).unwrap();
        assert_eq!(a.prediction.data(), b.prediction.data());
        assert_eq!(a.uncertainty.data(), b.uncertainty.data());
    }

    #[test]
    fn seed_permutation_leaves_result_unchanged() {
        let v = dyadic_volume(8);
        let p = analytic_predictor(&AnalyticSpec::AdditiveNoise { sigma: 0.3, seed: 5 }).unwrap();
        let fwd = seeds(7);
        let mut rev = fwd.clone();
        rev.reverse();
        rev.swap(1, 4);
        let a = fuse_mc_dropout(p.as_ref(), &triple(&v), &axial(), &fwd).unwrap();
        let b = fuse_mc_dropout(p.as_ref(), &triple(&v), &axial(), &rev).unwrap();
        assert_eq!(a.prediction.data(), b.prediction.data());
        assert_eq!(a.uncertainty.data(), b.uncertainty.data());
    }

    #[test]
    fn uncertainty_shift_invariant_and_scale_quadratic() {
        let v = dyadic_volume(8);
        let bank = |specs: &[AnalyticSpec]| {
            PredictorBank::new(
                specs
                    .iter()
                    .map(|s| analytic_predictor(s).unwrap())
                    .collect(),
            )
            .unwrap()
        };
        let base = bank(&[
            AnalyticSpec::Affine { a: 1.0, b: 0.0 },
            AnalyticSpec::Affine { a: 1.0, b: 2.0 },
        ]);
        let shifted = bank(&[
            AnalyticSpec::Affine { a: 1.0, b: 5.0 },
            AnalyticSpec::Affine { a: 1.0, b: 7.0 },
        ]);
        let scaled = bank(&[
            AnalyticSpec::Affine { a: 2.0, b: 0.0 },
            AnalyticSpec::Affine { a: 2.0, b: 4.0 },
        ]);
        let out_base = fuse_ensemble(&base, &triple(&v), &axial()).unwrap();
        let out_shift = fuse_ensemble(&shifted, &triple(&v), &axial()).unwrap();
        let out_scale = fuse_ensemble(&scaled, &triple(&v), &axial()).unwrap();
        // Adding a constant to every sample leaves the variance unchanged.
        assert_eq!(out_base.uncertainty.data(), out_shift.uncertainty.data());
        for i in 0..v.dims().voxel_count() {
            assert_eq!(
                out_shift.prediction.data()[i],
                out_base.prediction.data()[i] + 5.0
            );
            // Scaling outputs by 2 scales the variance by exactly 4.
            assert_eq!(
                out_scale.uncertainty.data()[i],
                4.0 * out_base.uncertainty.data()[i]
            );
        }
    }

    #[test]
    fn member_failure_names_the_member() {
        struct Broken;
        impl SlicePredictor for Broken {
            fn name(&self) -> String {
                "broken-member".into()
            }
            fn predict_set(
                &self,
                _stacks: &[crate::slicing::Stack25D],
                _plane: &SlicingPlane,
                _seed: Option<SampleSeed>,
            ) -> Result<Vec<Vec<f32>>> {
                Err(MafError::Parameter("synthetic member failure".into()))
            }
        }
        let v = dyadic_volume(4);
        let bank = PredictorBank::new(vec![
            analytic_predictor(&AnalyticSpec::IdentityCenterChannel).unwrap(),
            Box::new(Broken),
        ])
        .unwrap();
        let err = fuse_ensemble(&bank, &triple(&v), &axial()).unwrap_err();
        assert!(err.to_string().contains("broken-member"), "{err}");
    }

    #[test]
    fn maf_oblique_contributions_track_validity() {
        let v = dyadic_volume(16);
        let p = analytic_predictor(&AnalyticSpec::IdentityCenterChannel).unwrap();
        let out = fuse_maf(p.as_ref(), &triple(&v), &canonical_maf_plan()).unwrap();
        let n = v.dims().voxel_count();
        // Corners lose oblique contributions but keep the principal three.
        let corner = 0usize;
        assert!(out.contributions.data()[corner] >= 3.0);
        assert!(out.contributions.data()[corner] < 9.0);
        // Center keeps all nine.
        let center = v.dims().index(8, 8, 8);
        assert_eq!(out.contributions.data()[center], 9.0);
        assert!(out.contributions.data().iter().all(|&c| c <= 9.0));
        assert!((0..n).all(|i| out.uncertainty.data()[i] >= 0.0));
    }
}
