//! Intensity preprocessing: histogram-landmark standardization, joint
//! min-max normalization over the input sequences and the linear range
//! shift to [-1, 1].

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MafError, Result};
use crate::volume::{check_same_dims, Volume3};

/// Percentiles used for histogram-landmark training and mapping.
pub const DEFAULT_PERCENTILES: [f64; 11] = [
    1.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 99.0,
];

/// Standard intensity scale the landmarks are mapped onto.
pub const DEFAULT_STANDARD_RANGE: (f64, f64) = (1.0, 4095.0);

/// Configuration for histogram-landmark standardization.
#[derive(Debug, Clone)]
pub struct NyulConfig {
    pub percentiles: Vec<f64>,
    pub standard_range: (f64, f64),
}

impl Default for NyulConfig {
    fn default() -> Self {
        NyulConfig {
            percentiles: DEFAULT_PERCENTILES.to_vec(),
            standard_range: DEFAULT_STANDARD_RANGE,
        }
    }
}

impl NyulConfig {
    fn validate(&self) -> Result<()> {
        if self.percentiles.len() < 2 {
            return Err(MafError::Parameter(
                "landmark configuration needs at least 2 percentiles".into(),
            ));
        }
        let in_range = |p: &f64| p.is_finite() && (0.0..=100.0).contains(p);
        if !self.percentiles.iter().all(in_range)
            || self.percentiles.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(MafError::Parameter(format!(
                "percentiles must be strictly increasing within [0, 100], got {:?}",
                self.percentiles
            )));
        }
        let (lo, hi) = self.standard_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(MafError::Parameter(format!(
                "standard range must be finite with lo < hi, got ({lo}, {hi})"
            )));
        }
        Ok(())
    }
}

/// Foreground percentiles (intensity > 0 at valid voxels) via sorting with
/// linear interpolation between order statistics.
pub fn foreground_percentiles(v: &Volume3, percentiles: &[f64]) -> Result<Vec<f64>> {
    let mut fg: Vec<f32> = v
        .data()
        .iter()
        .enumerate()
        .filter(|(i, &x)| v.valid_at_index(*i) && x > 0.0)
        .map(|(_, &x)| x)
        .collect();
    if fg.is_empty() {
        return Err(MafError::Degenerate(
            "volume has no positive foreground voxels".into(),
        ));
    }
    fg.sort_by(f32::total_cmp);
    let n = fg.len();
    Ok(percentiles
        .iter()
        .map(|&p| {
            let rank = p / 100.0 * (n as f64 - 1.0);
            let lo = rank.floor() as usize;
            let frac = rank - lo as f64;
            if lo + 1 < n {
                fg[lo] as f64 + frac * (fg[lo + 1] as f64 - fg[lo] as f64)
            } else {
                fg[n - 1] as f64
            }
        })
        .collect())
}

fn strictly_increasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[0] < w[1])
}

/// Rescale a volume's landmark vector onto the standard range so that the
/// first landmark maps to the range minimum and the last to the maximum.
fn rescale_to_standard(landmarks: &[f64], range: (f64, f64)) -> Vec<f64> {
    let (s_lo, s_hi) = range;
    let first = landmarks[0];
    let last = landmarks[landmarks.len() - 1];
    let scale = (s_hi - s_lo) / (last - first);
    landmarks
        .iter()
        .map(|&l| s_lo + (l - first) * scale)
        .collect()
}

/// Outcome of landmark training over one sequence's cohort.
#[derive(Debug, Clone)]
pub struct NyulTraining {
    /// Standard-scale landmark values, strictly increasing.
    pub landmarks: Vec<f64>,
    /// Volumes skipped for degenerate histograms, with reasons.
    pub skipped: Vec<(usize, String)>,
}

/// Learn standard-scale landmarks for one sequence: per-volume foreground
/// percentiles, rescaled onto the standard range, averaged over the cohort.
///
/// Volumes with degenerate histograms (no foreground, or percentile ties)
/// are skipped and reported; training fails only when no volume is usable.
pub fn nyul_train(cohort: &[Volume3], cfg: &NyulConfig) -> Result<NyulTraining> {
    cfg.validate()?;
    if cohort.is_empty() {
        return Err(MafError::Parameter("landmark cohort is empty".into()));
    }
    let k = cfg.percentiles.len();
    let mut acc = vec![0.0f64; k];
    let mut used = 0usize;
    let mut skipped = Vec::new();
    for (i, v) in cohort.iter().enumerate() {
        let lms = match foreground_percentiles(v, &cfg.percentiles) {
            Ok(l) => l,
            Err(e) => {
                skipped.push((i, e.to_string()));
                continue;
            }
        };
        if !strictly_increasing(&lms) {
            skipped.push((
                i,
                "degenerate histogram: landmark percentiles are not strictly increasing".into(),
            ));
            continue;
        }
        for (a, l) in acc.iter_mut().zip(rescale_to_standard(&lms, cfg.standard_range)) {
            *a += l;
        }
        used += 1;
    }
    if used == 0 {
        return Err(MafError::Degenerate(
            "no usable volumes in landmark cohort".into(),
        ));
    }
    let landmarks: Vec<f64> = acc.into_iter().map(|a| a / used as f64).collect();
    if !strictly_increasing(&landmarks) {
        return Err(MafError::Degenerate(
            "averaged landmarks are not strictly increasing".into(),
        ));
    }
    Ok(NyulTraining { landmarks, skipped })
}

/// Piecewise-linear landmark map for one foreground intensity: segments
/// between corresponding landmarks, linear extrapolation beyond the ends,
/// background (intensity <= 0) unchanged. Landmark values themselves map
/// exactly onto their standard counterparts.
pub fn nyul_map_value(own: &[f64], standard: &[f64], t: f32) -> f32 {
    if t <= 0.0 {
        return t;
    }
    let t = t as f64;
    let k = own.len();
    // Segment index: clamp to the end segments for extrapolation.
    let seg = match own.iter().position(|&l| t < l) {
        Some(0) => 0,
        Some(i) => i - 1,
        None => k - 2,
    };
    let slope = (standard[seg + 1] - standard[seg]) / (own[seg + 1] - own[seg]);
    (standard[seg] + (t - own[seg]) * slope) as f32
}

/// Map a volume's foreground intensities through the piecewise-linear
/// transform taking its own landmark percentiles onto the standard-scale
/// landmarks (see [`nyul_map_value`]).
pub fn nyul_apply(v: &Volume3, standard: &[f64], cfg: &NyulConfig) -> Result<Volume3> {
    cfg.validate()?;
    if standard.len() != cfg.percentiles.len() {
        return Err(MafError::Parameter(format!(
            "landmark vector has {} values, configuration expects {}",
            standard.len(),
            cfg.percentiles.len()
        )));
    }
    if !strictly_increasing(standard) {
        return Err(MafError::Parameter(
            "standard landmarks must be strictly increasing".into(),
        ));
    }
    // A volume with no foreground has nothing to map; background is
    // preserved, so it passes through unchanged.
    let own = match foreground_percentiles(v, &cfg.percentiles) {
        Ok(own) => own,
        Err(MafError::Degenerate(_)) => return Ok(v.clone()),
        Err(e) => return Err(e),
    };
    if !strictly_increasing(&own) {
        return Err(MafError::Degenerate(
            "volume landmarks are not strictly increasing".into(),
        ));
    }

    let data: Vec<f32> = v
        .data()
        .iter()
        .map(|&t| nyul_map_value(&own, standard, t))
        .collect();
    match v.validity() {
        Some(val) => Volume3::with_validity(v.dims(), v.spacing(), data, val.to_vec()),
        None => Volume3::new(v.dims(), v.spacing(), data),
    }
}

/// Landmark document persisted as JSON: sequence name -> landmark values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LandmarkDocument {
    pub sequences: BTreeMap<String, Vec<f64>>,
}

impl LandmarkDocument {
    pub fn insert(&mut self, sequence: &str, landmarks: Vec<f64>) {
        self.sequences.insert(sequence.to_string(), landmarks);
    }

    pub fn get(&self, sequence: &str) -> Option<&[f64]> {
        self.sequences.get(sequence).map(|v| v.as_slice())
    }

    pub fn validate(&self) -> Result<()> {
        if self.sequences.is_empty() {
            return Err(MafError::Parameter("landmark document is empty".into()));
        }
        for (name, lms) in &self.sequences {
            if lms.len() < 2 || !strictly_increasing(lms) {
                return Err(MafError::Parameter(format!(
                    "landmarks for sequence '{name}' must be >= 2 strictly increasing values"
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.sequences).expect("landmarks serialize");
        std::fs::write(path, json + "\n").map_err(|e| MafError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MafError::io(path, e))?;
        let sequences: BTreeMap<String, Vec<f64>> = serde_json::from_str(&text)
            .map_err(|e| MafError::format(path, format!("invalid landmark JSON: {e}")))?;
        let doc = LandmarkDocument { sequences };
        doc.validate()
            .map_err(|e| MafError::format(path, e.to_string()))?;
        Ok(doc)
    }
}

/// Parameters of the joint min-max normalization plus range shift,
/// sufficient to invert the transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMaxParams {
    pub lo: f32,
    pub hi: f32,
}

impl MinMaxParams {
    /// Forward map: `x -> 2 * (x - lo) / (hi - lo) - 1`.
    #[inline]
    pub fn apply(&self, x: f32) -> f32 {
        let t = (x as f64 - self.lo as f64) / (self.hi as f64 - self.lo as f64);
        (2.0 * t - 1.0) as f32
    }

    /// Inverse map: `y -> lo + (y + 1) / 2 * (hi - lo)`.
    #[inline]
    pub fn invert(&self, y: f32) -> f32 {
        (self.lo as f64 + (y as f64 + 1.0) / 2.0 * (self.hi as f64 - self.lo as f64)) as f32
    }
}

/// Apply the forward min-max shift to a volume with known parameters.
pub fn minmax_apply(v: &Volume3, params: MinMaxParams) -> Result<Volume3> {
    let data: Vec<f32> = v.data().iter().map(|&x| params.apply(x)).collect();
    match v.validity() {
        Some(val) => Volume3::with_validity(v.dims(), v.spacing(), data, val.to_vec()),
        None => Volume3::new(v.dims(), v.spacing(), data),
    }
}

/// Apply the inverse min-max shift to a volume.
pub fn minmax_invert(v: &Volume3, params: MinMaxParams) -> Result<Volume3> {
    let data: Vec<f32> = v.data().iter().map(|&x| params.invert(x)).collect();
    match v.validity() {
        Some(val) => Volume3::with_validity(v.dims(), v.spacing(), data, val.to_vec()),
        None => Volume3::new(v.dims(), v.spacing(), data),
    }
}

/// Joint min-max normalization: the (lo, hi) range is computed over the
/// three input sequences only, then all four volumes (inputs and target)
/// are mapped through `x -> 2 (x - lo) / (hi - lo) - 1`.
///
/// Inputs land exactly in [-1, 1]; the target may exceed 1.
pub fn minmax_shift(
    inputs: &[Volume3; 3],
    target: &Volume3,
) -> Result<([Volume3; 3], Volume3, MinMaxParams)> {
    let dims = inputs[0].dims();
    for v in inputs.iter().skip(1) {
        check_same_dims(dims, v.dims(), "minmax_shift inputs")?;
    }
    check_same_dims(dims, target.dims(), "minmax_shift target")?;

    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for v in inputs {
        for (i, &x) in v.data().iter().enumerate() {
            if v.valid_at_index(i) {
                lo = lo.min(x);
                hi = hi.max(x);
            }
        }
    }
    if hi <= lo {
        return Err(MafError::Degenerate(format!(
            "joint input range is degenerate: lo = hi = {lo}"
        )));
    }
    let params = MinMaxParams { lo, hi };
    let mapped = [
        minmax_apply(&inputs[0], params)?,
        minmax_apply(&inputs[1], params)?,
        minmax_apply(&inputs[2], params)?,
    ];
    let target = minmax_apply(target, params)?;
    Ok((mapped, target, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian_volume(n: usize, seed: u64, mean: f32, sd: f32) -> Volume3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = Dims3::new(n, n, n);
        let data: Vec<f32> = (0..dims.voxel_count())
            .map(|_| {
                let z: f32 = rng.sample(rand_distr::StandardNormal);
                (mean + sd * z).max(0.01)
            })
            .collect();
        Volume3::new(dims, [1.0; 3], data).unwrap()
    }

    /// Index-based percentile oracle: nearest-rank neighbors bound the
    /// interpolated value.
    fn sorted_foreground(v: &Volume3) -> Vec<f32> {
        let mut fg: Vec<f32> = v.data().iter().copied().filter(|&x| x > 0.0).collect();
        fg.sort_by(f32::total_cmp);
        fg
    }

    #[test]
    fn percentiles_match_sort_oracle() {
        let v = gaussian_volume(16, 5, 1000.0, 200.0);
        let cfg = NyulConfig::default();
        let got = foreground_percentiles(&v, &cfg.percentiles).unwrap();
        let fg = sorted_foreground(&v);
        let n = fg.len();
        for (p, g) in cfg.percentiles.iter().zip(&got) {
            let rank = (p / 100.0 * (n as f64 - 1.0)).round() as usize;
            let oracle = fg[rank] as f64;
            assert!(
                (g - oracle).abs() <= 1.0,
                "percentile {p}: interpolated {g} vs nearest-rank {oracle}"
            );
        }
        assert!(strictly_increasing(&got));
    }

    #[test]
    fn train_single_volume_equals_own_rescaled_percentiles() {
        let v = gaussian_volume(12, 9, 500.0, 100.0);
        let cfg = NyulConfig::default();
        let trained = nyul_train(std::slice::from_ref(&v), &cfg).unwrap();
        assert!(trained.skipped.is_empty());
        let own = foreground_percentiles(&v, &cfg.percentiles).unwrap();
        let rescaled = rescale_to_standard(&own, cfg.standard_range);
        for (a, b) in trained.landmarks.iter().zip(&rescaled) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(trained.landmarks[0], cfg.standard_range.0);
        let last = *trained.landmarks.last().unwrap();
        assert!((last - cfg.standard_range.1).abs() < 1e-9);

        // Two identical volumes train to the same landmarks.
        let twice = nyul_train(&[v.clone(), v.clone()], &cfg).unwrap();
        for (a, b) in twice.landmarks.iter().zip(&trained.landmarks) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn train_skips_degenerate_volumes() {
        let good = gaussian_volume(10, 3, 800.0, 150.0);
        let constant = Volume3::constant(Dims3::new(10, 10, 10), [1.0; 3], 5.0).unwrap();
        let background = Volume3::constant(Dims3::new(10, 10, 10), [1.0; 3], 0.0).unwrap();
        let cfg = NyulConfig::default();
        let trained = nyul_train(&[constant.clone(), good, background.clone()], &cfg).unwrap();
        assert_eq!(trained.skipped.len(), 2);
        assert_eq!(trained.skipped[0].0, 0);
        assert_eq!(trained.skipped[1].0, 2);
        // Nothing usable at all: error.
        assert!(matches!(
            nyul_train(&[constant, background], &cfg),
            Err(MafError::Degenerate(_))
        ));
    }

    #[test]
    fn apply_holds_landmark_fixed_points() {
        let v = gaussian_volume(14, 21, 300.0, 60.0);
        let cfg = NyulConfig::default();
        let trained = nyul_train(std::slice::from_ref(&v), &cfg).unwrap();
        let own = foreground_percentiles(&v, &cfg.percentiles).unwrap();
        // Landmark values map exactly onto the standard scale.
        for (o, s) in own.iter().zip(&trained.landmarks) {
            let mapped = nyul_map_value(&own, &trained.landmarks, *o as f32) as f64;
            assert!(
                (mapped - s).abs() <= 1e-3 * s.abs().max(1.0),
                "landmark {o} -> {mapped}, expected {s}"
            );
        }
        // Percentiles re-estimated from the mapped volume track the standard
        // landmarks. Use a standard range whose low end keeps the
        // extrapolated sub-p1 tail positive, so no foreground voxel drops
        // out of the percentile estimate; the residual is interpolation
        // across landmark kinks in the sparse tails.
        let wide = NyulConfig {
            standard_range: (2000.0, 6000.0),
            ..NyulConfig::default()
        };
        let trained_wide = nyul_train(std::slice::from_ref(&v), &wide).unwrap();
        let mapped = nyul_apply(&v, &trained_wide.landmarks, &wide).unwrap();
        assert!(mapped.data().iter().all(|&t| t > 0.0));
        let mapped_lms = foreground_percentiles(&mapped, &wide.percentiles).unwrap();
        for (m, s) in mapped_lms.iter().zip(&trained_wide.landmarks) {
            assert!(
                (m - s).abs() < 25.0,
                "mapped landmark {m} vs standard {s}"
            );
        }
        // Monotone non-decreasing on the foreground.
        let mut pairs: Vec<(f32, f32)> = v
            .data()
            .iter()
            .zip(mapped.data())
            .filter(|(&a, _)| a > 0.0)
            .map(|(&a, &b)| (a, b))
            .collect();
        pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
        for w in pairs.windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn apply_keeps_background_unchanged() {
        let dims = Dims3::new(8, 8, 8);
        // Half background, half smoothly varying foreground.
        let v = Volume3::from_fn(dims, [1.0; 3], |x, y, z| {
            if x < 4 {
                0.0
            } else {
                x as f32 * 1.31 + y as f32 * 0.57 + z as f32 * 0.23 + 0.5
            }
        })
        .unwrap();
        let cfg = NyulConfig::default();
        let trained = nyul_train(std::slice::from_ref(&v), &cfg).unwrap();
        let mapped = nyul_apply(&v, &trained.landmarks, &cfg).unwrap();
        for (a, b) in v.data().iter().zip(mapped.data()) {
            if *a == 0.0 {
                assert_eq!(*b, 0.0);
            }
        }
        // All-background volume passes through unchanged.
        let bg = Volume3::constant(dims, [1.0; 3], 0.0).unwrap();
        let out = nyul_apply(&bg, &trained.landmarks, &cfg).unwrap();
        assert_eq!(out, bg);
    }

    #[test]
    fn landmark_document_round_trip_and_validation() {
        let mut doc = LandmarkDocument::default();
        doc.insert("t1n", vec![1.0, 5.0, 9.0]);
        doc.insert("t2w", vec![2.0, 4.0, 8.0]);
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("landmarks.json");
        doc.save(&path).unwrap();
        let loaded = LandmarkDocument::load(&path).unwrap();
        assert_eq!(loaded, doc);

        let mut bad = LandmarkDocument::default();
        bad.insert("t1n", vec![3.0, 2.0]);
        bad.save(&path).unwrap();
        assert!(LandmarkDocument::load(&path).is_err());
    }

    #[test]
    fn minmax_endpoints_are_exact() {
        let dims = Dims3::new(4, 4, 4);
        let a = Volume3::from_fn(dims, [1.0; 3], |x, _, _| x as f32 * 2.5).unwrap();
        let b = Volume3::constant(dims, [1.0; 3], 4.0).unwrap();
        let c = Volume3::from_fn(dims, [1.0; 3], |_, y, _| 10.0 - y as f32).unwrap();
        let target = Volume3::constant(dims, [1.0; 3], 20.0).unwrap();
        let ([ma, _, _], mt, params) = minmax_shift(&[a, b, c], &target).unwrap();
        assert_eq!(params.lo, 0.0);
        assert_eq!(params.hi, 10.0);
        // Joint minimum (x = 0 in a) maps to exactly -1, maximum to +1.
        assert_eq!(ma.get(0, 0, 0), -1.0);
        let mx = ma
            .data()
            .iter()
            .chain(mt.data())
            .cloned()
            .fold(f32::NEG_INFINITY, f32::max);
        // Target 20 with range [0, 10]: 2 * 2 - 1 = 3, beyond 1 by design.
        assert_eq!(mt.get(0, 0, 0), 3.0);
        assert_eq!(mx, 3.0);
    }

    #[test]
    fn minmax_round_trip_within_tolerance() {
        let dims = Dims3::new(6, 6, 6);
        let mk = |seed: u64| gaussian_volume(6, seed, 100.0, 30.0);
        let inputs = [mk(1), mk(2), mk(3)];
        let target = mk(4);
        let (mapped, mtarget, params) = minmax_shift(&inputs, &target).unwrap();
        let range = (params.hi - params.lo) as f64;
        for (orig, m) in inputs.iter().zip(&mapped).chain([(&target, &mtarget)]) {
            let inv = minmax_invert(m, params).unwrap();
            for i in 0..dims.voxel_count() {
                let o = orig.data()[i] as f64;
                let r = inv.data()[i] as f64;
                assert!(
                    (o - r).abs() <= 1e-6 * (o.abs() + range),
                    "round trip {o} -> {r}"
                );
            }
        }
    }

    #[test]
    fn minmax_rejects_degenerate_range() {
        let dims = Dims3::new(3, 3, 3);
        let flat = Volume3::constant(dims, [1.0; 3], 2.0).unwrap();
        let t = Volume3::constant(dims, [1.0; 3], 9.0).unwrap();
        assert!(matches!(
            minmax_shift(&[flat.clone(), flat.clone(), flat], &t),
            Err(MafError::Degenerate(_))
        ));
    }
}
