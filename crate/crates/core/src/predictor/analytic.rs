//! Analytic predictors: cheap, exactly characterizable stand-ins for a
//! trained slice translator.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{MafError, Result};
use crate::slicing::{SlicingPlane, Stack25D};

use super::{predict_each, SampleSeed, SlicePredictor};

/// Specification of an analytic predictor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalyticSpec {
    /// Return the target slice of the first sequence unchanged.
    IdentityCenterChannel,
    /// Return `a * x + b` of the target slice of the first sequence.
    Affine { a: f32, b: f32 },
    /// Gaussian-blur the target slice of the first sequence.
    GaussianBlur { sigma: f32 },
    /// Add seeded Gaussian noise to the target slice of the first sequence.
    AdditiveNoise { sigma: f32, seed: u64 },
}

impl AnalyticSpec {
    fn validate(&self) -> Result<()> {
        match *self {
            AnalyticSpec::IdentityCenterChannel => Ok(()),
            AnalyticSpec::Affine { a, b } => {
                if a.is_finite() && b.is_finite() {
                    Ok(())
                } else {
                    Err(MafError::Parameter(format!(
                        "affine parameters must be finite, got a={a} b={b}"
                    )))
                }
            }
            AnalyticSpec::GaussianBlur { sigma } => {
                if sigma.is_finite() && sigma >= 0.0 {
                    Ok(())
                } else {
                    Err(MafError::Parameter(format!(
                        "blur sigma must be finite and >= 0, got {sigma}"
                    )))
                }
            }
            AnalyticSpec::AdditiveNoise { sigma, .. } => {
                if sigma.is_finite() && sigma >= 0.0 {
                    Ok(())
                } else {
                    Err(MafError::Parameter(format!(
                        "noise sigma must be finite and >= 0, got {sigma}"
                    )))
                }
            }
        }
    }
}

impl std::fmt::Display for AnalyticSpec {
    /// Canonical parseable form; `FromStr` accepts exactly this grammar.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AnalyticSpec::IdentityCenterChannel => write!(f, "identity"),
            AnalyticSpec::Affine { a, b } => write!(f, "affine:{a},{b}"),
            AnalyticSpec::GaussianBlur { sigma } => write!(f, "blur:{sigma}"),
            AnalyticSpec::AdditiveNoise { sigma, seed } => write!(f, "noise:{sigma},{seed}"),
        }
    }
}

impl FromStr for AnalyticSpec {
    type Err = MafError;

    fn from_str(s: &str) -> Result<Self> {
        let (head, args) = match s.split_once(':') {
            Some((h, a)) => (h.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let parse_f32 = |v: &str| -> Result<f32> {
            v.trim()
                .parse::<f32>()
                .map_err(|_| MafError::Parameter(format!("invalid number '{v}' in predictor spec")))
        };
        let spec = match (head, args) {
            ("identity" | "identity-center-channel", None) => AnalyticSpec::IdentityCenterChannel,
            ("affine", Some(a)) => {
                let parts: Vec<&str> = a.split(',').collect();
                if parts.len() != 2 {
                    return Err(MafError::Parameter(format!(
                        "affine spec needs two parameters, got '{a}'"
                    )));
                }
                AnalyticSpec::Affine {
                    a: parse_f32(parts[0])?,
                    b: parse_f32(parts[1])?,
                }
            }
            ("blur" | "gaussian-blur", Some(a)) => AnalyticSpec::GaussianBlur {
                sigma: parse_f32(a)?,
            },
            ("noise" | "additive-noise", Some(a)) => {
                let parts: Vec<&str> = a.split(',').collect();
                match parts.as_slice() {
                    [sigma] => AnalyticSpec::AdditiveNoise {
                        sigma: parse_f32(sigma)?,
                        seed: 0,
                    },
                    [sigma, seed] => AnalyticSpec::AdditiveNoise {
                        sigma: parse_f32(sigma)?,
                        seed: seed.trim().parse::<u64>().map_err(|_| {
                            MafError::Parameter(format!("invalid seed '{seed}' in predictor spec"))
                        })?,
                    },
                    _ => {
                        return Err(MafError::Parameter(format!(
                            "noise spec needs one or two parameters, got '{a}'"
                        )))
                    }
                }
            }
            _ => {
                return Err(MafError::Parameter(format!(
                    "unknown predictor spec '{s}'"
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Build an analytic predictor from its spec.
pub fn analytic_predictor(spec: &AnalyticSpec) -> Result<Box<dyn SlicePredictor>> {
    spec.validate()?;
    Ok(match *spec {
        AnalyticSpec::IdentityCenterChannel => Box::new(Identity),
        AnalyticSpec::Affine { a, b } => Box::new(Affine { a, b }),
        AnalyticSpec::GaussianBlur { sigma } => Box::new(GaussianBlur { sigma }),
        AnalyticSpec::AdditiveNoise { sigma, seed } => Box::new(AdditiveNoise {
            sigma,
            base_seed: seed,
        }),
    })
}

struct Identity;

impl SlicePredictor for Identity {
    fn name(&self) -> String {
        "identity-center-channel".into()
    }

    fn predict_set(
        &self,
        stacks: &[Stack25D],
        _plane: &SlicingPlane,
        _seed: Option<SampleSeed>,
    ) -> Result<Vec<Vec<f32>>> {
        predict_each(&self.name(), stacks, |s| Ok(s.center().data().to_vec()))
    }
}

struct Affine {
    a: f32,
    b: f32,
}

impl SlicePredictor for Affine {
    fn name(&self) -> String {
        format!("affine({},{})", self.a, self.b)
    }

    fn predict_set(
        &self,
        stacks: &[Stack25D],
        _plane: &SlicingPlane,
        _seed: Option<SampleSeed>,
    ) -> Result<Vec<Vec<f32>>> {
        let (a, b) = (self.a, self.b);
        predict_each(&self.name(), stacks, move |s| {
            Ok(s.center().data().iter().map(|&x| a * x + b).collect())
        })
    }
}

struct GaussianBlur {
    sigma: f32,
}

impl SlicePredictor for GaussianBlur {
    fn name(&self) -> String {
        format!("gaussian-blur({})", self.sigma)
    }

    fn predict_set(
        &self,
        stacks: &[Stack25D],
        _plane: &SlicingPlane,
        _seed: Option<SampleSeed>,
    ) -> Result<Vec<Vec<f32>>> {
        let sigma = self.sigma as f64;
        predict_each(&self.name(), stacks, move |s| {
            let center = s.center();
            if sigma == 0.0 {
                return Ok(center.data().to_vec());
            }
            Ok(blur_2d(
                center.data(),
                center.width(),
                center.height(),
                sigma,
            ))
        })
    }
}

/// Separable Gaussian blur with edge replication; accumulates in f64.
fn blur_2d(data: &[f32], w: usize, h: usize, sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    for i in -radius..=radius {
        kernel.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= norm;
    }

    let clamp = |v: i64, hi: usize| v.clamp(0, hi as i64 - 1) as usize;
    let mut tmp = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let sx = clamp(x as i64 + ki as i64 - radius, w);
                acc += k * data[sx + w * y] as f64;
            }
            tmp[x + w * y] = acc;
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let sy = clamp(y as i64 + ki as i64 - radius, h);
                acc += k * tmp[x + w * sy];
            }
            out[x + w * y] = acc as f32;
        }
    }
    out
}

struct AdditiveNoise {
    sigma: f32,
    base_seed: u64,
}

impl SlicePredictor for AdditiveNoise {
    fn name(&self) -> String {
        format!("additive-noise({},seed={})", self.sigma, self.base_seed)
    }

    fn is_stochastic(&self) -> bool {
        true
    }

    fn predict_set(
        &self,
        stacks: &[Stack25D],
        _plane: &SlicingPlane,
        seed: Option<SampleSeed>,
    ) -> Result<Vec<Vec<f32>>> {
        let seed = seed.ok_or_else(|| {
            MafError::Parameter(format!("predictor '{}' requires a sample seed", self.name()))
        })?;
        let key = mix_seeds(self.base_seed, seed.0);
        let sigma = self.sigma;
        predict_each(&self.name(), stacks, move |s| {
            // One independent stream per slice keeps results identical
            // regardless of scheduling.
            let mut rng = ChaCha8Rng::seed_from_u64(key);
            rng.set_stream(s.index() as u64);
            Ok(s.center()
                .data()
                .iter()
                .map(|&x| {
                    let z: f32 = rng.sample(StandardNormal);
                    x + sigma * z
                })
                .collect())
        })
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix_seeds(base: u64, sample: u64) -> u64 {
    splitmix64(base ^ splitmix64(sample))
}
