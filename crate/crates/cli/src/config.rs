//! Run configuration: declarative config files (TOML or JSON) merged with
//! command-line overrides, validated into concrete run objects.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use maf_core::fusion::FusionMethod;
use maf_core::predictor::{
    analytic_predictor, external_predictor, AnalyticSpec, SampleSeed, SlicePredictor,
};
use maf_core::slicing::{
    canonical_maf_plan_with_angle, PlaneKind, SlicingPlan, SlicingPlane,
};
use maf_core::volume::{Axis, RigidRotation};
use maf_core::{MafError, Result};

use crate::error::{CliError, CliResult};

/// Input volume paths for a run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct InputPaths {
    pub t1n: Option<PathBuf>,
    pub t2w: Option<PathBuf>,
    pub t2f: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1c: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<PathBuf>,
}

impl InputPaths {
    pub fn required_triple(&self) -> CliResult<[PathBuf; 3]> {
        match (&self.t1n, &self.t2w, &self.t2f) {
            (Some(a), Some(b), Some(c)) => Ok([a.clone(), b.clone(), c.clone()]),
            _ => Err(CliError::validation(
                "inputs t1n, t2w and t2f are all required (set them in the config file or via --t1n/--t2w/--t2f)",
            )),
        }
    }
}

/// Declarative description of a fusion run. A run manifest written by
/// `maf fuse` deserializes back into this type, so runs can be replayed
/// from their manifests.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunConfig {
    pub method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plane: Option<String>,
    #[serde(default)]
    pub predictor: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub inputs: InputPaths,
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workdir: Option<PathBuf>,
}

impl RunConfig {
    /// Load from a `.toml` or `.json` file.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        let ext = path
            .extension()
            .map(|s| s.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        match ext.as_str() {
            "toml" => toml::from_str(&text).map_err(|e| {
                CliError::validation(format!("{}: invalid TOML config: {e}", path.display()))
            }),
            "json" => serde_json::from_str(&text).map_err(|e| {
                CliError::validation(format!("{}: invalid JSON config: {e}", path.display()))
            }),
            other => Err(CliError::validation(format!(
                "{}: unsupported config extension '{other}' (expected .toml or .json)",
                path.display()
            ))),
        }
    }

    /// Overlay command-line values; flags win over the config file.
    #[allow(clippy::too_many_arguments)]
    pub fn override_with(
        mut self,
        method: Option<String>,
        m: Option<usize>,
        plan: Option<String>,
        plane: Option<String>,
        predictor: Vec<String>,
        seeds: Option<Vec<u64>>,
        inputs: InputPaths,
        out: Option<PathBuf>,
        threads: Option<usize>,
        workdir: Option<PathBuf>,
    ) -> Self {
        if method.is_some() {
            self.method = method;
        }
        if m.is_some() {
            self.m = m;
        }
        if plan.is_some() {
            self.plan = plan;
        }
        if plane.is_some() {
            self.plane = plane;
        }
        if !predictor.is_empty() {
            self.predictor = predictor;
        }
        if seeds.is_some() {
            self.seeds = seeds;
        }
        if inputs.t1n.is_some() {
            self.inputs.t1n = inputs.t1n;
        }
        if inputs.t2w.is_some() {
            self.inputs.t2w = inputs.t2w;
        }
        if inputs.t2f.is_some() {
            self.inputs.t2f = inputs.t2f;
        }
        if inputs.t1c.is_some() {
            self.inputs.t1c = inputs.t1c;
        }
        if inputs.segmentation.is_some() {
            self.inputs.segmentation = inputs.segmentation;
        }
        if out.is_some() {
            self.out = out;
        }
        if threads.is_some() {
            self.threads = threads;
        }
        if workdir.is_some() {
            self.workdir = workdir;
        }
        self
    }
}

/// Parse a slicing-plan spec: `canonical`, `canonical:<angle>`, `principal`,
/// a single plane name, or a path to a JSON plane list.
pub fn parse_plan(spec: &str) -> Result<SlicingPlan> {
    let spec = spec.trim();
    if let Some(angle) = spec.strip_prefix("canonical:") {
        let angle: f64 = angle.parse().map_err(|_| {
            MafError::Parameter(format!("invalid canonical plan angle '{angle}'"))
        })?;
        return canonical_maf_plan_with_angle(angle);
    }
    match spec {
        "canonical" => return canonical_maf_plan_with_angle(45.0),
        "principal" => return Ok(SlicingPlan::principal()),
        _ => {}
    }
    if let Ok(plane) = parse_plane(spec) {
        return SlicingPlan::new(vec![plane]);
    }
    if spec.ends_with(".json") {
        let path = Path::new(spec);
        let text = std::fs::read_to_string(path).map_err(|e| MafError::io(path, e))?;
        let raw: Vec<PlaneSpec> = serde_json::from_str(&text)
            .map_err(|e| MafError::format(path, format!("invalid plan JSON: {e}")))?;
        let planes = raw
            .into_iter()
            .map(|p| p.into_plane())
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.context(&format!("{}", path.display())))?;
        return SlicingPlan::new(planes);
    }
    Err(MafError::Parameter(format!(
        "unknown plan spec '{spec}' (expected canonical[:angle], principal, a plane name, or a .json plane list)"
    )))
}

/// One plane entry in a JSON plan file.
#[derive(Debug, Serialize, Deserialize)]
struct PlaneSpec {
    kind: PlaneKind,
    #[serde(default)]
    rotation: Option<RotationSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RotationSpec {
    axis: Axis,
    angle_degrees: f64,
}

impl PlaneSpec {
    fn into_plane(self) -> Result<SlicingPlane> {
        match self.rotation {
            None => Ok(SlicingPlane::principal(self.kind)),
            Some(r) => SlicingPlane::oblique(
                self.kind,
                RigidRotation::new(r.axis, r.angle_degrees),
            ),
        }
    }
}

/// Parse a plane spec: `axial`, `sagittal`, `coronal`, optionally with an
/// oblique pre-rotation suffix like `axial+x45` or `coronal+z-30`.
pub fn parse_plane(spec: &str) -> Result<SlicingPlane> {
    let spec = spec.trim();
    let (kind_str, rot) = match spec.split_once('+') {
        Some((k, r)) => (k, Some(r)),
        None => (spec, None),
    };
    let kind = match kind_str {
        "axial" => PlaneKind::Axial,
        "sagittal" => PlaneKind::Sagittal,
        "coronal" => PlaneKind::Coronal,
        other => {
            return Err(MafError::Parameter(format!(
                "unknown plane '{other}' (expected axial, sagittal or coronal)"
            )))
        }
    };
    match rot {
        None => Ok(SlicingPlane::principal(kind)),
        Some(r) => {
            let mut chars = r.chars();
            let axis = match chars.next() {
                Some('x') => Axis::X,
                Some('y') => Axis::Y,
                Some('z') => Axis::Z,
                _ => {
                    return Err(MafError::Parameter(format!(
                        "invalid rotation suffix '{r}' (expected e.g. x45, z-30)"
                    )))
                }
            };
            let angle: f64 = chars.as_str().parse().map_err(|_| {
                MafError::Parameter(format!("invalid rotation angle in '{r}'"))
            })?;
            SlicingPlane::oblique(kind, RigidRotation::new(axis, angle))
        }
    }
}

/// Parse a predictor spec into a boxed predictor.
///
/// `identity`, `affine:a,b`, `blur:sigma` and `noise:sigma[,seed]` build
/// analytic predictors; `external:<command...>` (deterministic) and
/// `external-stochastic:<command...>` shell out per slice set, using
/// `workdir` for request/response exchanges.
pub fn parse_predictor(spec: &str, workdir: &Path) -> Result<Box<dyn SlicePredictor>> {
    let spec = spec.trim();
    for (prefix, stochastic) in [("external:", false), ("external-stochastic:", true)] {
        if let Some(rest) = spec.strip_prefix(prefix) {
            let argv: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
            let p = external_predictor(&argv, workdir)?.with_stochastic(stochastic);
            return Ok(Box::new(p));
        }
    }
    let analytic: AnalyticSpec = spec.parse()?;
    analytic_predictor(&analytic)
}

/// A fully validated fusion run.
pub struct ValidatedRun {
    pub method: FusionMethod,
    pub m: usize,
    pub predictors: Vec<Box<dyn SlicePredictor>>,
    pub predictor_specs: Vec<String>,
    pub plan: Option<SlicingPlan>,
    pub plan_spec: Option<String>,
    pub plane: SlicingPlane,
    pub plane_spec: String,
    pub seeds: Option<Vec<SampleSeed>>,
    pub input_paths: [PathBuf; 3],
    pub out: PathBuf,
    pub config: RunConfig,
}

/// Check the method-specific invariants and materialize the run objects.
pub fn validate_run(config: RunConfig) -> CliResult<ValidatedRun> {
    let method: FusionMethod = config
        .method
        .as_deref()
        .ok_or_else(|| CliError::validation("method is required (--method or config)"))?
        .parse()
        .map_err(CliError::from)?;
    let out = config
        .out
        .clone()
        .ok_or_else(|| CliError::validation("output directory is required (--out or config)"))?;
    let input_paths = config.inputs.required_triple()?;
    let workdir = config
        .workdir
        .clone()
        .unwrap_or_else(|| out.join("predictor-io"));

    if config.predictor.is_empty() {
        return Err(CliError::validation(
            "at least one predictor spec is required (--predictor or config)",
        ));
    }

    let plane_spec = config.plane.clone().unwrap_or_else(|| "axial".to_string());
    let plane = parse_plane(&plane_spec).map_err(CliError::from)?;

    let mut plan = None;
    let mut plan_spec = None;
    let mut seeds = None;
    let m;

    match method {
        FusionMethod::MultiAxisFusion => {
            let spec = config.plan.clone().unwrap_or_else(|| "canonical".to_string());
            let parsed = parse_plan(&spec).map_err(CliError::from)?;
            if let Some(requested) = config.m {
                if requested != parsed.len() {
                    return Err(CliError::validation(format!(
                        "maf sample count comes from the plan: plan '{spec}' has {} planes but m = {requested}",
                        parsed.len()
                    )));
                }
            }
            if config.predictor.len() != 1 {
                return Err(CliError::validation(format!(
                    "maf takes exactly one predictor spec, got {}",
                    config.predictor.len()
                )));
            }
            m = parsed.len();
            plan = Some(parsed);
            plan_spec = Some(spec);
        }
        FusionMethod::McDropout => {
            if config.predictor.len() != 1 {
                return Err(CliError::validation(format!(
                    "mc-dropout takes exactly one predictor spec, got {}",
                    config.predictor.len()
                )));
            }
            m = config.m.unwrap_or(9);
            let list: Vec<u64> = match &config.seeds {
                Some(s) => s.clone(),
                None => (1..=m as u64).collect(),
            };
            if list.len() != m {
                return Err(CliError::validation(format!(
                    "mc-dropout needs exactly m = {m} seeds, got {}",
                    list.len()
                )));
            }
            for i in 0..list.len() {
                for j in (i + 1)..list.len() {
                    if list[i] == list[j] {
                        return Err(CliError::validation(format!(
                            "mc-dropout seeds must be pairwise distinct; {} repeats",
                            list[i]
                        )));
                    }
                }
            }
            seeds = Some(list.into_iter().map(SampleSeed).collect());
        }
        FusionMethod::DeepEnsemble => {
            m = config.m.unwrap_or(config.predictor.len());
            if config.predictor.len() != m {
                return Err(CliError::validation(format!(
                    "ensemble needs exactly m = {m} predictor specs, got {}",
                    config.predictor.len()
                )));
            }
        }
    }

    let predictors = config
        .predictor
        .iter()
        .map(|spec| parse_predictor(spec, &workdir))
        .collect::<Result<Vec<_>>>()
        .map_err(CliError::from)?;

    if method == FusionMethod::McDropout && !predictors[0].is_stochastic() {
        return Err(CliError::validation(format!(
            "mc-dropout requires a stochastic predictor; '{}' is deterministic \
             (use noise:sigma[,seed] or external-stochastic:...)",
            config.predictor[0]
        )));
    }

    Ok(ValidatedRun {
        method,
        m,
        predictor_specs: config.predictor.clone(),
        predictors,
        plan,
        plan_spec,
        plane,
        plane_spec,
        seeds,
        input_paths,
        out,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> RunConfig {
        RunConfig {
            method: Some("maf".into()),
            predictor: vec!["identity".into()],
            inputs: InputPaths {
                t1n: Some("a.rvol".into()),
                t2w: Some("b.rvol".into()),
                t2f: Some("c.rvol".into()),
                ..Default::default()
            },
            out: Some("out".into()),
            ..Default::default()
        }
    }

    #[test]
    fn plan_specs_parse() {
        assert_eq!(parse_plan("canonical").unwrap().len(), 9);
        assert_eq!(parse_plan("canonical:-45").unwrap().len(), 9);
        assert_eq!(parse_plan("principal").unwrap().len(), 3);
        assert_eq!(parse_plan("axial").unwrap().len(), 1);
        assert!(parse_plan("bogus").is_err());
    }

    #[test]
    fn plane_specs_parse() {
        assert_eq!(
            parse_plane("axial").unwrap(),
            SlicingPlane::principal(PlaneKind::Axial)
        );
        let oblique = parse_plane("coronal+z-30").unwrap();
        assert_eq!(oblique.kind, PlaneKind::Coronal);
        assert_eq!(
            oblique.pre_rotation,
            Some(RigidRotation::new(Axis::Z, -30.0))
        );
        // Rotation about the plane normal is rejected.
        assert!(parse_plane("axial+z45").is_err());
        assert!(parse_plane("axial+q45").is_err());
    }

    #[test]
    fn maf_defaults_to_canonical_plan() {
        let run = validate_run(base_config()).unwrap();
        assert_eq!(run.m, 9);
        assert_eq!(run.plan.as_ref().unwrap().len(), 9);
        assert_eq!(run.plan_spec.as_deref(), Some("canonical"));
    }

    #[test]
    fn maf_rejects_m_plan_mismatch() {
        let mut cfg = base_config();
        cfg.plan = Some("principal".into());
        cfg.m = Some(9);
        assert!(matches!(
            validate_run(cfg),
            Err(CliError::Validation(_))
        ));
    }

    #[test]
    fn mc_dropout_seed_rules() {
        let mut cfg = base_config();
        cfg.method = Some("mc-dropout".into());
        cfg.predictor = vec!["noise:0.1,7".into()];
        let run = validate_run(cfg.clone()).unwrap();
        assert_eq!(run.seeds.as_ref().unwrap().len(), 9);

        cfg.seeds = Some(vec![1, 2, 2]);
        cfg.m = Some(3);
        match validate_run(cfg.clone()) {
            Err(e) => assert!(e.render().contains("distinct"), "{}", e.render()),
            Ok(_) => panic!("duplicate seeds must be rejected"),
        }

        cfg.seeds = Some(vec![1, 2]);
        assert!(validate_run(cfg.clone()).is_err());

        cfg.seeds = None;
        cfg.m = Some(4);
        cfg.predictor = vec!["identity".into()];
        match validate_run(cfg) {
            Err(e) => assert!(e.render().contains("stochastic"), "{}", e.render()),
            Ok(_) => panic!("deterministic predictor must be rejected for mc-dropout"),
        }
    }

    #[test]
    fn ensemble_member_count_rules() {
        let mut cfg = base_config();
        cfg.method = Some("ensemble".into());
        cfg.predictor = vec!["affine:1,0".into(), "affine:1,2".into()];
        let run = validate_run(cfg.clone()).unwrap();
        assert_eq!(run.m, 2);

        cfg.m = Some(3);
        assert!(validate_run(cfg).is_err());
    }

    #[test]
    fn config_overrides_prefer_flags() {
        let cfg = base_config().override_with(
            Some("ensemble".into()),
            Some(2),
            None,
            Some("coronal".into()),
            vec!["affine:1,0".into(), "affine:1,2".into()],
            None,
            InputPaths::default(),
            Some("elsewhere".into()),
            Some(2),
            None,
        );
        assert_eq!(cfg.method.as_deref(), Some("ensemble"));
        assert_eq!(cfg.out.as_deref(), Some(Path::new("elsewhere")));
        assert_eq!(cfg.plane.as_deref(), Some("coronal"));
        // Untouched fields survive.
        assert_eq!(cfg.inputs.t1n.as_deref(), Some(Path::new("a.rvol")));
    }

    #[test]
    fn config_round_trips_through_toml_and_json() {
        let cfg = base_config();
        let tmp = tempfile::tempdir().unwrap();
        let toml_path = tmp.path().join("run.toml");
        std::fs::write(&toml_path, toml::to_string(&cfg).unwrap()).unwrap();
        let loaded = RunConfig::load(&toml_path).unwrap();
        assert_eq!(loaded.method, cfg.method);
        assert_eq!(loaded.inputs.t1n, cfg.inputs.t1n);

        let json_path = tmp.path().join("run.json");
        std::fs::write(&json_path, serde_json::to_string(&cfg).unwrap()).unwrap();
        let loaded = RunConfig::load(&json_path).unwrap();
        assert_eq!(loaded.out, cfg.out);
    }
}
