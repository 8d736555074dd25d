//! `maf fuse`: run one uncertainty estimator and persist prediction,
//! uncertainty and contribution volumes plus a replayable run manifest.

use serde::Serialize;

use maf_core::fusion::{fuse_ensemble, fuse_maf, fuse_mc_dropout, FusionMethod, FusionResult};
use maf_core::io::{read_volume, write_volume, VolumeFormat};
use maf_core::predictor::PredictorBank;
use maf_core::Volume3;

use crate::commands::{ensure_dir, write_text};
use crate::config::{validate_run, RunConfig, ValidatedRun};
use crate::error::{CliError, CliResult};

#[derive(Serialize)]
struct RunManifest<'a> {
    version: &'a str,
    #[serde(flatten)]
    config: RunConfig,
    predictor_identity: Vec<String>,
    plan_planes: Option<Vec<String>>,
    invalid_policy: &'a str,
    artifacts: [&'a str; 3],
}

pub fn run(config: RunConfig) -> CliResult<()> {
    let mut run = validate_run(config)?;
    let predictor_identity: Vec<String> = run.predictors.iter().map(|p| p.name()).collect();
    let seqs = load_sequences(&run)?;
    ensure_dir(&run.out)?;

    let result = execute(&mut run, &seqs)?;

    // Outputs follow the first input's container format.
    let ext = VolumeFormat::from_path(&run.input_paths[0])?.extension();
    let artifacts = [
        ("prediction", &result.prediction),
        ("uncertainty", &result.uncertainty),
        ("contributions", &result.contributions),
    ];
    for (name, vol) in artifacts {
        write_volume(&run.out.join(format!("{name}.{ext}")), vol)?;
    }

    write_manifest(&run, predictor_identity)?;
    println!(
        "{} fused {} samples; artifacts in {}",
        result.method,
        result.m_samples,
        run.out.display()
    );
    Ok(())
}

fn load_sequences(run: &ValidatedRun) -> CliResult<[Volume3; 3]> {
    let mut vols = Vec::with_capacity(3);
    for path in &run.input_paths {
        vols.push(read_volume(path)?);
    }
    Ok(vols.try_into().expect("three inputs"))
}

fn execute(run: &mut ValidatedRun, seqs: &[Volume3; 3]) -> CliResult<FusionResult> {
    let result = match run.method {
        FusionMethod::MultiAxisFusion => fuse_maf(
            run.predictors[0].as_ref(),
            seqs,
            run.plan.as_ref().expect("validated plan"),
        )?,
        FusionMethod::McDropout => fuse_mc_dropout(
            run.predictors[0].as_ref(),
            seqs,
            &run.plane,
            run.seeds.as_deref().expect("validated seeds"),
        )?,
        FusionMethod::DeepEnsemble => {
            let members = std::mem::take(&mut run.predictors);
            let bank = PredictorBank::new(members)
                .map_err(|e| CliError::validation(format!("ensemble bank: {e}")))?;
            fuse_ensemble(&bank, seqs, &run.plane)?
        }
    };
    Ok(result)
}

fn write_manifest(run: &ValidatedRun, predictor_identity: Vec<String>) -> CliResult<()> {
    // Fully resolved config: loading this manifest as --config replays the run.
    let resolved = RunConfig {
        method: Some(run.method.label().to_string()),
        m: Some(run.m),
        plan: run.plan_spec.clone(),
        plane: Some(run.plane_spec.clone()),
        predictor: run.predictor_specs.clone(),
        seeds: run
            .seeds
            .as_ref()
            .map(|s| s.iter().map(|seed| seed.0).collect()),
        inputs: run.config.inputs.clone(),
        out: Some(run.out.clone()),
        threads: run.config.threads,
        workdir: run.config.workdir.clone(),
    };
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION"),
        config: resolved,
        predictor_identity,
        plan_planes: run
            .plan
            .as_ref()
            .map(|plan| plan.planes().iter().map(|p| p.label()).collect()),
        invalid_policy:
            "voxels invalidated by rotation are excluded from fusion; variance requires >= 2 contributions",
        artifacts: ["prediction", "uncertainty", "contributions"],
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_text(&run.out.join("manifest.json"), &(json + "\n"))
}
