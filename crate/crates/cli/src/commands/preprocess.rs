//! `maf preprocess`: landmark training and the three-step standardization
//! (histogram landmarks, joint min-max over inputs, range shift).

use std::path::{Path, PathBuf};

use serde::Serialize;

use maf_core::io::{read_volume, write_volume, VolumeFormat};
use maf_core::preprocess::{
    minmax_shift, nyul_apply, nyul_train, LandmarkDocument, MinMaxParams, NyulConfig,
};
use maf_core::Volume3;

use crate::commands::{ensure_dir, write_text};
use crate::error::{CliError, CliResult};

pub struct PreprocessInputs {
    pub t1n: Vec<PathBuf>,
    pub t2w: Vec<PathBuf>,
    pub t2f: Vec<PathBuf>,
    pub t1c: Vec<PathBuf>,
}

impl PreprocessInputs {
    fn by_sequence(&self) -> [(&'static str, &[PathBuf]); 4] {
        [
            ("t1n", &self.t1n),
            ("t2w", &self.t2w),
            ("t2f", &self.t2f),
            ("t1c", &self.t1c),
        ]
    }
}

/// Train landmarks per sequence over a cohort of volumes and save them as a
/// JSON document.
pub fn train_landmarks(inputs: &PreprocessInputs, out: &Path) -> CliResult<()> {
    let cfg = NyulConfig::default();
    let mut doc = LandmarkDocument::default();
    for (name, paths) in inputs.by_sequence() {
        if paths.is_empty() {
            continue;
        }
        let volumes = paths
            .iter()
            .map(|p| read_volume(p))
            .collect::<maf_core::Result<Vec<_>>>()?;
        let trained = nyul_train(&volumes, &cfg).map_err(CliError::from)?;
        for (idx, reason) in &trained.skipped {
            eprintln!(
                "warning: {name} volume {} skipped: {reason}",
                paths[*idx].display()
            );
        }
        doc.insert(name, trained.landmarks);
    }
    if doc.sequences.is_empty() {
        return Err(CliError::validation(
            "no input volumes given; pass --t1n/--t2w/--t2f/--t1c with one path per cohort volume",
        ));
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    doc.save(out)?;
    println!("wrote landmarks for {} sequences to {}", doc.sequences.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct PreprocessManifest<'a> {
    version: &'a str,
    inputs: std::collections::BTreeMap<&'a str, String>,
    landmarks: String,
    minmax: MinMaxParams,
    standard_range: (f64, f64),
    percentiles: &'a [f64],
}

/// Standardize one exam: per-sequence landmark mapping, then the joint
/// min-max shift computed over the three input sequences.
///
/// Landmarks come from `landmark_file` when given, otherwise they are
/// trained from this exam's own volumes (single-volume cohorts) and the
/// trained document is persisted alongside the outputs. Deterministic:
/// identical inputs produce byte-identical outputs.
pub fn apply(
    inputs: &PreprocessInputs,
    landmark_file: Option<&Path>,
    out: &Path,
) -> CliResult<()> {
    for (name, paths) in inputs.by_sequence() {
        let required = name != "t1c";
        if required && paths.len() != 1 {
            return Err(CliError::validation(format!(
                "preprocess needs exactly one --{name} input, got {}",
                paths.len()
            )));
        }
        if !required && paths.len() > 1 {
            return Err(CliError::validation(format!(
                "preprocess takes at most one --{name} input, got {}",
                paths.len()
            )));
        }
    }

    let cfg = NyulConfig::default();
    ensure_dir(out)?;

    let mut volumes: Vec<(&'static str, &PathBuf, Volume3)> = Vec::new();
    for (name, paths) in inputs.by_sequence() {
        if let Some(path) = paths.first() {
            volumes.push((name, path, read_volume(path)?));
        }
    }

    // Landmarks: reuse a trained document or self-train per sequence.
    let (doc, landmarks_source) = match landmark_file {
        Some(path) => {
            let doc = LandmarkDocument::load(path)?;
            for (name, _, _) in &volumes {
                if doc.get(name).is_none() {
                    return Err(CliError::validation(format!(
                        "{}: no landmarks for sequence '{name}'",
                        path.display()
                    )));
                }
            }
            (doc, path.display().to_string())
        }
        None => {
            let mut doc = LandmarkDocument::default();
            for (name, _, vol) in &volumes {
                let trained =
                    nyul_train(std::slice::from_ref(vol), &cfg).map_err(|e| {
                        CliError::from(e.context(&format!("training landmarks for {name}")))
                    })?;
                doc.insert(name, trained.landmarks);
            }
            (doc, "self-trained".to_string())
        }
    };

    let mut standardized: Vec<(&'static str, &PathBuf, Volume3)> = Vec::new();
    for (name, path, vol) in &volumes {
        let lms = doc.get(name).expect("checked above");
        let mapped = nyul_apply(vol, lms, &cfg)
            .map_err(|e| CliError::from(e.context(&format!("standardizing {name}"))))?;
        standardized.push((name, path, mapped));
    }

    // Joint min-max over the three inputs, applied to all volumes.
    let input_vols: [Volume3; 3] = [
        standardized[0].2.clone(),
        standardized[1].2.clone(),
        standardized[2].2.clone(),
    ];
    let (mapped_inputs, mapped_target, params) = match standardized.get(3) {
        Some((_, _, t1c)) => {
            let (ins, target, params) = minmax_shift(&input_vols, t1c)?;
            (ins, Some(target), params)
        }
        None => {
            // No target: normalize the inputs alone. Reuse one input as a
            // placeholder target to share the range computation.
            let (ins, _, params) = minmax_shift(&input_vols, &input_vols[0])?;
            (ins, None, params)
        }
    };

    let mut outputs: Vec<(&'static str, &PathBuf, Volume3)> = Vec::new();
    for (i, (name, path, _)) in standardized.iter().take(3).enumerate() {
        outputs.push((name, path, mapped_inputs[i].clone()));
    }
    if let (Some(target), Some((name, path, _))) = (mapped_target, standardized.get(3)) {
        outputs.push((name, path, target));
    }

    let mut manifest_inputs = std::collections::BTreeMap::new();
    for (name, path, vol) in &outputs {
        // Preserve each input's container format.
        let ext = VolumeFormat::from_path(path)?.extension();
        let out_path = out.join(format!("{name}.{ext}"));
        write_volume(&out_path, vol)?;
        manifest_inputs.insert(*name, path.display().to_string());
    }

    doc.save(&out.join("landmarks.json"))?;
    let minmax_json = serde_json::to_string_pretty(&params).expect("params serialize");
    write_text(&out.join("minmax.json"), &(minmax_json + "\n"))?;

    let manifest = PreprocessManifest {
        version: env!("CARGO_PKG_VERSION"),
        inputs: manifest_inputs,
        landmarks: landmarks_source,
        minmax: params,
        standard_range: cfg.standard_range,
        percentiles: &cfg.percentiles,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_text(&out.join("preprocess-manifest.json"), &(json + "\n"))?;

    println!(
        "standardized {} sequences into {} (landmarks: {})",
        outputs.len(),
        out.display(),
        manifest.landmarks
    );
    Ok(())
}
