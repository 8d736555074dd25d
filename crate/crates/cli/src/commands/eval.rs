//! `maf eval`: per-case MAE / mean-uncertainty scores and cohort-level
//! correlation reports from a cases manifest.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use maf_core::io::read_volume;
use maf_core::metrics::{build_rois, build_rois_with_brain, evaluate_cohort, EvalCase};
use maf_core::volume::Mask3;

use crate::commands::{ensure_dir, write_text};
use crate::error::{CliError, CliResult};

/// Cases manifest: paths are resolved relative to the manifest's directory.
#[derive(Debug, Deserialize)]
pub struct CasesFile {
    #[serde(default)]
    pub method: Option<String>,
    pub cases: Vec<CaseEntry>,
}

#[derive(Debug, Deserialize)]
pub struct CaseEntry {
    pub case_id: String,
    pub prediction: PathBuf,
    pub ground_truth: PathBuf,
    pub uncertainty: PathBuf,
    pub segmentation: PathBuf,
    /// Input sequences whose positive support defines the brain mask.
    #[serde(default)]
    pub inputs: Option<[PathBuf; 3]>,
    /// Explicit brain mask (positive voxels), overriding `inputs`.
    #[serde(default)]
    pub brain_mask: Option<PathBuf>,
}

pub fn run(cases_path: &Path, out: &Path, method_flag: Option<String>) -> CliResult<()> {
    let text = std::fs::read_to_string(cases_path)
        .map_err(|e| CliError::io(format!("{}: {e}", cases_path.display())))?;
    let file: CasesFile = serde_json::from_str(&text).map_err(|e| {
        CliError::validation(format!("{}: invalid cases JSON: {e}", cases_path.display()))
    })?;
    if file.cases.is_empty() {
        return Err(CliError::validation(format!(
            "{}: cases list is empty",
            cases_path.display()
        )));
    }
    let method = method_flag
        .or(file.method)
        .unwrap_or_else(|| "unspecified".to_string());
    let base = cases_path.parent().unwrap_or(Path::new("."));

    let mut cases = Vec::new();
    let mut warnings = Vec::new();
    for entry in &file.cases {
        match load_case(base, entry) {
            Ok(case) => cases.push(case),
            // Structural problems within one case degrade to a warning so a
            // single corrupt exam cannot sink the cohort; missing files are
            // hard I/O errors surfaced by load_case.
            Err(CliError::Validation(msg)) => {
                let w = format!("case {}: skipped ({msg})", entry.case_id);
                eprintln!("warning: {w}");
                warnings.push(w);
            }
            Err(other) => return Err(other),
        }
    }
    if cases.is_empty() {
        return Err(CliError::validation("no usable cases in the cohort"));
    }

    let mut report = evaluate_cohort(&cases, &method)?;
    report.warnings.extend(warnings);
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }

    ensure_dir(out)?;
    let csv_path = out.join("records.csv");
    let mut csv_bytes = Vec::new();
    report.write_csv(&mut csv_bytes)?;
    std::fs::write(&csv_path, csv_bytes)
        .map_err(|e| CliError::io(format!("{}: {e}", csv_path.display())))?;
    write_text(&out.join("summary.json"), &(report.summary_json() + "\n"))?;

    for (roi, s) in [("healthy", &report.healthy), ("tumor", &report.tumor)] {
        match (s.pearson, s.kendall) {
            (Some(p), Some(k)) => {
                println!("{roi}: n={} pearson={p:.4} kendall={k:.4}", s.n)
            }
            _ => println!("{roi}: n={} correlations undefined", s.n),
        }
    }
    println!("report written to {}", out.display());
    Ok(())
}

fn load_case(base: &Path, entry: &CaseEntry) -> CliResult<EvalCase> {
    let resolve = |p: &PathBuf| -> PathBuf {
        if p.is_absolute() {
            p.clone()
        } else {
            base.join(p)
        }
    };
    let prediction = read_volume(&resolve(&entry.prediction))?;
    let ground_truth = read_volume(&resolve(&entry.ground_truth))?;
    let uncertainty = read_volume(&resolve(&entry.uncertainty))?;
    let segmentation = read_volume(&resolve(&entry.segmentation))?;

    let rois = match (&entry.brain_mask, &entry.inputs) {
        (Some(mask_path), _) => {
            let mask_vol = read_volume(&resolve(mask_path))?;
            let bits = mask_vol.data().iter().map(|&v| v > 0.0).collect();
            let brain = Mask3::new(mask_vol.dims(), bits).map_err(CliError::from)?;
            build_rois_with_brain(&segmentation, &brain)?
        }
        (None, Some(inputs)) => {
            let vols = [
                read_volume(&resolve(&inputs[0]))?,
                read_volume(&resolve(&inputs[1]))?,
                read_volume(&resolve(&inputs[2]))?,
            ];
            build_rois(&segmentation, &vols)?
        }
        (None, None) => {
            return Err(CliError::validation(
                "case needs either `inputs` (three sequence paths) or `brain_mask`",
            ))
        }
    };

    Ok(EvalCase {
        case_id: entry.case_id.clone(),
        prediction,
        ground_truth,
        uncertainty,
        rois,
    })
}
