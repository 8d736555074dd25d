//! `maf phantom`: deterministic synthetic volumes and cohorts for tests and
//! demos.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use maf_core::io::write_volume;
use maf_core::phantom::{smooth_phantom, synthetic_case};

use crate::commands::{ensure_dir, write_text};
use crate::error::CliResult;

/// Write the smooth test phantom.
pub fn volume(size: usize, out: &Path) -> CliResult<()> {
    let v = smooth_phantom(size);
    write_volume(out, &v)?;
    println!("wrote {} ({}^3 phantom)", out.display(), size);
    Ok(())
}

/// Cohort manifest written next to the generated cases.
#[derive(Debug, Serialize, Deserialize)]
pub struct CohortManifest {
    pub size: usize,
    pub seed: u64,
    pub cases: Vec<CohortCase>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CohortCase {
    pub case_id: String,
    /// Suggested per-case noise level for a stochastic predictor.
    pub sigma: f64,
    pub dir: PathBuf,
}

/// Generate `n_cases` synthetic exams with per-case noise levels spread
/// linearly over [sigma_min, sigma_max].
pub fn cohort(
    n_cases: usize,
    size: usize,
    out: &Path,
    seed: u64,
    sigma_min: f64,
    sigma_max: f64,
) -> CliResult<()> {
    if n_cases == 0 {
        return Err(crate::error::CliError::validation(
            "cohort needs at least one case",
        ));
    }
    if !(sigma_min >= 0.0 && sigma_max >= sigma_min) {
        return Err(crate::error::CliError::validation(format!(
            "invalid sigma range [{sigma_min}, {sigma_max}]"
        )));
    }
    ensure_dir(out)?;
    let mut cases = Vec::with_capacity(n_cases);
    for i in 0..n_cases {
        let case_id = format!("case-{i:02}");
        let dir = out.join(&case_id);
        ensure_dir(&dir)?;
        let case = synthetic_case(size, seed.wrapping_add(i as u64));
        for (name, vol) in [
            ("t1n", &case.t1n),
            ("t2w", &case.t2w),
            ("t2f", &case.t2f),
            ("t1c", &case.t1c),
            ("seg", &case.seg),
        ] {
            write_volume(&dir.join(format!("{name}.rvol")), vol)?;
        }
        let sigma = if n_cases == 1 {
            sigma_min
        } else {
            sigma_min + (sigma_max - sigma_min) * i as f64 / (n_cases as f64 - 1.0)
        };
        cases.push(CohortCase {
            case_id,
            sigma,
            dir: PathBuf::from(format!("case-{i:02}")),
        });
    }
    let manifest = CohortManifest { size, seed, cases };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_text(&out.join("cohort.json"), &(json + "\n"))?;
    println!(
        "wrote {n_cases} cases of {size}^3 under {} (cohort.json has per-case sigmas)",
        out.display()
    );
    Ok(())
}
