//! Subcommand implementations.

pub mod eval;
pub mod fuse;
pub mod phantom;
pub mod preprocess;

use crate::error::{CliError, CliResult};
use std::path::Path;

/// Bound the rayon worker pool; results are identical at any level.
pub fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        // Ignore the error when a pool already exists (e.g. in tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
}

pub fn ensure_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}
