//! Subprocess predictor speaking a directory-based exchange format.
//!
//! Per slice set, the engine writes a request directory containing
//! `manifest.json` and `input.bin`, invokes the child command and reads
//! `output.bin` back. `input.bin` holds raw little-endian f32 values in
//! slice-major, then channel-major, then row (y), then column (x) order;
//! `output.bin` uses the same layout with a single channel. Any exit status
//! other than 0 is a failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{MafError, Result};
use crate::slicing::{SlicingPlane, Stack25D, STACK_CHANNELS};

use super::{SampleSeed, SlicePredictor};

/// `manifest.json` written into every request directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RequestManifest {
    pub num_slices: usize,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub seed: Option<u64>,
    pub plane: String,
}

/// Predictor that shells out to an external command per slice set.
///
/// The command is an argv template; every `{dir}` token is replaced by the
/// request directory path, and if no token is present the path is appended
/// as the final argument. The child runs with the request directory as its
/// working directory. Invocations are serialized per instance.
pub struct ExternalPredictor {
    argv: Vec<String>,
    workdir: PathBuf,
    name: String,
    stochastic: bool,
    invoke: Mutex<()>,
}

/// Build an external predictor from an argv template and a scratch directory
/// for request/response exchanges (created if missing).
pub fn external_predictor(command: &[String], workdir: &Path) -> Result<ExternalPredictor> {
    if command.is_empty() || command[0].trim().is_empty() {
        return Err(MafError::Parameter(
            "external predictor command must be non-empty".into(),
        ));
    }
    std::fs::create_dir_all(workdir).map_err(|e| MafError::io(workdir, e))?;
    let program = Path::new(&command[0])
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| command[0].clone());
    Ok(ExternalPredictor {
        argv: command.to_vec(),
        workdir: workdir.to_path_buf(),
        name: format!("external({program})"),
        stochastic: false,
        invoke: Mutex::new(()),
    })
}

impl ExternalPredictor {
    /// Mark this predictor as seed-dependent (the child model applies
    /// dropout or other sampling keyed on the manifest seed).
    pub fn with_stochastic(mut self, stochastic: bool) -> Self {
        self.stochastic = stochastic;
        self
    }

    fn run_once(
        &self,
        stacks: &[Stack25D],
        plane: &SlicingPlane,
        seed: Option<SampleSeed>,
    ) -> Result<Vec<Vec<f32>>> {
        let (w, h) = (stacks[0].width(), stacks[0].height());
        let manifest = RequestManifest {
            num_slices: stacks.len(),
            width: w,
            height: h,
            channels: STACK_CHANNELS,
            seed: seed.map(|s| s.0),
            plane: plane.label(),
        };

        let dir = tempfile::Builder::new()
            .prefix("req-")
            .tempdir_in(&self.workdir)
            .map_err(|e| MafError::io(&self.workdir, e))?;
        let dir_path = dir.path().to_path_buf();

        let manifest_path = dir_path.join("manifest.json");
        let manifest_json = serde_json::to_vec_pretty(&manifest)
            .expect("request manifest serializes");
        std::fs::write(&manifest_path, manifest_json)
            .map_err(|e| MafError::io(&manifest_path, e))?;

        let input_path = dir_path.join("input.bin");
        write_input(&input_path, stacks)?;

        let mut cmd = self.build_command(&dir_path);
        let output = match cmd.output() {
            Ok(o) => o,
            Err(e) => {
                let kept = dir.keep();
                return Err(MafError::External {
                    status: None,
                    details: format!(
                        "failed to launch '{}': {e} (request kept at {})",
                        self.argv[0],
                        kept.display()
                    ),
                });
            }
        };

        if !output.status.success() {
            let kept = dir.keep();
            return Err(MafError::External {
                status: output.status.code(),
                details: format!(
                    "{} (request kept at {})",
                    child_diagnostics(&output.stdout, &output.stderr),
                    kept.display()
                ),
            });
        }

        let output_path = dir_path.join("output.bin");
        let bytes = match std::fs::read(&output_path) {
            Ok(b) => b,
            Err(e) => {
                let kept = dir.keep();
                return Err(MafError::External {
                    status: output.status.code(),
                    details: format!(
                        "child exited 0 but output.bin is unreadable: {e}; {} (request kept at {})",
                        child_diagnostics(&output.stdout, &output.stderr),
                        kept.display()
                    ),
                });
            }
        };

        let per_slice = w * h * 4;
        let expected = stacks.len() * per_slice;
        if bytes.len() != expected {
            let detail = if per_slice > 0 && bytes.len() % (stacks.len() * per_slice) == 0 {
                let channels = bytes.len() / (stacks.len() * per_slice);
                format!("output.bin holds {channels} channels per slice, exactly 1 allowed")
            } else {
                format!(
                    "output.bin is {} bytes, expected {expected} ({} slices of {w}x{h} f32)",
                    bytes.len(),
                    stacks.len()
                )
            };
            let kept = dir.keep();
            return Err(MafError::External {
                status: output.status.code(),
                details: format!(
                    "{detail}; {} (request kept at {})",
                    child_diagnostics(&output.stdout, &output.stderr),
                    kept.display()
                ),
            });
        }

        let mut result = Vec::with_capacity(stacks.len());
        for s in 0..stacks.len() {
            let start = s * per_slice;
            let slice: Vec<f32> = bytes[start..start + per_slice]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            result.push(slice);
        }
        Ok(result)
    }

    fn build_command(&self, dir: &Path) -> Command {
        let dir_str = dir.to_string_lossy();
        let mut args: Vec<String> = Vec::with_capacity(self.argv.len() + 1);
        let mut substituted = false;
        for token in &self.argv {
            if token.contains("{dir}") {
                substituted = true;
                args.push(token.replace("{dir}", &dir_str));
            } else {
                args.push(token.clone());
            }
        }
        if !substituted {
            args.push(dir_str.into_owned());
        }
        let mut cmd = Command::new(&args[0]);
        cmd.args(&args[1..]).current_dir(dir);
        cmd
    }
}

fn write_input(path: &Path, stacks: &[Stack25D]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| MafError::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for stack in stacks {
        for channel in stack.channels() {
            for &v in channel.data() {
                out.write_all(&v.to_le_bytes())
                    .map_err(|e| MafError::io(path, e))?;
            }
        }
    }
    out.flush().map_err(|e| MafError::io(path, e))
}

fn child_diagnostics(stdout: &[u8], stderr: &[u8]) -> String {
    const LIMIT: usize = 2000;
    let mut text = String::new();
    for (label, bytes) in [("stderr", stderr), ("stdout", stdout)] {
        let trimmed = String::from_utf8_lossy(bytes);
        let trimmed = trimmed.trim();
        if !trimmed.is_empty() {
            if !text.is_empty() {
                text.push_str("; ");
            }
            let mut snippet = trimmed.to_string();
            if snippet.len() > LIMIT {
                snippet.truncate(LIMIT);
                snippet.push_str("...");
            }
            text.push_str(label);
            text.push_str(": ");
            text.push_str(&snippet.replace('\n', " | "));
        }
    }
    if text.is_empty() {
        text.push_str("no child diagnostics");
    }
    text
}

impl SlicePredictor for ExternalPredictor {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn is_stochastic(&self) -> bool {
        self.stochastic
    }

    fn predict_set(
        &self,
        stacks: &[Stack25D],
        plane: &SlicingPlane,
        seed: Option<SampleSeed>,
    ) -> Result<Vec<Vec<f32>>> {
        if stacks.is_empty() {
            return Ok(Vec::new());
        }
        let _serial = self.invoke.lock().expect("external predictor lock");
        self.run_once(stacks, plane, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{analytic_predictor, predict_sliceset, AnalyticSpec};
    use crate::slicing::PlaneKind;
    use crate::volume::{Dims3, Volume3};

    fn write_script(dir: &Path, name: &str, body: &str) -> Vec<String> {
        let path = dir.join(name);
        std::fs::write(&path, body).unwrap();
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
        }
        vec![path.to_string_lossy().into_owned()]
    }

    fn test_seqs() -> [Volume3; 3] {
        let d = Dims3::new(6, 5, 4);
        let a = Volume3::from_fn(d, [1.0; 3], |x, y, z| (x + 2 * y + 3 * z) as f32 * 0.5).unwrap();
        let b = Volume3::from_fn(d, [1.0; 3], |x, y, z| (3 * x + y + z) as f32 * 0.25).unwrap();
        let c = Volume3::from_fn(d, [1.0; 3], |x, y, z| (x * y + z) as f32 * 0.125).unwrap();
        [a, b, c]
    }

    // Copies the center channel (channel index 1 of 9) of every slice using
    // the manifest for geometry; equivalent to identity-center-channel.
    const ECHO_CENTER: &str = r#"#!/bin/sh
python3 - <<'PY'
import json, struct
m = json.load(open("manifest.json"))
n, w, h, c = m["num_slices"], m["width"], m["height"], m["channels"]
frame = w * h * 4
data = open("input.bin", "rb").read()
out = bytearray()
for s in range(n):
    base = s * c * frame + 1 * frame
    out += data[base:base + frame]
open("output.bin", "wb").write(bytes(out))
PY
"#;

    #[test]
    fn echo_script_matches_identity_predictor() {
        let tmp = tempfile::tempdir().unwrap();
        let argv = write_script(tmp.path(), "echo_center.sh", ECHO_CENTER);
        let external = external_predictor(&argv, &tmp.path().join("io")).unwrap();
        let ident = analytic_predictor(&AnalyticSpec::IdentityCenterChannel).unwrap();

        let seqs = test_seqs();
        for kind in PlaneKind::ALL {
            let plane = SlicingPlane::principal(kind);
            let got = predict_sliceset(&external, &seqs, &plane, None).unwrap();
            let want = predict_sliceset(ident.as_ref(), &seqs, &plane, None).unwrap();
            assert_eq!(got, want, "plane {kind}");
        }
    }

    #[test]
    fn nonzero_exit_carries_status_and_diagnostics() {
        let tmp = tempfile::tempdir().unwrap();
        let argv = write_script(
            tmp.path(),
            "fail.sh",
            "#!/bin/sh\necho boom-diagnostic >&2\nexit 7\n",
        );
        let external = external_predictor(&argv, &tmp.path().join("io")).unwrap();
        let seqs = test_seqs();
        let plane = SlicingPlane::principal(PlaneKind::Axial);
        let err = predict_sliceset(&external, &seqs, &plane, None).unwrap_err();
        match err {
            MafError::External { status, details } => {
                assert_eq!(status, Some(7));
                assert!(details.contains("boom-diagnostic"), "details: {details}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn two_channel_response_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        // Writes the center channel twice: a 2-channel response.
        let body = r#"#!/bin/sh
python3 - <<'PY'
import json
m = json.load(open("manifest.json"))
n, w, h, c = m["num_slices"], m["width"], m["height"], m["channels"]
frame = w * h * 4
data = open("input.bin", "rb").read()
out = bytearray()
for s in range(n):
    base = s * c * frame + 1 * frame
    out += data[base:base + frame] * 2
open("output.bin", "wb").write(bytes(out))
PY
"#;
        let argv = write_script(tmp.path(), "two_channel.sh", body);
        let external = external_predictor(&argv, &tmp.path().join("io")).unwrap();
        let seqs = test_seqs();
        let plane = SlicingPlane::principal(PlaneKind::Axial);
        let err = predict_sliceset(&external, &seqs, &plane, None).unwrap_err();
        match err {
            MafError::External { details, .. } => {
                assert!(details.contains("2 channels"), "details: {details}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn seed_reaches_manifest() {
        let tmp = tempfile::tempdir().unwrap();
        // Emits a constant slice whose value is the seed read from the manifest.
        let body = r#"#!/bin/sh
python3 - <<'PY'
import json, struct
m = json.load(open("manifest.json"))
n, w, h = m["num_slices"], m["width"], m["height"]
seed = m["seed"] if m["seed"] is not None else -1
open("output.bin", "wb").write(struct.pack("<f", float(seed)) * (n * w * h))
PY
"#;
        let argv = write_script(tmp.path(), "seed_echo.sh", body);
        let external = external_predictor(&argv, &tmp.path().join("io")).unwrap();
        let seqs = test_seqs();
        let plane = SlicingPlane::principal(PlaneKind::Axial);
        let out = predict_sliceset(&external, &seqs, &plane, Some(SampleSeed(42))).unwrap();
        assert!(out
            .slices()
            .iter()
            .all(|s| s.data().iter().all(|&v| v == 42.0)));
    }

    #[test]
    fn empty_command_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(external_predictor(&[], tmp.path()).is_err());
        assert!(external_predictor(&[" ".into()], tmp.path()).is_err());
    }
}
