//! Run manifests: everything needed to regenerate a command's outputs.

use std::fs;
use std::path::{Path, PathBuf};

use kbsnmf_core::io::RunSummary;
use kbsnmf_core::model::SolverConfig;
use kbsnmf_core::SynthSpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthPlan {
    pub spec: SynthSpec,
    /// `None` for a clean cube.
    pub snr_db: Option<f64>,
    pub noise_seed: u64,
    /// `bundled` or a spectra file path.
    pub library: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnmixPlan {
    pub input: PathBuf,
    pub endmembers: usize,
    pub config: SolverConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Plan {
    Synth(SynthPlan),
    Unmix(UnmixPlan),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    #[serde(flatten)]
    pub plan: Plan,
    /// File names written next to the manifest.
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunSummary>,
}

impl Manifest {
    pub fn new(plan: Plan, outputs: Vec<String>, run: Option<RunSummary>) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            plan,
            outputs,
            run,
        }
    }

    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(kbsnmf_core::Error::from)?;
        fs::write(&path, text + "\n").map_err(CliError::io(&path))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use kbsnmf_core::model::Variant;

    #[test]
    fn manifest_round_trip() {
        let plan = Plan::Unmix(UnmixPlan {
            input: "/data/cube.hsb".into(),
            endmembers: 3,
            config: SolverConfig::for_variant(Variant::Div),
        });
        let m = Manifest::new(plan, vec!["endmembers.csv".into()], None);
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.contains("\"command\":\"unmix\""));
        let back: Manifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }
}
