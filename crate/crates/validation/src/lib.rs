//! Shared pieces of the acceptance run: result lines and the synthetic
//! scenes the criteria are measured on.

use std::fmt;
use std::time::Instant;

use kbsnmf_cli::commands::{build_scene, noise_seed};
use kbsnmf_cli::manifest::SynthPlan;
use kbsnmf_core::synth::bundled_library;
use kbsnmf_core::{AbundanceMatrix64, EndmemberMatrix64, SpectralCube64, SynthSpec};

/// Measured outcome of one criterion.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: u32,
    pub title: &'static str,
    pub pass: bool,
    /// Measured values next to their thresholds.
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:>2} {}: {} [{:.1} s]",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.detail,
            self.seconds
        )
    }
}

/// Runs `check`, timing it; an `Err` or a panic counts as a failure.
pub fn measure(id: u32, title: &'static str, check: impl FnOnce() -> Result<(bool, String), String>) -> Outcome {
    let start = Instant::now();
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check));
    let seconds = start.elapsed().as_secs_f64();
    let (pass, detail) = match result {
        Ok(Ok(v)) => v,
        Ok(Err(e)) => (false, format!("error: {e}")),
        Err(_) => (false, "panicked".to_string()),
    };
    Outcome {
        id,
        title,
        pass,
        detail,
        seconds,
    }
}

/// Square scene of `r` endmembers from the bundled library; `snr_db` of
/// `None` leaves it clean. Noise seeding follows the `synth` command.
pub fn scene(
    r: usize,
    side: usize,
    bands: usize,
    snr_db: Option<f64>,
    seed: u64,
) -> kbsnmf_cli::CliResult<(SpectralCube64, EndmemberMatrix64, AbundanceMatrix64)> {
    let mut spec = SynthSpec::new(r, side, side, seed);
    spec.bands = Some(bands);
    let plan = SynthPlan {
        spec,
        snr_db,
        noise_seed: noise_seed(seed),
        library: "bundled".into(),
    };
    build_scene(&plan, &bundled_library())
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
