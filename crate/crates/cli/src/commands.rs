//! `synth`, `unmix`, `eval` and `replay`.

use std::fs;
use std::path::{Path, PathBuf};

use kbsnmf_core::io::{self, RunReport, RunSummary, Traces};
use kbsnmf_core::model::{AbundanceMatrix, EndmemberMatrix, SolverConfig, SpectralCube};
use kbsnmf_core::synth::{self, bundled_library, SpectralLibrary, SynthSpec};
use kbsnmf_core::{metrics, solve, UnmixResult};
use log::info;

use crate::args::{EvalArgs, SceneArgs, SolverArgs, SynthArgs, UnmixArgs};
use crate::error::{CliError, CliResult};
use crate::manifest::{Manifest, Plan, SynthPlan, UnmixPlan};

pub const CUBE_FILE: &str = "cube.hsb";
pub const ENDMEMBERS_FILE: &str = "endmembers.csv";
pub const ABUNDANCES_FILE: &str = "abundances.hsb";
pub const REPORT_FILE: &str = "report.json";

/// Keeps noise draws independent of the abundance stream of the same seed.
const NOISE_STREAM: u64 = 0x6e6f_6973_6531;

pub fn noise_seed(scene_seed: u64) -> u64 {
    scene_seed ^ NOISE_STREAM
}

pub fn load_library(source: &str) -> CliResult<SpectralLibrary> {
    if source == "bundled" {
        Ok(bundled_library())
    } else {
        Ok(io::read_spectra(source)?)
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

pub(crate) fn scene_spec(scene: &SceneArgs, seed: u64) -> SynthSpec {
    let mut spec = SynthSpec::new(scene.endmembers, scene.size.rows, scene.size.cols, seed);
    spec.bands = scene.bands;
    spec.field_scale = scene.field_scale;
    spec.purity = scene.purity;
    spec.contrast = scene.contrast;
    spec
}

pub(crate) fn solver_config(args: &SolverArgs, seed: u64) -> SolverConfig {
    let defaults = SolverConfig::for_variant(args.variant);
    SolverConfig {
        gamma: args.gamma.unwrap_or(defaults.gamma),
        theta: args.theta.unwrap_or(defaults.theta),
        t_max: args.max_iters,
        c_min: args.tol,
        init: args.init,
        seed,
        epsilon_guard: args.epsilon,
        compensate_normalization: !args.no_compensate,
        stop_on: args.stop_on.into(),
        zero_fill: args.zero_fill.into(),
        ..defaults
    }
}

/// Noisy scene plus ground truth for a plan.
pub fn build_scene(
    plan: &SynthPlan,
    library: &SpectralLibrary,
) -> CliResult<(SpectralCube<f64>, EndmemberMatrix<f64>, AbundanceMatrix<f64>)> {
    let (clean, a, s) = synth::generate_cube::<f64>(&plan.spec, library)?;
    let cube = match plan.snr_db {
        Some(db) => synth::add_noise(&clean, db, plan.noise_seed, false)?,
        None => clean,
    };
    Ok((cube, a, s))
}

fn abundance_cube(s: &AbundanceMatrix<f64>, rows: usize, cols: usize) -> CliResult<SpectralCube<f64>> {
    Ok(SpectralCube::new(s.data().clone(), rows, cols)?)
}

fn spectra_of(a: &EndmemberMatrix<f64>, wavelengths: Option<&[f64]>) -> CliResult<SpectralLibrary> {
    let names = match a.names() {
        Some(n) => n.to_vec(),
        None => (1..=a.n_endmembers()).map(|i| format!("endmember_{i}")).collect(),
    };
    Ok(SpectralLibrary::new(
        names,
        a.data().clone(),
        wavelengths.map(<[f64]>::to_vec),
    )?)
}

pub fn cmd_synth(args: &SynthArgs) -> CliResult<PathBuf> {
    let plan = SynthPlan {
        spec: scene_spec(&args.scene, args.seed),
        snr_db: args.scene.snr.filter(|v| v.is_finite()),
        noise_seed: noise_seed(args.seed),
        library: args.scene.library.clone(),
    };
    plan.spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    run_synth(&plan, &args.out)
}

pub fn run_synth(plan: &SynthPlan, out: &Path) -> CliResult<PathBuf> {
    let library = load_library(&plan.library)?;
    let (cube, a, s) = build_scene(plan, &library)?;
    create_dir(out)?;
    io::write_cube(&cube, out.join(CUBE_FILE))?;
    io::write_spectra(&spectra_of(&a, cube.wavelengths())?, out.join(ENDMEMBERS_FILE))?;
    io::write_cube(
        &abundance_cube(&s, cube.rows_px(), cube.cols_px())?,
        out.join(ABUNDANCES_FILE),
    )?;
    info!(
        "synth: {} bands, {}x{} pixels, {} endmembers -> {}",
        cube.n_bands(),
        cube.rows_px(),
        cube.cols_px(),
        a.n_endmembers(),
        out.display()
    );
    let outputs = [CUBE_FILE, ENDMEMBERS_FILE, ABUNDANCES_FILE].map(String::from).to_vec();
    Manifest::new(Plan::Synth(plan.clone()), outputs, None).write(out)
}

pub fn cmd_unmix(args: &UnmixArgs) -> CliResult<PathBuf> {
    let config = solver_config(&args.solver, args.seed);
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if args.endmembers == 0 {
        return Err(CliError::Usage("--endmembers must be positive".into()));
    }
    let input = fs::canonicalize(&args.input).map_err(CliError::io(&args.input))?;
    let plan = UnmixPlan {
        input,
        endmembers: args.endmembers,
        config,
    };
    run_unmix(&plan, &args.out)
}

pub fn run_unmix(plan: &UnmixPlan, out: &Path) -> CliResult<PathBuf> {
    let cube: SpectralCube<f64> = io::read_cube(&plan.input)?;
    let cfg = &plan.config;
    info!(
        "unmix: {} variant, gamma {}, theta {}, {} endmembers",
        cfg.variant, cfg.gamma, cfg.theta, plan.endmembers
    );
    let result = solve(&cube, plan.endmembers, cfg)?;
    info!(
        "unmix: {} iterations, stopped by {:?}",
        result.iterations_run, result.termination
    );
    write_unmix_outputs(&cube, &result, plan, out)
}

fn write_unmix_outputs(
    cube: &SpectralCube<f64>,
    result: &UnmixResult<f64>,
    plan: &UnmixPlan,
    out: &Path,
) -> CliResult<PathBuf> {
    create_dir(out)?;
    io::write_spectra(
        &spectra_of(&result.endmembers, cube.wavelengths())?,
        out.join(ENDMEMBERS_FILE),
    )?;
    io::write_cube(
        &abundance_cube(&result.abundances, cube.rows_px(), cube.cols_px())?,
        out.join(ABUNDANCES_FILE),
    )?;
    let summary = RunSummary::from_result(result);
    let report = RunReport {
        config: Some(plan.config.clone()),
        run: Some(summary.clone()),
        evaluation: None,
    };
    let report_path = out.join(REPORT_FILE);
    io::write_report(&report, Some(&Traces::from_result(result)), &report_path)?;
    let traces_name = io::traces_path(&report_path)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let outputs = vec![
        ENDMEMBERS_FILE.to_string(),
        ABUNDANCES_FILE.to_string(),
        REPORT_FILE.to_string(),
        traces_name,
    ];
    Manifest::new(Plan::Unmix(plan.clone()), outputs, Some(summary)).write(out)
}

/// Endmembers and abundances stored in a `synth` or `unmix` directory.
pub fn read_factors(dir: &Path) -> CliResult<(EndmemberMatrix<f64>, AbundanceMatrix<f64>)> {
    let spectra = io::read_spectra(dir.join(ENDMEMBERS_FILE))?;
    let a = EndmemberMatrix::new(spectra.spectra().clone())?.with_names(spectra.names().to_vec())?;
    let s_cube: SpectralCube<f64> = io::read_cube(dir.join(ABUNDANCES_FILE))?;
    let s = AbundanceMatrix::new(s_cube.into_data())?;
    Ok((a, s))
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<metrics::EvaluationReport> {
    let (a_hat, s_hat) = read_factors(&args.extracted)?;
    let (a, s) = read_factors(&args.truth)?;
    let evaluation = metrics::evaluate(&a_hat, &s_hat, &a, &s, args.renormalize.is_on())?;
    info!(
        "eval: SAD {:.4} rad, RMSE {:.4}",
        evaluation.sad_average, evaluation.rmse_average
    );
    let report = RunReport {
        config: None,
        run: None,
        evaluation: Some(evaluation.clone()),
    };
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    io::write_report(&report, None, &args.out)?;
    Ok(evaluation)
}

pub fn cmd_replay(manifest_path: &Path, out: Option<&Path>) -> CliResult<PathBuf> {
    let manifest = Manifest::read(manifest_path)?;
    let out = match out {
        Some(dir) => dir.to_path_buf(),
        None => manifest_path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    info!("replay: {} -> {}", manifest_path.display(), out.display());
    match &manifest.plan {
        Plan::Synth(plan) => run_synth(plan, &out),
        Plan::Unmix(plan) => run_unmix(plan, &out),
    }
}
