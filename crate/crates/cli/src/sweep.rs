//! Parameter grids run as independent seeded cells.
//!
//! The results table has the header [`HEADER`], one row per cell in grid
//! order (the last axis varies fastest). `ok` counts the repeats that
//! finished; a cell with any failed repeat carries the first error message.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use kbsnmf_core::{metrics, solve, solve_baseline, SolverConfig, SynthSpec};
use log::{info, warn};
use rayon::prelude::*;

use crate::args::SweepArgs;
use crate::commands::{build_scene, load_library, noise_seed, scene_spec, solver_config};
use crate::error::{CliError, CliResult};
use crate::manifest::SynthPlan;

pub const HEADER: &str =
    "cell,gamma,theta,snr_db,bands,pixels,endmembers,variant,repeats,ok,mean_sad,min_sad,mean_rmse,min_rmse,error";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisName {
    Gamma,
    Theta,
    Snr,
    Bands,
    Side,
    Endmembers,
}

impl AxisName {
    fn parse(s: &str) -> Result<Self, String> {
        Ok(match s.trim() {
            "gamma" => AxisName::Gamma,
            "theta" => AxisName::Theta,
            "snr" => AxisName::Snr,
            "bands" => AxisName::Bands,
            "side" => AxisName::Side,
            "endmembers" | "r" => AxisName::Endmembers,
            other => return Err(format!("unknown sweep axis {other:?}")),
        })
    }

    fn is_integer(self) -> bool {
        matches!(self, AxisName::Bands | AxisName::Side | AxisName::Endmembers)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub name: AxisName,
    pub values: Vec<f64>,
}

fn parse_number(s: &str) -> Result<f64, String> {
    crate::args::parse_snr(s)
}

/// Inclusive `start:stop:step` range; the count is rounded so that float
/// steps such as 0.1 still land on `stop`.
fn parse_range(spec: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        [v] => Ok(vec![parse_number(v)?]),
        [start, stop, step] => {
            let (start, stop, step) = (parse_number(start)?, parse_number(stop)?, parse_number(step)?);
            if !(start.is_finite() && stop.is_finite() && step.is_finite()) || step <= 0.0 || stop < start {
                return Err(format!("bad range {spec:?}"));
            }
            let steps = ((stop - start) / step + 1e-9).floor() as usize;
            Ok((0..=steps)
                .map(|i| {
                    let v = start + i as f64 * step;
                    // Tame representation noise like 0.30000000000000004.
                    (v * 1e12).round() / 1e12
                })
                .collect())
        }
        _ => Err(format!("expected value or start:stop:step, got {spec:?}")),
    }
}

pub fn parse_grid(grid: &str) -> Result<Vec<Axis>, String> {
    let mut axes: Vec<Axis> = Vec::new();
    for item in grid.split(',').filter(|s| !s.trim().is_empty()) {
        let (name, spec) = item
            .split_once('=')
            .ok_or_else(|| format!("expected name=range, got {item:?}"))?;
        let name = AxisName::parse(name)?;
        if axes.iter().any(|a| a.name == name) {
            return Err(format!("axis {:?} given twice", name));
        }
        let values = parse_range(spec.trim())?;
        if name.is_integer() && values.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
            return Err(format!("axis {name:?} takes positive integers"));
        }
        axes.push(Axis { name, values });
    }
    if axes.is_empty() {
        return Err("empty grid".into());
    }
    Ok(axes)
}

/// One point of the grid with everything needed to run it.
#[derive(Debug, Clone)]
pub struct Cell {
    pub index: usize,
    pub spec: SynthSpec,
    pub snr_db: Option<f64>,
    pub config: SolverConfig,
}

pub fn cells(args: &SweepArgs, axes: &[Axis]) -> Vec<Cell> {
    let total: usize = axes.iter().map(|a| a.values.len()).product();
    (0..total)
        .map(|index| {
            let mut spec = scene_spec(&args.scene, 0);
            let mut snr = args.scene.snr.filter(|v| v.is_finite());
            let mut config = solver_config(&args.solver, 0);
            let mut rest = index;
            for axis in axes.iter().rev() {
                let v = axis.values[rest % axis.values.len()];
                rest /= axis.values.len();
                match axis.name {
                    AxisName::Gamma => config.gamma = v,
                    AxisName::Theta => config.theta = v,
                    AxisName::Snr => snr = Some(v).filter(|v| v.is_finite()),
                    AxisName::Bands => spec.bands = Some(v as usize),
                    AxisName::Side => {
                        spec.rows_px = v as usize;
                        spec.cols_px = v as usize;
                    }
                    AxisName::Endmembers => spec.r = v as usize,
                }
            }
            if args.baseline {
                let base = SolverConfig::baseline(config.variant);
                config.gamma = base.gamma;
                config.theta = base.theta;
                config.compensate_normalization = base.compensate_normalization;
            }
            Cell {
                index,
                spec,
                snr_db: snr,
                config,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub sads: Vec<f64>,
    pub rmses: Vec<f64>,
    pub error: Option<String>,
    pub bands: Option<usize>,
}

impl CellOutcome {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

fn run_repeat(
    args: &SweepArgs,
    cell: &Cell,
    library: &kbsnmf_core::SpectralLibrary,
    seed: u64,
    scene_seed: u64,
) -> CliResult<(f64, f64, usize)> {
    let mut spec = cell.spec.clone();
    spec.seed = scene_seed;
    spec.validate()?;
    let plan = SynthPlan {
        spec,
        snr_db: cell.snr_db,
        noise_seed: noise_seed(scene_seed),
        library: String::new(),
    };
    let (cube, a, s) = build_scene(&plan, library)?;
    let mut config = cell.config.clone();
    config.seed = seed;
    config.validate()?;
    let r = plan.spec.r;
    let result = if args.baseline {
        solve_baseline(&cube, r, &config)?
    } else {
        solve(&cube, r, &config)?
    };
    let report = metrics::match_and_evaluate(&result, &a, &s, args.renormalize.is_on())?;
    Ok((report.sad_average, report.rmse_average, cube.n_bands()))
}

pub fn run_cell(args: &SweepArgs, cell: &Cell, n_cells: usize, library: &kbsnmf_core::SpectralLibrary) -> CellOutcome {
    let mut out = CellOutcome {
        sads: Vec::new(),
        rmses: Vec::new(),
        error: None,
        bands: None,
    };
    for k in 0..args.repeats {
        let seed = args
            .base_seed
            .wrapping_add(cell.index as u64)
            .wrapping_add((k * n_cells) as u64);
        let scene_seed = if args.fixed_scene {
            args.base_seed.wrapping_add(k as u64)
        } else {
            seed
        };
        match run_repeat(args, cell, library, seed, scene_seed) {
            Ok((sad, rmse, bands)) if sad.is_finite() && rmse.is_finite() => {
                out.sads.push(sad);
                out.rmses.push(rmse);
                out.bands = Some(bands);
            }
            Ok(_) => {
                out.error.get_or_insert_with(|| "non-finite metric".into());
            }
            Err(e) => {
                out.error.get_or_insert_with(|| e.to_string());
            }
        }
    }
    out
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn min(v: &[f64]) -> Option<f64> {
    v.iter().copied().reduce(f64::min)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn sanitize(msg: &str) -> String {
    msg.chars()
        .map(|c| if c == ',' || c == '\n' || c == '\r' { ';' } else { c })
        .collect()
}

pub fn format_row(args: &SweepArgs, cell: &Cell, outcome: &CellOutcome) -> String {
    let variant = if args.baseline {
        format!("baseline-{}", cell.config.variant)
    } else {
        cell.config.variant.to_string()
    };
    let snr = cell.snr_db.map(|v| v.to_string()).unwrap_or_else(|| "inf".into());
    let bands = outcome
        .bands
        .or(cell.spec.bands)
        .map(|b| b.to_string())
        .unwrap_or_default();
    let mut row = String::new();
    let _ = write!(
        row,
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        cell.index,
        cell.config.gamma,
        cell.config.theta,
        snr,
        bands,
        cell.spec.rows_px * cell.spec.cols_px,
        cell.spec.r,
        variant,
        args.repeats,
        outcome.sads.len(),
        opt(mean(&outcome.sads)),
        opt(min(&outcome.sads)),
        opt(mean(&outcome.rmses)),
        opt(min(&outcome.rmses)),
        outcome.error.as_deref().map(sanitize).unwrap_or_default(),
    );
    row
}

/// Runs the sweep and writes the table; returns the number of failed cells.
pub fn cmd_sweep(args: &SweepArgs) -> CliResult<usize> {
    if args.repeats == 0 {
        return Err(CliError::Usage("--repeats must be positive".into()));
    }
    if args.parallel == 0 {
        return Err(CliError::Usage("--parallel must be positive".into()));
    }
    let axes = parse_grid(&args.grid).map_err(CliError::Usage)?;
    let library = load_library(&args.scene.library)?;
    let cells = cells(args, &axes);
    let n = cells.len();
    info!(
        "sweep: {n} cells x {} repeats on {} workers",
        args.repeats, args.parallel
    );

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.parallel)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let outcomes: Vec<CellOutcome> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let o = run_cell(args, cell, n, &library);
                match &o.error {
                    Some(e) => warn!("cell {} failed: {e}", cell.index),
                    None => info!("cell {} done", cell.index),
                }
                o
            })
            .collect()
    });

    let mut table = String::from(HEADER);
    table.push('\n');
    for (cell, outcome) in cells.iter().zip(&outcomes) {
        table.push_str(&format_row(args, cell, outcome));
        table.push('\n');
    }
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    }
    write_table(&args.out, &table)?;

    let failed = outcomes.iter().filter(|o| o.failed()).count();
    info!("sweep: {} of {n} cells failed", failed);
    if failed == n {
        return Err(CliError::SweepFailed(n));
    }
    Ok(failed)
}

fn write_table(path: &Path, table: &str) -> CliResult<()> {
    fs::write(path, table).map_err(CliError::io(path))
}
