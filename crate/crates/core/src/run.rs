//! Command drivers: run a configured job and write its reports.
//!
//! Every command writes `<out>/<command>.json` (the report wrapped with the
//! version stamp and the resolved configuration) and `<out>/<command>.csv`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::check::{acceptance, properties, CriterionResult};
use crate::config::{CellMode, Command, RunConfig, Suite};
use crate::cell::{write_field_csv, CellProblem};
use crate::density::TruncationLevel;
use crate::error::{Error, Result};
use crate::homog::{estimate, HomogEntry};
use crate::par;
use crate::recovery::limsup_experiment;
use crate::solve::{multistart, solve_constrained};

pub const VERSION: &str = concat!("cellhom ", env!("CARGO_PKG_VERSION"));

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exit {
    Ok = 0,
    /// A check in `check` failed.
    CheckFailed = 1,
    /// A solve missed its tolerances and `strict` is set.
    NotConverged = 2,
    /// Bad configuration, bad input or I/O failure.
    Error = 3,
}

impl Exit {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub exit: Exit,
    pub files: Vec<PathBuf>,
    /// Human-readable progress and verdict lines.
    pub summary: Vec<String>,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    version: &'static str,
    command: Command,
    exit: Exit,
    config: &'a RunConfig,
    report: &'a T,
}

#[derive(Serialize)]
struct CheckReport {
    suite: Suite,
    passed: bool,
    results: Vec<CriterionResult>,
}

pub const HOMOG_COLUMNS: [&str; 8] = [
    "n",
    "k",
    "m",
    "value",
    "grad_norm",
    "constraint_residual",
    "iterations",
    "converged",
];

/// Runs `command` with `config` on `config.threads` workers.
pub fn execute(config: &RunConfig, command: Command) -> Result<Outcome> {
    config.validate()?;
    if let Some(c) = config.command {
        if c != command {
            return Err(Error::Config(format!("config is for `{c}`, not `{command}`")));
        }
    }
    par::with_threads(config.threads, || match command {
        Command::Cell => cell(config),
        Command::Homogenize => homogenize(config),
        Command::Recover => recover(config),
        Command::Check => check(config),
    })
}

fn strict_exit(config: &RunConfig, converged: bool) -> Exit {
    if config.strict && !converged {
        Exit::NotConverged
    } else {
        Exit::Ok
    }
}

fn write_json<T: Serialize>(config: &RunConfig, command: Command, exit: Exit, report: &T) -> Result<PathBuf> {
    let dir = config.output_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(format!("{command}.json"));
    let envelope = Envelope {
        version: VERSION,
        command,
        exit,
        config,
        report,
    };
    let mut text = serde_json::to_string_pretty(&envelope)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn write_csv(config: &RunConfig, command: Command, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
    let dir = config.output_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(format!("{command}.csv"));
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn homog_row(e: &HomogEntry) -> Vec<String> {
    vec![
        e.n.map_or_else(|| "inf".to_string(), |n| n.to_string()),
        e.k.to_string(),
        e.m.to_string(),
        e.value.to_string(),
        e.grad_norm.to_string(),
        e.constraint_residual.to_string(),
        e.iterations.to_string(),
        e.converged.to_string(),
    ]
}

fn cell(config: &RunConfig) -> Result<Outcome> {
    let spec = config.require_spec()?;
    let f = config.require_f()?;
    let c = &config.cell;
    let grid = crate::cell::Grid::with_split(c.k, c.m, c.split)?.with_boundary(c.boundary);
    let problem = CellProblem::new(spec, f, TruncationLevel::new(c.n)?, grid)?;
    let (n, result) = match c.mode {
        CellMode::Penalty => (Some(c.n), multistart(&problem, &config.solver, c.starts, c.perturbation, config.seed)?),
        CellMode::Constrained => (None, solve_constrained(&problem, &config.solver)?),
    };
    let entry = HomogEntry {
        n,
        k: c.k,
        m: c.m,
        value: result.value,
        grad_norm: result.grad_norm,
        constraint_residual: result.constraint_residual,
        iterations: result.iterations,
        converged: result.converged,
        diagnostic: result.diagnostic,
    };
    let exit = strict_exit(config, result.converged);
    let mut files = vec![
        write_json(config, Command::Cell, exit, &result)?,
        write_csv(config, Command::Cell, &HOMOG_COLUMNS, &[homog_row(&entry)])?,
    ];
    if c.write_field {
        let path = config.output_dir().join("cell_field.csv");
        write_field_csv(&path, &result.phi)?;
        files.push(path);
    }
    Ok(Outcome {
        exit,
        files,
        summary: vec![format!(
            "cell value {} (residual {:.2e}, {} iterations, converged {})",
            result.value, result.constraint_residual, result.iterations, result.converged
        )],
    })
}

fn homogenize(config: &RunConfig) -> Result<Outcome> {
    let spec = config.require_spec()?;
    let f = config.require_f()?;
    let report = estimate(&spec, &f, &config.schedule()?, config.allow_off_sigma)?;
    let exit = strict_exit(config, report.flags.all_converged);
    let rows: Vec<Vec<String>> = report.entries.iter().map(homog_row).collect();
    let files = vec![
        write_json(config, Command::Homogenize, exit, &report)?,
        write_csv(config, Command::Homogenize, &HOMOG_COLUMNS, &rows)?,
    ];
    let mut summary = vec![format!("lower-bound estimate {}", report.estimate_underbar_w)];
    if let Some(w) = report.estimate_w_hom {
        summary.push(format!("homogenized estimate {w}"));
    }
    summary.push(format!(
        "n-monotone {}, k-subadditive {}, growth {}, all converged {}",
        report.flags.n_monotone, report.flags.k_subadditive, report.flags.growth, report.flags.all_converged
    ));
    Ok(Outcome { exit, files, summary })
}

fn recover(config: &RunConfig) -> Result<Outcome> {
    let spec = config.require_spec()?;
    let u = config.macro_deformation()?;
    let report = limsup_experiment(
        &spec,
        &u,
        config.slack()?,
        &config.recovery.eps_values,
        config.recovery.points_per_side,
        &config.recovery_settings()?,
    )?;
    let exit = strict_exit(config, report.correctors.iter().all(|c| c.met));
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.eps.to_string(),
                r.energy.to_string(),
                r.bound.to_string(),
                r.det_residual.to_string(),
                r.l1_distance.to_string(),
            ]
        })
        .collect();
    let files = vec![
        write_json(config, Command::Recover, exit, &report)?,
        write_csv(
            config,
            Command::Recover,
            &["eps", "energy", "bound", "det_residual", "l1_distance"],
            &rows,
        )?,
    ];
    let mut summary: Vec<String> = report
        .rows
        .iter()
        .map(|r| format!("ε = {}: energy {} (bound {}), L¹ {:.3e}", r.eps, r.energy, r.bound, r.l1_distance))
        .collect();
    summary.push(format!(
        "energy within bound {}, L¹ non-increasing {}, det residual {:.2e}",
        report.energy_ok, report.l1_monotone, report.max_det_residual
    ));
    Ok(Outcome { exit, files, summary })
}

fn check(config: &RunConfig) -> Result<Outcome> {
    let results = match config.check.suite {
        Suite::Acceptance => acceptance(&scratch_dir(&config.output_dir()), &[]),
        Suite::Properties => properties(config)?,
    };
    let passed = results.iter().all(|r| r.passed);
    let exit = if passed { Exit::Ok } else { Exit::CheckFailed };
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            vec![
                r.id.to_string(),
                r.name.clone(),
                if r.passed { "PASS" } else { "FAIL" }.to_string(),
                r.detail.clone(),
            ]
        })
        .collect();
    let mut summary = Vec::new();
    for r in &results {
        summary.push(r.line());
        summary.extend(r.notes.iter().map(|n| format!("       note: {n}")));
    }
    let report = CheckReport {
        suite: config.check.suite,
        passed,
        results,
    };
    let files = vec![
        write_json(config, Command::Check, exit, &report)?,
        write_csv(config, Command::Check, &["criterion", "name", "result", "detail"], &rows)?,
    ];
    Ok(Outcome { exit, files, summary })
}

fn scratch_dir(out: &Path) -> PathBuf {
    out.join("acceptance-scratch")
}
