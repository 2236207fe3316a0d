//! Subcommand drivers. Each returns a [`Status`] or the error that stopped it.

use std::path::{Path, PathBuf};

use serde::Serialize;

use chdbc::experiments::{
    delta_sweep, dependence_study, dt_refinement_check, fit_rate, uniform_bounds, DependenceEntry, RateFit,
    SweepRecord,
};
use chdbc::initdata::prepare_initial_data;
use chdbc::operators::{CoupledOperator, NormKind};
use chdbc::stepping::Solver;
use chdbc::{Error, Result};

use crate::config::RunConfig;
use crate::io::{self, CsvOut, DIAGNOSTIC_COLUMNS, SWEEP_COLUMNS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Success,
    /// Some points of a sweep failed; the rest were written.
    Partial,
}

pub fn exit_code(result: &Result<Status>) -> i32 {
    match result {
        Ok(Status::Success) => EXIT_OK,
        Ok(Status::Partial) => EXIT_PARTIAL,
        Err(e) if e.is_config_error() => EXIT_CONFIG,
        Err(_) => EXIT_SOLVER,
    }
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    code: &'a str,
    message: String,
    exit_status: i32,
}

/// Writes `error.json` into `dir` when the directory can be created.
pub fn write_error(dir: &Path, error: &Error, config: &RunConfig) {
    let record = ErrorRecord {
        code: error.code(),
        message: error.to_string(),
        exit_status: if error.is_config_error() { EXIT_CONFIG } else { EXIT_SOLVER },
    };
    if std::fs::create_dir_all(dir).is_ok() {
        if let Err(e) = io::write_json(&dir.join("error.json"), config, &record) {
            log::warn!("could not write error record: {e}");
        }
    }
}

fn out_dir(config: &RunConfig) -> Result<PathBuf> {
    let dir = config.output.dir.clone();
    std::fs::create_dir_all(&dir)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))?;
    let stale = dir.join("error.json");
    if stale.exists() {
        std::fs::remove_file(&stale)?;
    }
    Ok(dir)
}

#[derive(Serialize)]
struct RunSummary {
    steps: usize,
    t_final: f64,
    delta: f64,
    lambda: f64,
    mass_initial: f64,
    mass_final: f64,
    max_mass_drift: f64,
    energy_initial: f64,
    energy_final: f64,
    max_energy_increase: f64,
    newton_iters: usize,
}

pub fn cmd_run(config: &RunConfig) -> Result<Status> {
    config.validate()?;
    let dir = out_dir(config)?;
    let sc = config.solver_config()?;
    let mesh = sc.mesh.clone();
    let u0 = config.initial_field(&mesh)?;
    let mut solver = Solver::new(sc)?;
    let mut csv = CsvOut::create(&dir.join("diagnostics.csv"), config, &DIAGNOSTIC_COLUMNS)?;
    let every = config.output.checkpoint_every;
    let mut first = None;
    let mut last = None;
    let mut drift: f64 = 0.0;
    let mut rise: f64 = 0.0;
    let mut iters = 0;
    let mut final_u = None;
    solver.run_with(&u0, |state, d| {
        csv.row(io::diagnostic_row(d))?;
        let (m0, _) = *first.get_or_insert((d.mass, d.energy));
        drift = drift.max((d.mass - m0).abs());
        if let Some((_, e_prev)) = last {
            rise = rise.max(d.energy - e_prev);
        }
        last = Some((d.mass, d.energy));
        iters += d.newton_iters;
        if every > 0 && d.step % every == 0 {
            io::write_field(&dir.join(format!("u_{:06}.txt", d.step)), &mesh, &state.u, Some(config))?;
        }
        final_u = Some(state.u.clone());
        Ok(())
    })?;
    csv.finish()?;
    if let Some(u) = &final_u {
        io::write_field(&dir.join("u_final.txt"), &mesh, u, Some(config))?;
    }
    let (m0, e0) = first.unwrap_or((f64::NAN, f64::NAN));
    let (m1, e1) = last.unwrap_or((f64::NAN, f64::NAN));
    let summary = RunSummary {
        steps: solver.config().steps(),
        t_final: solver.config().t_final,
        delta: solver.config().delta,
        lambda: solver.config().lambda,
        mass_initial: m0,
        mass_final: m1,
        max_mass_drift: drift,
        energy_initial: e0,
        energy_final: e1,
        max_energy_increase: rise,
        newton_iters: iters,
    };
    io::write_json(&dir.join("run.json"), config, &summary)?;
    log::info!("run finished: mass drift {drift:e}, energy {e0:e} -> {e1:e}");
    Ok(Status::Success)
}

#[derive(Serialize)]
struct FitJson {
    slope: Option<f64>,
    intercept: Option<f64>,
    r_squared: Option<f64>,
    points: usize,
    /// Errors decrease strictly along the decreasing δ list.
    monotone: bool,
    failed_deltas: Vec<f64>,
    /// Why no fit was produced.
    #[serde(skip_serializing_if = "Option::is_none")]
    fit_error: Option<String>,
}

impl FitJson {
    fn new(records: &[SweepRecord<f64>]) -> Self {
        let result = fit_rate(records);
        let fit_error = result.as_ref().err().map(|e| e.to_string());
        let fit: Option<RateFit<f64>> = result.ok();
        let ok: Vec<f64> = records.iter().filter(|r| r.succeeded()).map(|r| r.err_combined).collect();
        FitJson {
            slope: fit.map(|f| f.slope),
            intercept: fit.map(|f| f.intercept),
            r_squared: fit.map(|f| f.r_squared),
            points: fit.map_or(ok.len(), |f| f.points),
            monotone: ok.windows(2).all(|w| w[1] < w[0]),
            failed_deltas: records.iter().filter(|r| !r.succeeded()).map(|r| r.delta).collect(),
            fit_error,
        }
    }
}

#[derive(Serialize)]
struct RateJson {
    #[serde(flatten)]
    fit: FitJson,
    lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_half: Option<LambdaHalf>,
}

#[derive(Serialize)]
struct LambdaHalf {
    lambda: f64,
    #[serde(flatten)]
    fit: FitJson,
}

#[derive(Serialize)]
struct DtCheckJson {
    delta: f64,
    dts: Vec<f64>,
    errors: Vec<f64>,
    relative_changes: Vec<f64>,
    change_ratios: Vec<f64>,
    flagged: bool,
}

fn write_sweep_csv(path: &Path, config: &RunConfig, records: &[SweepRecord<f64>]) -> Result<()> {
    let mut csv = CsvOut::create(path, config, &SWEEP_COLUMNS)?;
    for r in records {
        csv.row([
            io::num(r.delta),
            io::num(r.err_linf_vstar),
            io::num(r.err_l2_z),
            io::num(r.err_combined),
            io::num(r.runtime),
        ])?;
    }
    csv.finish()
}

pub fn cmd_sweep(config: &RunConfig) -> Result<Status> {
    config.validate()?;
    let dir = out_dir(config)?;
    let sc = config.solver_config()?;
    let u0 = config.initial_field(&sc.mesh)?;
    let deltas = &config.solver.deltas;
    let records = delta_sweep(&sc, &u0, deltas)?;
    write_sweep_csv(&dir.join("sweep.csv"), config, &records)?;
    let mut partial = records.iter().any(|r| !r.succeeded());
    if records.iter().all(|r| !r.succeeded()) {
        return Err(Error::Nonconvergence {
            what: "every sweep point",
            iterations: 0,
            residual: f64::NAN,
        });
    }
    let mut rate = RateJson {
        fit: FitJson::new(&records),
        lambda: sc.lambda,
        lambda_half: None,
    };
    if sc.lambda > 0.0 && config.solver.lambda_refinement {
        let mut half = sc.clone();
        half.lambda = sc.lambda / 2.0;
        let records_half = delta_sweep(&half, &u0, deltas)?;
        write_sweep_csv(&dir.join("sweep_lambda_half.csv"), config, &records_half)?;
        partial |= records_half.iter().any(|r| !r.succeeded());
        rate.lambda_half = Some(LambdaHalf {
            lambda: half.lambda,
            fit: FitJson::new(&records_half),
        });
    }
    if let Some(slope) = rate.fit.slope {
        log::info!("fitted rate {slope:.3} over {} points", rate.fit.points);
    }
    io::write_json(&dir.join("rate.json"), config, &rate)?;

    if config.solver.dt_levels >= 2 {
        let delta = deltas[deltas.len() / 2];
        let check = dt_refinement_check(&sc, &u0, delta, config.solver.dt_levels)?;
        if check.flagged {
            log::warn!("dt refinement changes the error at delta={delta} by more than 10%");
        }
        let json = DtCheckJson {
            delta,
            dts: check.dts,
            errors: check.errors,
            relative_changes: check.relative_changes,
            change_ratios: check.change_ratios,
            flagged: check.flagged,
        };
        io::write_json(&dir.join("dt_check.json"), config, &json)?;
    }

    if config.output.uniform_table {
        let mut all = deltas.clone();
        all.push(0.0);
        let bounds = uniform_bounds(&sc, &u0, &all)?;
        let mut csv = CsvOut::create(
            &dir.join("uniform.csv"),
            config,
            &["delta", "sup_u_v", "int_grad_mu_sq", "max_mass_drift"],
        )?;
        for b in &bounds {
            csv.row([
                io::num(b.delta),
                io::num(b.sup_u_v),
                io::num(b.int_grad_mu_sq),
                io::num(b.max_mass_drift),
            ])?;
        }
        csv.finish()?;
    }
    Ok(if partial { Status::Partial } else { Status::Success })
}

#[derive(Serialize)]
struct DepRow {
    delta: f64,
    epsilon: f64,
    solution_difference: f64,
    data_difference: f64,
    ratio: f64,
}

#[derive(Serialize)]
struct DepDelta {
    delta: f64,
    /// Largest ratio over the ε list.
    k: f64,
    /// Largest over smallest positive ratio across ε.
    k_spread: f64,
}

#[derive(Serialize)]
struct DepJson {
    target: &'static str,
    rows: Vec<DepRow>,
    per_delta: Vec<DepDelta>,
    /// Empirical stability constant: the largest ratio overall.
    k_empirical: f64,
}

pub fn cmd_depcheck(config: &RunConfig) -> Result<Status> {
    config.validate()?;
    let dir = out_dir(config)?;
    let sc = config.solver_config()?;
    let mesh = sc.mesh.clone();
    let base = config.problem(&mesh)?;
    let bump = config.depcheck.bump.field(&mesh);
    let dc = &config.depcheck;
    let entries: Vec<DependenceEntry<f64>> =
        dependence_study(&sc, &base, &bump, config.perturbation_target(), &dc.epsilons, &dc.deltas)?;
    let rows: Vec<DepRow> = entries
        .iter()
        .map(|e| DepRow {
            delta: e.report.delta,
            epsilon: e.epsilon,
            solution_difference: e.report.solution_difference,
            data_difference: e.report.data_difference,
            ratio: e.report.ratio,
        })
        .collect();
    let per_delta: Vec<DepDelta> = dc
        .deltas
        .iter()
        .map(|&delta| {
            let ratios: Vec<f64> = rows.iter().filter(|r| r.delta == delta).map(|r| r.ratio).collect();
            let k = ratios.iter().copied().fold(0.0, f64::max);
            let low = ratios.iter().copied().filter(|&r| r > 0.0).fold(f64::INFINITY, f64::min);
            DepDelta {
                delta,
                k,
                k_spread: if low.is_finite() { k / low } else { 1.0 },
            }
        })
        .collect();
    let k_empirical = per_delta.iter().map(|d| d.k).fold(0.0, f64::max);
    let json = DepJson {
        target: match dc.target {
            crate::config::TargetName::Source => "source",
            crate::config::TargetName::Initial => "initial",
            crate::config::TargetName::Both => "both",
        },
        rows,
        per_delta,
        k_empirical,
    };
    io::write_json(&dir.join("depcheck.json"), config, &json)?;
    log::info!("empirical stability constant {k_empirical:.4}");
    Ok(Status::Success)
}

pub fn cmd_prep_init(config: &RunConfig) -> Result<Status> {
    config.validate()?;
    let delta = config.solver.delta;
    if !(delta > 0.0) {
        return Err(Error::InvalidConfig("prep-init needs delta > 0".into()));
    }
    let dir = out_dir(config)?;
    let mesh = config.mesh()?;
    let pair = config.pair();
    let lambda = config.lambda();
    let u0 = config.initial_field(&mesh)?;
    let prepared = prepare_initial_data(&mesh, &u0, delta, &pair.boundary, lambda)?;
    io::write_field(&dir.join("u0.txt"), &mesh, &u0, Some(config))?;
    io::write_field(&dir.join("u0_prepared.txt"), &mesh, &prepared, Some(config))?;

    let op = CoupledOperator::new(&mesh);
    let mut csv = CsvOut::create(
        &dir.join("prep_table.csv"),
        config,
        &["delta", "err_H", "grad_sq", "grad_sq_data"],
    )?;
    let grad_data = op.bulk_stiffness().quadratic_form(&u0.bulk);
    for &d in &config.solver.deltas {
        let u = prepare_initial_data(&mesh, &u0, d, &pair.boundary, lambda)?;
        csv.row([
            io::num(d),
            io::num(op.norm(&u.sub(&u0), NormKind::H)?),
            io::num(op.bulk_stiffness().quadratic_form(&u.bulk)),
            io::num(grad_data),
        ])?;
    }
    csv.finish()?;
    Ok(Status::Success)
}

pub fn cmd_print_defaults() -> String {
    RunConfig::default().to_toml_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Ok(Status::Success)), 0);
        assert_eq!(exit_code(&Ok(Status::Partial)), 4);
        assert_eq!(exit_code(&Err(Error::InvalidConfig("x".into()))), 2);
        assert_eq!(exit_code(&Err(Error::MeanMismatch { first: 0.0, second: 1.0 })), 2);
        assert_eq!(
            exit_code(&Err(Error::NewtonDivergence {
                iterations: 3,
                residual: 1.0
            })),
            3
        );
    }
}
