//! Offline subcommands: simulation, batches, curve fitting and the oracle check.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use dptradeoff::front::{map_fit, CurveKind, FitReport, FrontObservation};
use dptradeoff::scalar::unit_grid;
use dptradeoff::session::{
    oracle_check, read_tradeoff_csv, run_batch, run_loop, Arm, BatchReport, NormalizationSpec, Oracle,
    OracleCheckRow,
};
use dptradeoff::{RunRecord64, SessionConfig64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Defaults when `path` is `None`. The oracle is built once so a missing
/// table is reported before any work starts.
pub fn load_config(path: Option<&Path>) -> Result<SessionConfig64> {
    let cfg = match path {
        Some(p) => SessionConfig64::from_file(p)?,
        None => SessionConfig64::default(),
    };
    Oracle::new(cfg.oracle.clone())?;
    Ok(cfg)
}

pub fn simulate(cfg: &SessionConfig64, arm: Arm, seed: u64, out: &Path, log: &mut dyn Write) -> Result<RunRecord64> {
    let record = match run_loop(cfg, arm, seed) {
        Ok(r) => r,
        Err(failure) => {
            if let Some(partial) = &failure.partial {
                write_file(out, &partial.to_json())?;
                writeln!(log, "partial record written to {}", out.display())?;
            }
            bail!("{arm} seed {seed} stopped: {}", failure.error);
        }
    };
    write_file(out, &record.to_json())?;
    let f = &record.final_;
    writeln!(log, "arm {arm}, seed {seed}, {} steps", record.metric_trace.len())?;
    writeln!(log, "final epsilon* = {:.6}, accuracy* = {:.6} (p* = {:.4}, u* = {:.6})", f.eps_star, f.accuracy_star, f.p_star, f.u_star)?;
    if let Some(r) = record.final_regret {
        writeln!(log, "final regret = {r:.6}")?;
    }
    if let Some(e) = record.final_pref_error {
        writeln!(log, "final pref_error = {e:.6}")?;
    }
    writeln!(log, "record written to {}", out.display())?;
    Ok(record)
}

/// Seeds from a file of integers separated by whitespace or commas.
pub fn read_seed_file(path: &Path) -> Result<Vec<u64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading seed file {}", path.display()))?;
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<u64>().with_context(|| format!("{}: `{t}` is not a seed", path.display())))
        .collect()
}

pub fn batch(
    cfg: &SessionConfig64,
    seeds: &[u64],
    arms: &[Arm],
    records_dir: Option<&Path>,
    log: &mut dyn Write,
) -> Result<BatchReport<f64>> {
    let report = run_batch(cfg, seeds, arms)?;
    if let Some(dir) = records_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for r in &report.records {
            write_file(&dir.join(format!("{}-seed{}.json", r.arm, r.seed)), &r.to_json())?;
        }
    }
    for f in &report.failures {
        writeln!(log, "{} seed {} failed: {}", f.arm, f.seed, f.error)?;
    }
    writeln!(log, "{} runs completed, {} failed", report.records.len(), report.failures.len())?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct GridPoint {
    pub epsilon: f64,
    pub p: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FitOutput {
    pub rows: usize,
    pub eps_min: f64,
    pub eps_max: f64,
    pub fit: FitReport<f64>,
    pub grid: Vec<GridPoint>,
}

/// Fit one curve to an `epsilon,accuracy` table. Privacy is normalized over
/// the table's own epsilon range; accuracy stays raw.
pub fn fit(data: &Path, kind: CurveKind, grid_points: usize) -> Result<FitOutput> {
    let rows: Vec<(f64, f64)> = read_tradeoff_csv(data)?;
    ensure!(rows.len() >= 4, "{}: need at least 4 rows to fit 4 parameters, got {}", data.display(), rows.len());
    ensure!(grid_points >= 2, "grid needs at least 2 points");
    let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(e, _)| (lo.min(e), hi.max(e)));
    let norm = NormalizationSpec::new(lo, hi, 0.0, 1.0)
        .with_context(|| format!("{}: epsilon values must span a positive range", data.display()))?;
    let obs = rows
        .iter()
        .map(|&(e, a)| Ok(FrontObservation::new(norm.normalize_privacy(e)?, a)?))
        .collect::<Result<Vec<_>>>()?;
    let fit = map_fit(&obs, kind)?;
    let grid = unit_grid::<f64>(grid_points)
        .into_iter()
        .map(|p| Ok(GridPoint { epsilon: norm.denormalize_privacy(p)?, p, accuracy: fit.params.eval(p) }))
        .collect::<Result<Vec<_>>>()?;
    Ok(FitOutput { rows: rows.len(), eps_min: lo, eps_max: hi, fit, grid })
}

pub fn print_fit(out: &FitOutput, w: &mut dyn Write) -> Result<()> {
    let p = &out.fit.params;
    writeln!(w, "# {:?} fit to {} rows, epsilon in [{}, {}]", p.kind, out.rows, out.eps_min, out.eps_max)?;
    writeln!(w, "# L = {:.6}, k = {:.6}, b = {:.6}, c = {:.6}", p.l, p.k, p.b, p.c)?;
    writeln!(w, "# residual norm = {:.6e}, iterations = {}, converged = {}", out.fit.residual_norm, out.fit.iterations, out.fit.converged)?;
    if out.fit.flagged() {
        writeln!(w, "# warning: fit flagged (steepness at bound, flat curve or no convergence)")?;
    }
    writeln!(w, "epsilon,p,accuracy")?;
    for g in &out.grid {
        writeln!(w, "{},{},{}", g.epsilon, g.p, g.accuracy)?;
    }
    Ok(())
}

pub fn check_oracle(c: f64, eps: &[f64], samples: usize, seed: u64) -> Result<Vec<OracleCheckRow>> {
    ensure!(!eps.is_empty(), "need at least one epsilon");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(oracle_check(c, eps, samples, &mut rng)?)
}

pub fn print_oracle_check(rows: &[OracleCheckRow], w: &mut dyn Write) -> Result<()> {
    writeln!(w, "{:>10} {:>12} {:>12} {:>12} {:>6}", "epsilon", "closed_form", "monte_carlo", "std_error", "pass")?;
    for r in rows {
        writeln!(
            w,
            "{:>10} {:>12.6} {:>12.6} {:>12.6} {:>6}",
            r.epsilon, r.closed_form, r.monte_carlo, r.std_error, if r.pass { "yes" } else { "NO" }
        )?;
    }
    Ok(())
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}
