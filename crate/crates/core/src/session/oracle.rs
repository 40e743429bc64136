use std::path::{Path, PathBuf};
use std::process::Command;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::front::{FrontObservation, FrontParams};
use crate::scalar::Scalar;

use super::NormalizationSpec;

/// Where accuracies come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", bound = "F: Scalar")]
pub enum OracleKind<F> {
    /// Expected accuracy `1 - 0.5 exp(-C eps)` of output-perturbed logistic
    /// regression.
    ClosedFormLogistic { c: F },
    /// CSV with header `epsilon,accuracy`, ascending in epsilon.
    Tabulated { path: PathBuf },
    /// Shell command template containing `{epsilon}`; the last output line
    /// must be one accuracy in `[0, 1]`.
    External { command: String },
    /// A known front given directly in normalized coordinates.
    Synthetic { curve: FrontParams<F> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct OracleSpec<F> {
    pub kind: OracleKind<F>,
    /// Standard deviation of Gaussian noise added to normalized accuracy.
    #[serde(default = "zero")]
    pub noise_sigma: F,
    /// Recorded only.
    #[serde(default = "default_delta")]
    pub delta: F,
}

fn zero<F: Scalar>() -> F {
    F::zero()
}

fn default_delta<F: Scalar>() -> F {
    F::lit(1e-5)
}

impl<F: Scalar> Default for OracleSpec<F> {
    fn default() -> Self {
        Self { kind: OracleKind::ClosedFormLogistic { c: F::lit(5.0) }, noise_sigma: F::lit(0.01), delta: default_delta() }
    }
}

impl<F: Scalar> OracleSpec<F> {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= F::zero() && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!("oracle.noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        match &self.kind {
            OracleKind::ClosedFormLogistic { c } if !(*c > F::zero() && c.is_finite()) => {
                Err(Error::Config(format!("oracle.kind.c must be positive, got {c}")))
            }
            OracleKind::External { command } if !command.contains("{epsilon}") => {
                Err(Error::Config("oracle.kind.command must contain the {epsilon} placeholder".into()))
            }
            OracleKind::Synthetic { curve } => curve.validate().map_err(|e| Error::Config(format!("oracle.kind.curve: {e}"))),
            _ => Ok(()),
        }
    }
}

/// Tabulated front, stored in `-ln(eps)` with accuracy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct FrontTable<F> {
    pub path: PathBuf,
    /// `(epsilon, accuracy)` ascending in epsilon.
    pub rows: Vec<(F, F)>,
}

/// Read a CSV with header `epsilon,accuracy`.
pub fn read_tradeoff_csv<F: Scalar>(path: &Path) -> Result<Vec<(F, F)>> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let table_err = |row: usize, message: String| Error::Table { path: path.to_path_buf(), row, message };
    let headers = reader.headers().map_err(|e| table_err(1, e.to_string()))?.clone();
    if headers.len() != 2 || &headers[0] != "epsilon" || &headers[1] != "accuracy" {
        return Err(table_err(1, format!("expected header `epsilon,accuracy`, found `{}`", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            table_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(rows.len() + 2);
        if record.len() != 2 {
            return Err(table_err(line, format!("expected 2 fields, found {}", record.len())));
        }
        let parse = |s: &str, what: &str| -> Result<F> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .and_then(F::from_f64)
                .ok_or_else(|| table_err(line, format!("cannot parse {what} `{s}`")))
        };
        rows.push((parse(&record[0], "epsilon")?, parse(&record[1], "accuracy")?));
    }
    Ok(rows)
}

impl<F: Scalar> FrontTable<F> {
    pub fn load(path: &Path) -> Result<Self> {
        let rows = read_tradeoff_csv::<F>(path)?;
        let err = |row: usize, message: &str| Error::Table { path: path.to_path_buf(), row, message: message.into() };
        if rows.len() < 2 {
            return Err(err(rows.len() + 1, "need at least two rows"));
        }
        for (i, r) in rows.iter().enumerate() {
            if !(r.0 > F::zero()) {
                return Err(err(i + 2, "epsilon must be positive"));
            }
            if i > 0 && !(r.0 > rows[i - 1].0) {
                return Err(err(i + 2, "epsilon must be strictly ascending"));
            }
        }
        Ok(Self { path: path.to_path_buf(), rows })
    }

    pub fn eps_range(&self) -> (F, F) {
        (self.rows[0].0, self.rows[self.rows.len() - 1].0)
    }

    pub fn accuracy_range(&self) -> (F, F) {
        let lo = self.rows.iter().map(|r| r.1).fold(F::infinity(), F::min);
        let hi = self.rows.iter().map(|r| r.1).fold(F::neg_infinity(), F::max);
        (lo, hi)
    }

    /// Piecewise-linear in `-ln(eps)`; no extrapolation.
    pub fn interpolate(&self, eps: F) -> Result<F> {
        let (lo, hi) = self.eps_range();
        // Allow for rounding in exp(-ln(eps)) round trips at the ends.
        let slack = F::lit(1e-12);
        if !(eps >= lo * (F::one() - slack) && eps <= hi * (F::one() + slack)) {
            return Err(Error::Extrapolation { epsilon: eps.as_f64(), low: lo.as_f64(), high: hi.as_f64() });
        }
        let eps = eps.clamp_to(lo, hi);
        let j = self.rows.partition_point(|r| r.0 < eps);
        if j == 0 {
            return Ok(self.rows[0].1);
        }
        let (e0, a0) = self.rows[j - 1];
        let (e1, a1) = self.rows[j];
        let t = (e0.ln() - eps.ln()) / (e0.ln() - e1.ln());
        Ok(a0 + t * (a1 - a0))
    }
}

/// An oracle ready to be queried: the spec plus any loaded table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Oracle<F> {
    pub spec: OracleSpec<F>,
    pub table: Option<FrontTable<F>>,
}

impl<F: Scalar> Oracle<F> {
    pub fn new(spec: OracleSpec<F>) -> Result<Self> {
        spec.validate()?;
        let table = match &spec.kind {
            OracleKind::Tabulated { path } => Some(FrontTable::load(path)?),
            _ => None,
        };
        Ok(Self { spec, table })
    }

    /// Default `(alpha_min, alpha_max)` when the config does not set them.
    pub fn default_accuracy_range(&self) -> (F, F) {
        match (&self.spec.kind, &self.table) {
            (OracleKind::Tabulated { .. }, Some(t)) => t.accuracy_range(),
            (OracleKind::Synthetic { .. }, _) => (F::zero(), F::one()),
            _ => (F::lit(0.5), F::one()),
        }
    }

    /// Noise-free raw accuracy at raw `eps`.
    pub fn raw_accuracy(&self, eps: F, norm: &NormalizationSpec<F>) -> Result<F> {
        match &self.spec.kind {
            OracleKind::ClosedFormLogistic { c } => Ok(F::one() - F::lit(0.5) * (-*c * eps).exp()),
            OracleKind::Tabulated { .. } => self.table.as_ref().expect("table loaded").interpolate(eps),
            OracleKind::External { command } => run_external(command, eps),
            OracleKind::Synthetic { curve } => {
                let p = norm.normalize_privacy(eps)?;
                Ok(norm.denormalize_accuracy(curve.eval(p)))
            }
        }
    }

    /// Noise-free normalized front at normalized `p`, when it can be
    /// computed without side effects.
    pub fn true_front(&self, p: F, norm: &NormalizationSpec<F>) -> Option<F> {
        match &self.spec.kind {
            OracleKind::External { .. } => None,
            OracleKind::Synthetic { curve } => Some(curve.eval(p)),
            _ => self.raw_accuracy(norm.eps_of(p), norm).ok().map(|a| norm.normalize_accuracy(a)),
        }
    }

    /// The true front as a parametric curve in normalized coordinates, when
    /// one exists.
    pub fn true_curve(&self, norm: &NormalizationSpec<F>) -> Option<FrontParams<F>> {
        match &self.spec.kind {
            OracleKind::Synthetic { curve } => Some(*curve),
            OracleKind::ClosedFormLogistic { c } => {
                let span = norm.alpha_max - norm.alpha_min;
                FrontParams::gompertz(
                    F::lit(0.5) / span,
                    *c * norm.eps_max,
                    (F::one() - norm.alpha_min) / span,
                    norm.p_max() - norm.p_min(),
                )
                .ok()
            }
            _ => None,
        }
    }
}

/// Evaluate the oracle at normalized `p_norm`; returns a normalized
/// observation with Gaussian noise of `noise_sigma` on accuracy.
pub fn oracle_eval<F: Scalar, R: Rng + ?Sized>(
    oracle: &Oracle<F>,
    norm: &NormalizationSpec<F>,
    p_norm: F,
    rng: &mut R,
) -> Result<FrontObservation<F>> {
    let eps = norm.denormalize_privacy(p_norm)?;
    let raw = oracle.raw_accuracy(eps, norm)?;
    let mut alpha = norm.normalize_accuracy(raw);
    if oracle.spec.noise_sigma > F::zero() {
        alpha = alpha + oracle.spec.noise_sigma * F::sample_standard_normal(rng);
    }
    FrontObservation::new(p_norm, alpha)
}

fn run_external<F: Scalar>(template: &str, eps: F) -> Result<F> {
    let command = template.replace("{epsilon}", &eps.as_f64().to_string());
    let out = Command::new("sh").arg("-c").arg(&command).output().map_err(|e| Error::Oracle {
        message: format!("cannot run `{command}`: {e}"),
        output: String::new(),
    })?;
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    let captured = || format!("{stdout}{stderr}");
    if !out.status.success() {
        return Err(Error::Oracle { message: format!("`{command}` exited with {}", out.status), output: captured() });
    }
    let last = stdout.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("").trim();
    match last.parse::<f64>() {
        Ok(v) if (0.0..=1.0).contains(&v) => Ok(F::lit(v)),
        _ => Err(Error::Oracle {
            message: format!("`{command}` did not print an accuracy in [0, 1] on its last line"),
            output: captured(),
        }),
    }
}

/// Brute-force accuracy of output-perturbed logistic classification.
///
/// A one-dimensional classifier with coefficient `xi` receives Laplace
/// noise of scale `S_f / eps`; a point `x ~ U[-1, 1]` is classified
/// correctly when `(xi + eta) x` has the sign of `xi x`. With
/// `|xi| / S_f = c` the expected accuracy is `1 - 0.5 exp(-c eps)`.
/// Draws `n_noise` perturbations and `n_x` points for each.
pub fn mc_logistic_accuracy<R: Rng + ?Sized>(c: f64, eps: f64, n_noise: usize, n_x: usize, rng: &mut R) -> f64 {
    mc_logistic_accuracy_with(c, 0.2, eps, n_noise, n_x, rng)
}

/// As [`mc_logistic_accuracy`] with explicit sensitivity; `c` may be
/// negative to flip the sign of the coefficient.
pub fn mc_logistic_accuracy_with<R: Rng + ?Sized>(c: f64, s_f: f64, eps: f64, n_noise: usize, n_x: usize, rng: &mut R) -> f64 {
    let xi = c * s_f;
    let scale = s_f / eps;
    let mut correct = 0u64;
    for _ in 0..n_noise.max(1) {
        let eta = sample_laplace(scale, rng);
        let w = xi + eta;
        for _ in 0..n_x.max(1) {
            let x: f64 = rng.gen_range(-1.0..1.0);
            if (w * x > 0.0) == (xi * x > 0.0) && x != 0.0 {
                correct += 1;
            }
        }
    }
    correct as f64 / (n_noise.max(1) * n_x.max(1)) as f64
}

fn sample_laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.gen_range(-0.5..0.5);
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// One row of the oracle check: closed form against simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCheckRow {
    pub epsilon: f64,
    pub closed_form: f64,
    pub monte_carlo: f64,
    pub std_error: f64,
    pub pass: bool,
}

/// Compare `mc_logistic_accuracy` with the closed form; the standard error
/// is binomial over the `samples` independent perturbations.
pub fn oracle_check<R: Rng + ?Sized>(c: f64, eps: &[f64], samples: usize, rng: &mut R) -> Result<Vec<OracleCheckRow>> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid(format!("C must be positive, got {c}")));
    }
    if samples == 0 {
        return Err(Error::invalid("samples must be at least 1"));
    }
    eps.iter()
        .map(|&e| {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::invalid(format!("epsilon must be positive, got {e}")));
            }
            let closed_form = 1.0 - 0.5 * (-c * e).exp();
            let monte_carlo = mc_logistic_accuracy(c, e, samples, 1, rng);
            let std_error = (closed_form * (1.0 - closed_form) / samples as f64).sqrt();
            let pass = (monte_carlo - closed_form).abs() <= 3.0 * std_error;
            Ok(OracleCheckRow { epsilon: e, closed_form, monte_carlo, std_error, pass })
        })
        .collect()
}
