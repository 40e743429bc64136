//! Deterministic least-squares fitting of a single front curve.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{CurveKind, FrontObservation, FrontParams, PriorSet};

const MIN_OBSERVATIONS: usize = 4;

#[derive(Clone, Debug)]
pub struct FitOptions<F> {
    pub max_iterations: usize,
    /// Relative cost decrease below which iteration stops.
    pub cost_tolerance: F,
    /// Gradient infinity-norm below which iteration stops.
    pub gradient_tolerance: F,
    /// Priors supplying the starting point and parameter bounds.
    pub priors: PriorSet<F>,
}

impl<F: Scalar> Default for FitOptions<F> {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            cost_tolerance: F::lit(1e-15),
            gradient_tolerance: F::lit(1e-14),
            priors: PriorSet::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct FitReport<F> {
    pub params: FrontParams<F>,
    /// `sqrt(sum r_i^2)` at the returned parameters.
    pub residual_norm: F,
    /// Residual norm at the prior-mean parameters.
    pub prior_mean_residual_norm: F,
    pub iterations: usize,
    pub converged: bool,
    /// Steepness ended on its lower bound.
    pub k_at_lower_bound: bool,
    /// The fitted curve is essentially flat over the observed privacy range.
    pub degenerate: bool,
}

impl<F: Scalar> FitReport<F> {
    pub fn flagged(&self) -> bool {
        !self.converged || self.k_at_lower_bound || self.degenerate
    }
}

/// Fit with default options.
pub fn map_fit<F: Scalar>(obs: &[FrontObservation<F>], kind: CurveKind) -> Result<FitReport<F>> {
    map_fit_with(obs, kind, &FitOptions::default())
}

/// Levenberg-Marquardt over `(L, k, b, c)` from several deterministic
/// starting points (the prior means first), keeping the best result.
///
/// Sigmoid `L` and `c` are clipped to the unit interval (their Beta prior
/// support); every family keeps `L` and `k` positive and Gompertz `c`
/// positive.
pub fn map_fit_with<F: Scalar>(
    obs: &[FrontObservation<F>],
    kind: CurveKind,
    opts: &FitOptions<F>,
) -> Result<FitReport<F>> {
    if obs.len() < MIN_OBSERVATIONS {
        return Err(Error::invalid(format!(
            "need at least {MIN_OBSERVATIONS} observations to fit 4 parameters, got {}",
            obs.len()
        )));
    }
    if obs.iter().any(|o| !o.p.is_finite() || !o.alpha.is_finite()) {
        return Err(Error::invalid("non-finite observation"));
    }
    let bounds = bounds_for(kind);
    let prior_mean = project(opts.priors.for_kind(kind).mean_params(kind).to_array(), &bounds);
    let prior_cost = cost(kind, prior_mean, obs);

    let mut best: Option<Run<F>> = None;
    for start in starting_points(kind, prior_mean, obs, &bounds) {
        let run = levenberg_marquardt(kind, start, obs, &bounds, opts);
        if best.as_ref().map_or(true, |b| run.cost < b.cost) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one starting point");

    let params = FrontParams::from_array(kind, best.params);
    let k_at_lower_bound = params.k <= bounds[1].0 * F::lit(1.0 + 1e-6);
    let (pmin, pmax) = obs.iter().fold((F::infinity(), F::neg_infinity()), |(lo, hi), o| {
        (lo.min(o.p), hi.max(o.p))
    });
    let span = (params.eval(pmin) - params.eval(pmax)).abs();
    let degenerate = span < F::lit(1e-6);
    Ok(FitReport {
        params,
        residual_norm: (best.cost + best.cost).sqrt(),
        prior_mean_residual_norm: (prior_cost + prior_cost).sqrt(),
        iterations: best.iterations,
        converged: best.converged,
        k_at_lower_bound,
        degenerate,
    })
}

struct Run<F> {
    params: [F; 4],
    cost: F,
    iterations: usize,
    converged: bool,
}

type Bounds<F> = [(F, F); 4];

fn bounds_for<F: Scalar>(kind: CurveKind) -> Bounds<F> {
    let eps = F::lit(1e-9);
    let k_lo = F::lit(1e-6);
    let inf = F::infinity();
    match kind {
        CurveKind::Sigmoid => [(eps, F::one()), (k_lo, inf), (-inf, inf), (F::zero(), F::one())],
        CurveKind::Gompertz => [(eps, inf), (k_lo, inf), (-inf, inf), (eps, inf)],
    }
}

fn project<F: Scalar>(mut a: [F; 4], bounds: &Bounds<F>) -> [F; 4] {
    for (v, &(lo, hi)) in a.iter_mut().zip(bounds) {
        *v = v.clamp_to(lo, hi);
    }
    a
}

fn cost<F: Scalar>(kind: CurveKind, a: [F; 4], obs: &[FrontObservation<F>]) -> F {
    let p = FrontParams::from_array(kind, a);
    let s: F = obs
        .iter()
        .map(|o| {
            let r = p.eval(o.p) - o.alpha;
            r * r
        })
        .sum();
    if s.is_finite() {
        F::lit(0.5) * s
    } else {
        F::infinity()
    }
}

fn starting_points<F: Scalar>(
    kind: CurveKind,
    prior_mean: [F; 4],
    obs: &[FrontObservation<F>],
    bounds: &Bounds<F>,
) -> Vec<[F; 4]> {
    let hi = obs.iter().map(|o| o.alpha).fold(F::neg_infinity(), F::max);
    let lo = obs.iter().map(|o| o.alpha).fold(F::infinity(), F::min);
    let span = (hi - lo).max(F::lit(1e-3));
    let mid = midpoint_crossing(obs, F::lit(0.5) * (hi + lo));
    let mut starts = vec![prior_mean];
    match kind {
        CurveKind::Sigmoid => {
            for k in [2.0, 10.0, 40.0] {
                starts.push(project([span, F::lit(k), lo, mid], bounds));
            }
        }
        CurveKind::Gompertz => {
            // Inflection of the Gompertz curve sits at ln(k)/c.
            for c in [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0] {
                let c = F::lit(c);
                let k = (c * mid + F::lit(1.0)).exp().min(F::lit(1e6));
                starts.push(project([span, k, hi, c], bounds));
            }
        }
    }
    starts
}

/// Privacy level where the data first drops below `level`, by linear
/// interpolation over observations sorted by `p`.
fn midpoint_crossing<F: Scalar>(obs: &[FrontObservation<F>], level: F) -> F {
    let mut pts: Vec<(F, F)> = obs.iter().map(|o| (o.p, o.alpha)).collect();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite p"));
    for w in pts.windows(2) {
        let ((p0, a0), (p1, a1)) = (w[0], w[1]);
        if (a0 - level) * (a1 - level) <= F::zero() && a0 != a1 {
            return p0 + (p1 - p0) * (a0 - level) / (a0 - a1);
        }
    }
    let n = F::from_usize(pts.len()).expect("count representable");
    pts.iter().map(|p| p.0).sum::<F>() / n
}

fn levenberg_marquardt<F: Scalar>(
    kind: CurveKind,
    start: [F; 4],
    obs: &[FrontObservation<F>],
    bounds: &Bounds<F>,
    opts: &FitOptions<F>,
) -> Run<F> {
    let mut a = start;
    let mut c = cost(kind, a, obs);
    let mut lambda = F::lit(1e-3);
    let lambda_max = F::lit(1e16);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iterations {
        iterations += 1;
        let params = FrontParams::from_array(kind, a);
        let mut jtj = [[F::zero(); 4]; 4];
        let mut jtr = [F::zero(); 4];
        for o in obs {
            let r = params.eval(o.p) - o.alpha;
            let g = params.gradient(o.p);
            for i in 0..4 {
                jtr[i] = jtr[i] + g[i] * r;
                for j in 0..4 {
                    jtj[i][j] = jtj[i][j] + g[i] * g[j];
                }
            }
        }
        // Only components that can move inside the box count towards the
        // stationarity test.
        let grad_norm = (0..4)
            .filter(|&i| {
                let (lo, hi) = bounds[i];
                !((a[i] <= lo && jtr[i] > F::zero()) || (a[i] >= hi && jtr[i] < F::zero()))
            })
            .map(|i| jtr[i].abs())
            .fold(F::zero(), F::max);
        if grad_norm < opts.gradient_tolerance || c == F::zero() {
            converged = true;
            break;
        }

        let mut accepted = false;
        while lambda <= lambda_max {
            let mut m = jtj;
            for (i, row) in m.iter_mut().enumerate() {
                row[i] = row[i] + lambda * (jtj[i][i] + F::lit(1e-12));
            }
            let rhs = jtr.map(|v| -v);
            if let Some(step) = solve4(m, rhs) {
                let mut trial = a;
                for i in 0..4 {
                    trial[i] = trial[i] + step[i];
                }
                let trial = project(trial, bounds);
                let tc = cost(kind, trial, obs);
                if tc < c {
                    let rel = (c - tc) / c.max(F::min_positive_value());
                    a = trial;
                    c = tc;
                    lambda = (lambda / F::lit(3.0)).max(F::lit(1e-12));
                    accepted = true;
                    if rel < opts.cost_tolerance {
                        converged = true;
                    }
                    break;
                }
            }
            lambda = lambda * F::lit(4.0);
        }
        if !accepted {
            // No descent direction left at any damping: a (possibly
            // constrained) local minimum.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    Run { params: a, cost: c, iterations, converged }
}

/// Gaussian elimination with partial pivoting on a 4x4 system.
fn solve4<F: Scalar>(mut m: [[F; 4]; 4], mut b: [F; 4]) -> Option<[F; 4]> {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| {
            m[i][col]
                .abs()
                .partial_cmp(&m[j][col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if !(m[pivot][col].abs() > F::zero()) {
            return None;
        }
        m.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let f = m[row][col] / m[col][col];
            for k in col..4 {
                m[row][k] = m[row][k] - f * m[col][k];
            }
            b[row] = b[row] - f * b[col];
        }
    }
    let mut x = [F::zero(); 4];
    for row in (0..4).rev() {
        let mut s = b[row];
        for k in row + 1..4 {
            s = s - m[row][k] * x[k];
        }
        x[row] = s / m[row][row];
    }
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}
