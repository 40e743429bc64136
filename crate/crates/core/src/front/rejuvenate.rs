//! Resample-move rejuvenation for the front posterior.
//!
//! Pure importance sampling from the prior collapses onto one or two
//! particles after a few dozen precise observations. When the effective
//! sample size drops below a threshold the particles are resampled
//! systematically and then moved with a few random-walk Metropolis steps
//! whose target is prior times the likelihood of every observation seen so
//! far. Moves run in an unconstrained space obtained from each prior's
//! support (logit for bounded, log for half-bounded parameters).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::particles::WeightedParticles;
use crate::scalar::Scalar;

use super::{CurveKind, CurvePrior, Dist, FrontObservation, FrontParams, FrontParticle, FrontPosterior, NoiseScale};

/// What to do when the front posterior degenerates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", bound = "F: Scalar")]
pub enum ResamplePolicy<F> {
    /// Plain importance sampling: weights only.
    Off,
    /// Systematic resampling when `ESS < ess_fraction * N`.
    Resample { ess_fraction: F },
    /// Systematic resampling followed by `steps` Metropolis moves per particle.
    ResampleMove { ess_fraction: F, steps: usize },
}

impl<F: Scalar> Default for ResamplePolicy<F> {
    fn default() -> Self {
        ResamplePolicy::ResampleMove { ess_fraction: F::lit(0.25), steps: 10 }
    }
}

impl<F: Scalar> Dist<F> {
    /// Log density up to an additive constant; `-inf` outside the support.
    pub fn log_density_unnormalized(&self, x: F) -> F {
        let ninf = F::neg_infinity();
        let half = F::lit(0.5);
        match *self {
            Dist::Beta { alpha, beta } => {
                if x > F::zero() && x < F::one() {
                    (alpha - F::one()) * x.ln() + (beta - F::one()) * (F::one() - x).ln()
                } else {
                    ninf
                }
            }
            Dist::LogNormal { mu, sigma } => {
                if x > F::zero() {
                    let z = (x.ln() - mu) / sigma;
                    -x.ln() - half * z * z
                } else {
                    ninf
                }
            }
            Dist::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                -half * z * z
            }
            Dist::Uniform { low, high } => {
                if x >= low && x <= high {
                    F::zero()
                } else {
                    ninf
                }
            }
            Dist::Gamma { shape, scale } => {
                if x > F::zero() {
                    (shape - F::one()) * x.ln() - x / scale
                } else {
                    ninf
                }
            }
        }
    }

    /// Map an unconstrained `z` into the support, returning `(x, log|dx/dz|)`.
    fn from_unconstrained(&self, z: F) -> (F, F) {
        let (lo, hi) = self.support();
        match (lo.is_finite(), hi.is_finite()) {
            (true, true) => {
                let s = F::one() / (F::one() + (-z).exp());
                let log_jac = (hi - lo).ln() - softplus(-z) - softplus(z);
                (lo + (hi - lo) * s, log_jac)
            }
            (true, false) => (lo + z.exp(), z),
            _ => (z, F::zero()),
        }
    }

    fn to_unconstrained(&self, x: F) -> F {
        let (lo, hi) = self.support();
        match (lo.is_finite(), hi.is_finite()) {
            (true, true) => {
                let u = ((x - lo) / (hi - lo)).clamp_to(F::lit(1e-15), F::one() - F::lit(1e-15));
                (u / (F::one() - u)).ln()
            }
            (true, false) => (x - lo).max(F::min_positive_value()).ln(),
            _ => x,
        }
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn dists<F: Scalar>(prior: &CurvePrior<F>) -> [Dist<F>; 5] {
    [prior.l, prior.k, prior.b, prior.c, prior.sigma]
}

fn encode<F: Scalar>(pt: &FrontParticle<F>, d: &[Dist<F>; 5]) -> [F; 5] {
    let x = [pt.params.l, pt.params.k, pt.params.b, pt.params.c, pt.sigma.0];
    let mut z = [F::zero(); 5];
    for i in 0..5 {
        z[i] = d[i].to_unconstrained(x[i]);
    }
    z
}

/// Log target in unconstrained coordinates, plus the decoded particle.
fn log_target<F: Scalar>(
    z: &[F; 5],
    kind: CurveKind,
    d: &[Dist<F>; 5],
    obs: &[FrontObservation<F>],
) -> (F, FrontParticle<F>) {
    let mut x = [F::zero(); 5];
    let mut lp = F::zero();
    for i in 0..5 {
        let (xi, lj) = d[i].from_unconstrained(z[i]);
        x[i] = xi;
        lp = lp + lj + d[i].log_density_unnormalized(xi);
    }
    let pt = FrontParticle {
        params: FrontParams { kind, l: x[0], k: x[1], b: x[2], c: x[3] },
        sigma: NoiseScale(x[4]),
    };
    let valid = x[0] > F::zero() && x[1] > F::zero() && x[4] > F::zero();
    if !valid || !lp.is_finite() {
        return (F::neg_infinity(), pt);
    }
    let ll: F = obs.iter().map(|o| pt.log_lik(o)).sum();
    let total = lp + ll;
    (if total.is_nan() { F::neg_infinity() } else { total }, pt)
}

impl<F: Scalar> FrontPosterior<F> {
    /// Apply `policy` given every observation absorbed so far. Returns
    /// `true` when the particle set was rebuilt.
    pub fn rejuvenate<R: Rng + ?Sized>(
        &mut self,
        policy: &ResamplePolicy<F>,
        prior: &CurvePrior<F>,
        history: &[FrontObservation<F>],
        rng: &mut R,
    ) -> Result<bool> {
        let (fraction, steps) = match *policy {
            ResamplePolicy::Off => return Ok(false),
            ResamplePolicy::Resample { ess_fraction } => (ess_fraction, 0),
            ResamplePolicy::ResampleMove { ess_fraction, steps } => (ess_fraction, steps),
        };
        if !self.resample_if_degenerate(fraction, rng)? {
            return Ok(false);
        }
        if steps > 0 && self.particle_count() > 1 {
            self.metropolis_moves(prior, history, steps, rng)?;
        }
        Ok(true)
    }

    fn metropolis_moves<R: Rng + ?Sized>(
        &mut self,
        prior: &CurvePrior<F>,
        history: &[FrontObservation<F>],
        steps: usize,
        rng: &mut R,
    ) -> Result<()> {
        let d = dists(prior);
        let kind = self.particles.values()[0].params.kind;
        let mut zs: Vec<[F; 5]> = self.particles.values().iter().map(|p| encode(p, &d)).collect();
        let mut cur: Vec<(F, FrontParticle<F>)> =
            zs.iter().map(|z| log_target(z, kind, &d, history)).collect();

        // Proposal scale from the spread of the resampled cloud, floored so a
        // fully collapsed cloud can still move.
        let n = F::from_usize(zs.len()).expect("count representable");
        let mut scale = [F::zero(); 5];
        for j in 0..5 {
            let mean = zs.iter().map(|z| z[j]).sum::<F>() / n;
            let var = zs.iter().map(|z| (z[j] - mean) * (z[j] - mean)).sum::<F>() / n;
            scale[j] = var.sqrt().max(F::lit(0.01)) * F::lit(0.5);
        }

        for _ in 0..steps {
            let mut accepted = 0usize;
            for (z, c) in zs.iter_mut().zip(cur.iter_mut()) {
                let mut prop = *z;
                for j in 0..5 {
                    prop[j] = prop[j] + scale[j] * F::sample_standard_normal(rng);
                }
                let (lt, pt) = log_target(&prop, kind, &d, history);
                let log_u = F::sample_open01(rng).ln();
                if lt.is_finite() && log_u < lt - c.0 {
                    *z = prop;
                    *c = (lt, pt);
                    accepted += 1;
                }
            }
            let rate = accepted as f64 / zs.len() as f64;
            let adj = if rate < 0.15 {
                F::lit(0.6)
            } else if rate > 0.45 {
                F::lit(1.5)
            } else {
                F::one()
            };
            for s in scale.iter_mut() {
                *s = *s * adj;
            }
        }
        self.particles = WeightedParticles::uniform(cur.into_iter().map(|(_, p)| p).collect())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn transforms_round_trip() {
        let ds = [
            Dist::Beta { alpha: 2.0f64, beta: 3.0 },
            Dist::LogNormal { mu: 1.0, sigma: 0.3 },
            Dist::Normal { mean: 0.0, sd: 1.0 },
            Dist::Uniform { low: 5.0, high: 50.0 },
            Dist::Gamma { shape: 0.5, scale: 0.1 },
        ];
        let xs = [0.3, 2.5, -0.7, 12.0, 0.02];
        for (d, x) in ds.iter().zip(xs) {
            let z = d.to_unconstrained(x);
            let (back, lj) = d.from_unconstrained(z);
            assert!((back - x).abs() < 1e-12 * x.abs().max(1.0), "{d:?}");
            let h = 1e-6;
            let fd = (d.from_unconstrained(z + h).0 - d.from_unconstrained(z - h).0) / (2.0 * h);
            assert!((fd.ln() - lj).abs() < 1e-6, "{d:?}: {} vs {lj}", fd.ln());
        }
    }

    #[test]
    fn log_density_ratios() {
        let b = Dist::Beta { alpha: 2.0f64, beta: 2.0 };
        // Beta(2,2) density is 6x(1-x).
        let r = b.log_density_unnormalized(0.3) - b.log_density_unnormalized(0.5);
        assert!((r - (0.21f64 / 0.25).ln()).abs() < 1e-12);
        assert_eq!(b.log_density_unnormalized(1.5), f64::NEG_INFINITY);
        let u = Dist::Uniform { low: 0.0f64, high: 1.0 };
        assert_eq!(u.log_density_unnormalized(2.0), f64::NEG_INFINITY);
    }

    #[test]
    fn off_policy_is_a_no_op() {
        let prior = CurvePrior::sigmoid_default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut post = FrontPosterior::<f64>::init(CurveKind::Sigmoid, &prior, 50, &mut rng).unwrap();
        let before = post.clone();
        assert!(!post.rejuvenate(&ResamplePolicy::Off, &prior, &[], &mut rng).unwrap());
        assert_eq!(post, before);
    }

    #[test]
    fn resample_move_restores_diversity() {
        let prior = CurvePrior::sigmoid_default();
        let truth = FrontParams::sigmoid(0.93, 11.0, 0.02, 0.45).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut post = FrontPosterior::<f64>::init(CurveKind::Sigmoid, &prior, 500, &mut rng).unwrap();
        let obs: Vec<_> = (0..20)
            .map(|i| {
                let p = i as f64 / 19.0;
                FrontObservation::new(p, truth.eval(p)).unwrap()
            })
            .collect();
        post = post.update_batch(&obs).unwrap();
        assert!(post.effective_sample_size() < 5.0);
        let policy = ResamplePolicy::ResampleMove { ess_fraction: 0.25, steps: 5 };
        assert!(post.rejuvenate(&policy, &prior, &obs, &mut rng).unwrap());
        assert!((post.effective_sample_size() - 500.0).abs() < 1e-9);
        let mut distinct: Vec<f64> = post.particles.values().iter().map(|p| p.params.c).collect();
        distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
        distinct.dedup();
        assert!(distinct.len() > 50, "{}", distinct.len());
    }
}
