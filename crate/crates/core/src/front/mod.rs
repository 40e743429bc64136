//! S-shaped Pareto-front surrogates and their importance-sampling posterior.
//!
//! Both curve families map normalized privacy `p` to accuracy and are
//! decreasing in `p`:
//!
//! * sigmoid: `L / (1 + exp(k (p - c))) + b`
//! * Gompertz: `b - L exp(-k exp(-c p))`
//!
//! The Gompertz form is the one obtained for output-perturbed logistic
//! regression, where accuracy is `1 - 0.5 exp(-C eps)` and `p = -ln eps`
//! gives `b = 1, L = 0.5, k = C, c = 1`.

mod fit;
mod prior;
mod rejuvenate;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::particles::WeightedParticles;
use crate::scalar::{gaussian_log_pdf, Scalar};

pub use fit::{map_fit, map_fit_with, FitOptions, FitReport};
pub use prior::{sample_prior, CurvePrior, Dist, PriorSet};
pub use rejuvenate::ResamplePolicy;

/// Default number of particles in a front posterior.
pub const DEFAULT_FRONT_PARTICLES: usize = 4000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Sigmoid,
    Gompertz,
}

impl std::str::FromStr for CurveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sigmoid" => Ok(CurveKind::Sigmoid),
            "gompertz" => Ok(CurveKind::Gompertz),
            other => Err(Error::invalid(format!("unknown curve kind `{other}`"))),
        }
    }
}

/// Parameters `(L, k, b, c)` of one front curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct FrontParams<F> {
    pub kind: CurveKind,
    #[serde(rename = "L")]
    pub l: F,
    pub k: F,
    pub b: F,
    pub c: F,
}

impl<F: Scalar> FrontParams<F> {
    pub fn new(kind: CurveKind, l: F, k: F, b: F, c: F) -> Result<Self> {
        let p = Self { kind, l, k, b, c };
        p.validate()?;
        Ok(p)
    }

    pub fn sigmoid(l: F, k: F, b: F, c: F) -> Result<Self> {
        Self::new(CurveKind::Sigmoid, l, k, b, c)
    }

    pub fn gompertz(l: F, k: F, b: F, c: F) -> Result<Self> {
        Self::new(CurveKind::Gompertz, l, k, b, c)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.l, self.k, self.b, self.c].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!("non-finite front parameters {self:?}")));
        }
        if self.k <= F::zero() || self.l <= F::zero() {
            return Err(Error::invalid(format!("front requires L > 0 and k > 0, got {self:?}")));
        }
        Ok(())
    }

    /// Accuracy predicted at privacy level `p`. No validation.
    #[inline]
    pub fn eval(&self, p: F) -> F {
        match self.kind {
            CurveKind::Sigmoid => self.l / (F::one() + (self.k * (p - self.c)).exp()) + self.b,
            CurveKind::Gompertz => self.b - self.l * (-self.k * (-self.c * p).exp()).exp(),
        }
    }

    /// `eval` clamped into the normalized accuracy range `[0, 1]`.
    #[inline]
    pub fn eval_clamped(&self, p: F) -> F {
        self.eval(p).clamp_to(F::zero(), F::one())
    }

    /// Gradient of `eval` with respect to `(L, k, b, c)`.
    pub(crate) fn gradient(&self, p: F) -> [F; 4] {
        let one = F::one();
        match self.kind {
            CurveKind::Sigmoid => {
                let s = one / (one + (self.k * (p - self.c)).exp());
                let ds = s * (one - s);
                [s, -self.l * ds * (p - self.c), one, self.l * ds * self.k]
            }
            CurveKind::Gompertz => {
                let g = (-self.c * p).exp();
                let e = (-self.k * g).exp();
                [-e, self.l * e * g, one, -self.l * e * self.k * p * g]
            }
        }
    }

    pub(crate) fn to_array(self) -> [F; 4] {
        [self.l, self.k, self.b, self.c]
    }

    pub(crate) fn from_array(kind: CurveKind, a: [F; 4]) -> Self {
        Self { kind, l: a[0], k: a[1], b: a[2], c: a[3] }
    }
}

/// Checked front evaluation.
pub fn eval_front<F: Scalar>(p: F, params: &FrontParams<F>) -> Result<F> {
    if !p.is_finite() {
        return Err(Error::invalid(format!("non-finite privacy level {p}")));
    }
    params.validate()?;
    Ok(params.eval(p))
}

/// Standard deviation of accuracy observations around the front.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent, bound = "F: Scalar")]
pub struct NoiseScale<F>(pub F);

impl<F: Scalar> NoiseScale<F> {
    pub fn new(sigma: F) -> Result<Self> {
        if sigma > F::zero() && sigma.is_finite() {
            Ok(Self(sigma))
        } else {
            Err(Error::invalid(format!("noise scale must be positive, got {sigma}")))
        }
    }

    pub fn get(self) -> F {
        self.0
    }
}

/// One oracle evaluation on the normalized axes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct FrontObservation<F> {
    pub p: F,
    pub alpha: F,
}

impl<F: Scalar> FrontObservation<F> {
    pub fn new(p: F, alpha: F) -> Result<Self> {
        if !(p >= F::zero() && p <= F::one()) {
            return Err(Error::OutOfRange { value: p.as_f64(), low: 0.0, high: 1.0 });
        }
        if !alpha.is_finite() {
            return Err(Error::invalid(format!("non-finite accuracy {alpha}")));
        }
        Ok(Self { p, alpha })
    }
}

/// `sum_n log N(alpha_n | h(p_n), sigma^2)`.
pub fn log_likelihood<F: Scalar>(
    params: &FrontParams<F>,
    sigma: NoiseScale<F>,
    obs: &[FrontObservation<F>],
) -> Result<F> {
    if !(sigma.0 > F::zero()) {
        return Err(Error::invalid(format!("noise scale must be positive, got {}", sigma.0)));
    }
    if obs.iter().any(|o| !o.p.is_finite() || !o.alpha.is_finite()) {
        return Err(Error::invalid("non-finite observation"));
    }
    Ok(obs
        .iter()
        .map(|o| gaussian_log_pdf(o.alpha, params.eval(o.p), sigma.0))
        .sum())
}

/// A posterior sample: curve parameters plus noise level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct FrontParticle<F> {
    pub params: FrontParams<F>,
    pub sigma: NoiseScale<F>,
}

impl<F: Scalar> FrontParticle<F> {
    #[inline]
    pub fn log_lik(&self, obs: &FrontObservation<F>) -> F {
        gaussian_log_pdf(obs.alpha, self.params.eval(obs.p), self.sigma.0)
    }
}

/// Mean and 90% credible band of the posterior front at one privacy level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct BandPoint<F> {
    pub p: F,
    pub mean: F,
    pub lower: F,
    pub upper: F,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct MeanCurve<F> {
    pub points: Vec<BandPoint<F>>,
    /// Set when a single particle holds all the mass; the band then
    /// collapses onto the mean.
    pub degenerate: bool,
}

/// Importance-sampling posterior over `(FrontParams, NoiseScale)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct FrontPosterior<F> {
    pub particles: WeightedParticles<FrontParticle<F>, F>,
}

impl<F: Scalar> FrontPosterior<F> {
    /// `particle_count` i.i.d. prior draws with uniform weights.
    pub fn init<R: Rng + ?Sized>(
        kind: CurveKind,
        prior: &CurvePrior<F>,
        particle_count: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if particle_count == 0 {
            return Err(Error::invalid("particle_count must be at least 1"));
        }
        prior.validate()?;
        let values = (0..particle_count)
            .map(|_| {
                let (params, sigma) = prior.sample(kind, rng);
                FrontParticle { params, sigma }
            })
            .collect();
        Ok(Self { particles: WeightedParticles::uniform(values)? })
    }

    /// All mass on one known curve.
    pub fn point_mass(params: FrontParams<F>, sigma: NoiseScale<F>) -> Self {
        Self { particles: WeightedParticles::point_mass(FrontParticle { params, sigma }) }
    }

    pub fn from_particles(particles: WeightedParticles<FrontParticle<F>, F>) -> Self {
        Self { particles }
    }

    pub fn particle_count(&self) -> usize {
        self.particles.len()
    }

    /// Reweight every particle by the Gaussian likelihood of `obs`.
    pub fn update(&self, obs: &FrontObservation<F>) -> Result<Self> {
        Ok(Self { particles: self.particles.reweighted(|pt| pt.log_lik(obs))? })
    }

    /// Reweight by a batch of observations at once.
    pub fn update_batch(&self, obs: &[FrontObservation<F>]) -> Result<Self> {
        Ok(Self {
            particles: self
                .particles
                .reweighted(|pt| obs.iter().map(|o| pt.log_lik(o)).sum())?,
        })
    }

    pub fn effective_sample_size(&self) -> F {
        self.particles.effective_sample_size()
    }

    /// Systematic resampling when the ESS falls below `fraction * N`.
    /// Returns `true` if a resample happened.
    pub fn resample_if_degenerate<R: Rng + ?Sized>(&mut self, fraction: F, rng: &mut R) -> Result<bool> {
        let n = self.particles.len();
        let threshold = fraction * F::from_usize(n).expect("count representable");
        if self.effective_sample_size() < threshold {
            self.particles = self.particles.systematic_resample(n, rng)?;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    /// Weighted mean accuracy at `p`.
    pub fn mean_at(&self, p: F) -> F {
        self.particles.iter().map(|(pt, w)| w * pt.params.eval(p)).sum()
    }

    /// Posterior mean curve with weighted 5%/95% quantile band.
    pub fn mean_curve(&self, grid: &[F]) -> Result<MeanCurve<F>> {
        if grid.iter().any(|p| !(*p >= F::zero() && *p <= F::one())) {
            return Err(Error::invalid("grid values must lie in [0, 1]"));
        }
        let degenerate = self.particles.support_size() <= 1;
        let weights = self.particles.weights();
        let mut scratch: Vec<(F, F)> = Vec::with_capacity(self.particles.len());
        let points = grid
            .iter()
            .map(|&p| {
                scratch.clear();
                scratch.extend(
                    self.particles
                        .values()
                        .iter()
                        .zip(&weights)
                        .filter(|(_, w)| **w > F::zero())
                        .map(|(pt, &w)| (pt.params.eval(p), w)),
                );
                let mean: F = scratch.iter().map(|&(a, w)| a * w).sum();
                if degenerate {
                    return BandPoint { p, mean, lower: mean, upper: mean };
                }
                scratch.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite accuracies"));
                BandPoint {
                    p,
                    mean,
                    lower: weighted_quantile(&scratch, F::lit(0.05)),
                    upper: weighted_quantile(&scratch, F::lit(0.95)),
                }
            })
            .collect();
        Ok(MeanCurve { points, degenerate })
    }
}

/// Smallest value whose cumulative weight reaches `q`. `sorted` must be
/// ascending in value with normalized weights.
fn weighted_quantile<F: Scalar>(sorted: &[(F, F)], q: F) -> F {
    let mut acc = F::zero();
    for &(v, w) in sorted {
        acc = acc + w;
        if acc >= q {
            return v;
        }
    }
    sorted.last().map(|p| p.0).unwrap_or_else(F::nan)
}
