//! Prior distributions over front parameters and observation noise.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{CurveKind, FrontParams, NoiseScale};

/// A univariate distribution usable as a prior factor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", bound = "F: Scalar")]
pub enum Dist<F> {
    Beta { alpha: F, beta: F },
    /// `mu` and `sigma` are the mean and standard deviation of the log.
    LogNormal { mu: F, sigma: F },
    Normal { mean: F, sd: F },
    Uniform { low: F, high: F },
    /// Shape/scale parameterization, mean `shape * scale`.
    Gamma { shape: F, scale: F },
}

impl<F: Scalar> Dist<F> {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Dist::Beta { alpha, beta } => alpha > F::zero() && beta > F::zero(),
            Dist::LogNormal { mu, sigma } => mu.is_finite() && sigma > F::zero(),
            Dist::Normal { mean, sd } => mean.is_finite() && sd > F::zero(),
            Dist::Uniform { low, high } => low.is_finite() && high.is_finite() && low < high,
            Dist::Gamma { shape, scale } => shape > F::zero() && scale > F::zero(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid prior distribution {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> F {
        match *self {
            Dist::Beta { alpha, beta } => F::sample_beta(rng, alpha, beta),
            Dist::LogNormal { mu, sigma } => (mu + sigma * F::sample_standard_normal(rng)).exp(),
            Dist::Normal { mean, sd } => mean + sd * F::sample_standard_normal(rng),
            Dist::Uniform { low, high } => low + (high - low) * F::sample_open01(rng),
            Dist::Gamma { shape, scale } => F::sample_gamma(rng, shape, scale),
        }
    }

    pub fn mean(&self) -> F {
        let half = F::lit(0.5);
        match *self {
            Dist::Beta { alpha, beta } => alpha / (alpha + beta),
            Dist::LogNormal { mu, sigma } => (mu + half * sigma * sigma).exp(),
            Dist::Normal { mean, .. } => mean,
            Dist::Uniform { low, high } => half * (low + high),
            Dist::Gamma { shape, scale } => shape * scale,
        }
    }

    /// Closed support interval (infinite ends where unbounded).
    pub fn support(&self) -> (F, F) {
        match *self {
            Dist::Beta { .. } => (F::zero(), F::one()),
            Dist::LogNormal { .. } | Dist::Gamma { .. } => (F::zero(), F::infinity()),
            Dist::Normal { .. } => (F::neg_infinity(), F::infinity()),
            Dist::Uniform { low, high } => (low, high),
        }
    }
}

/// Independent priors over `(L, k, c, b, sigma)` for one curve family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct CurvePrior<F> {
    #[serde(rename = "L")]
    pub l: Dist<F>,
    pub k: Dist<F>,
    pub c: Dist<F>,
    pub b: Dist<F>,
    pub sigma: Dist<F>,
}

impl<F: Scalar> CurvePrior<F> {
    /// Sigmoid priors: L ~ Beta(40, 2), k ~ LogNormal(log 10, 0.2),
    /// c ~ Beta(2, 2), b ~ Normal(0, 0.1), sigma ~ Gamma(0.5, 0.1).
    pub fn sigmoid_default() -> Self {
        Self {
            l: Dist::Beta { alpha: F::lit(40.0), beta: F::lit(2.0) },
            k: Dist::LogNormal { mu: F::lit(10f64.ln()), sigma: F::lit(0.2) },
            c: Dist::Beta { alpha: F::lit(2.0), beta: F::lit(2.0) },
            b: Dist::Normal { mean: F::zero(), sd: F::lit(0.1) },
            sigma: Dist::Gamma { shape: F::lit(0.5), scale: F::lit(0.1) },
        }
    }

    /// Gompertz priors on the raw privacy axis: L ~ U(0.8, 4),
    /// k ~ U(10, 100), c ~ U(1, 10), b ~ U(0.8, 1.1), sigma ~ Gamma(0.5, 0.1).
    pub fn gompertz_raw() -> Self {
        Self::gompertz_scaled(F::one())
    }

    /// Gompertz priors with the location rate `c` multiplied by `c_scale`.
    ///
    /// The inflection of `b - L exp(-k exp(-c p))` sits at `ln(k) / c`; with
    /// `c_scale = 5` it falls inside `[0.05, 0.92]` for the whole `k` range,
    /// which is what the normalized privacy axis needs.
    pub fn gompertz_scaled(c_scale: F) -> Self {
        Self {
            l: Dist::Uniform { low: F::lit(0.8), high: F::lit(4.0) },
            k: Dist::Uniform { low: F::lit(10.0), high: F::lit(100.0) },
            c: Dist::Uniform { low: c_scale, high: F::lit(10.0) * c_scale },
            b: Dist::Uniform { low: F::lit(0.8), high: F::lit(1.1) },
            sigma: Dist::Gamma { shape: F::lit(0.5), scale: F::lit(0.1) },
        }
    }

    pub fn validate(&self) -> Result<()> {
        for d in [&self.l, &self.k, &self.c, &self.b, &self.sigma] {
            d.validate()?;
        }
        let (lo, _) = self.sigma.support();
        if lo < F::zero() {
            return Err(Error::Config("noise prior must be supported on (0, inf)".into()));
        }
        let (lo, _) = self.k.support();
        if lo < F::zero() {
            return Err(Error::Config("steepness prior must be supported on (0, inf)".into()));
        }
        let (lo, _) = self.l.support();
        if lo < F::zero() {
            return Err(Error::Config("span prior must be supported on (0, inf)".into()));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, kind: CurveKind, rng: &mut R) -> (FrontParams<F>, NoiseScale<F>) {
        let tiny = F::min_positive_value();
        let l = self.l.sample(rng).max(tiny);
        let k = self.k.sample(rng).max(tiny);
        let c = self.c.sample(rng);
        let b = self.b.sample(rng);
        let sigma = self.sigma.sample(rng).max(tiny);
        (
            FrontParams { kind, l, k, b, c },
            NoiseScale(sigma),
        )
    }

    /// Parameters at the prior means.
    pub fn mean_params(&self, kind: CurveKind) -> FrontParams<F> {
        FrontParams {
            kind,
            l: self.l.mean(),
            k: self.k.mean(),
            b: self.b.mean(),
            c: self.c.mean(),
        }
    }
}

/// Priors for both curve families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar", default)]
pub struct PriorSet<F> {
    pub sigmoid: CurvePrior<F>,
    pub gompertz: CurvePrior<F>,
}

impl<F: Scalar> Default for PriorSet<F> {
    fn default() -> Self {
        Self {
            sigmoid: CurvePrior::sigmoid_default(),
            gompertz: CurvePrior::gompertz_scaled(F::lit(5.0)),
        }
    }
}

impl<F: Scalar> PriorSet<F> {
    pub fn for_kind(&self, kind: CurveKind) -> &CurvePrior<F> {
        match kind {
            CurveKind::Sigmoid => &self.sigmoid,
            CurveKind::Gompertz => &self.gompertz,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sigmoid.validate()?;
        self.gompertz.validate()
    }
}

/// Draw `(params, sigma)` from the default priors of `kind`.
pub fn sample_prior<F: Scalar, R: Rng + ?Sized>(kind: CurveKind, rng: &mut R) -> (FrontParams<F>, NoiseScale<F>) {
    PriorSet::default().for_kind(kind).sample(kind, rng)
}
