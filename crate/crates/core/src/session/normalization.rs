use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Min-max normalization of privacy level `p = -ln(eps)` and accuracy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct NormalizationSpec<F> {
    pub eps_min: F,
    pub eps_max: F,
    pub alpha_min: F,
    pub alpha_max: F,
}

impl<F: Scalar> NormalizationSpec<F> {
    pub fn new(eps_min: F, eps_max: F, alpha_min: F, alpha_max: F) -> Result<Self> {
        let s = Self { eps_min, eps_max, alpha_min, alpha_max };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_min > F::zero() && self.eps_max.is_finite() && self.eps_max > self.eps_min) {
            return Err(Error::Config(format!(
                "normalization needs 0 < eps_min < eps_max, got [{}, {}]",
                self.eps_min, self.eps_max
            )));
        }
        if !(self.alpha_min.is_finite() && self.alpha_max.is_finite() && self.alpha_max > self.alpha_min) {
            return Err(Error::Config(format!(
                "normalization needs alpha_min < alpha_max, got [{}, {}]",
                self.alpha_min, self.alpha_max
            )));
        }
        Ok(())
    }

    /// `-ln(eps_max)`
    pub fn p_min(&self) -> F {
        -self.eps_max.ln()
    }

    /// `-ln(eps_min)`
    pub fn p_max(&self) -> F {
        -self.eps_min.ln()
    }

    pub fn normalize_privacy(&self, eps: F) -> Result<F> {
        if !(eps >= self.eps_min && eps <= self.eps_max) {
            return Err(Error::OutOfRange { value: eps.as_f64(), low: self.eps_min.as_f64(), high: self.eps_max.as_f64() });
        }
        let p = ((-eps.ln() - self.p_min()) / (self.p_max() - self.p_min())).clamp_to(F::zero(), F::one());
        Ok(p)
    }

    pub fn denormalize_privacy(&self, p: F) -> Result<F> {
        if !(p >= F::zero() && p <= F::one()) {
            return Err(Error::OutOfRange { value: p.as_f64(), low: 0.0, high: 1.0 });
        }
        Ok(self.eps_of(p))
    }

    /// Raw epsilon for normalized `p`, endpoints returned exactly.
    pub(crate) fn eps_of(&self, p: F) -> F {
        if p <= F::zero() {
            self.eps_max
        } else if p >= F::one() {
            self.eps_min
        } else {
            (-(self.p_min() + p * (self.p_max() - self.p_min()))).exp()
        }
    }

    pub fn normalize_accuracy(&self, alpha: F) -> F {
        (alpha - self.alpha_min) / (self.alpha_max - self.alpha_min)
    }

    pub fn denormalize_accuracy(&self, alpha_norm: F) -> F {
        self.alpha_min + alpha_norm * (self.alpha_max - self.alpha_min)
    }
}
