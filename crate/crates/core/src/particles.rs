//! Weighted particle sets used as importance-sampling posteriors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, Scalar};

/// Log-weight assigned to particles whose likelihood underflowed to zero.
/// Keeps every stored log-weight finite while contributing nothing after
/// normalization.
fn log_weight_floor<F: Scalar>() -> F {
    F::lit(-1e30)
}

/// A posterior represented by `(value, log-weight)` pairs.
///
/// Log-weights are always stored normalized, so `sum(exp(log_w)) == 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize, F: Scalar", deserialize = "T: Deserialize<'de>, F: Scalar"))]
pub struct WeightedParticles<T, F> {
    values: Vec<T>,
    log_weights: Vec<F>,
}

impl<T, F: Scalar> WeightedParticles<T, F> {
    /// Equally weighted particles.
    pub fn uniform(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("particle set must not be empty"));
        }
        let n = F::from_usize(values.len()).expect("particle count representable");
        let lw = -n.ln();
        let log_weights = vec![lw; values.len()];
        Ok(Self { values, log_weights })
    }

    /// Particles with arbitrary (unnormalized) log-weights.
    pub fn from_log_weights(values: Vec<T>, log_weights: Vec<F>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("particle set must not be empty"));
        }
        if values.len() != log_weights.len() {
            return Err(Error::invalid(format!(
                "{} values but {} log-weights",
                values.len(),
                log_weights.len()
            )));
        }
        let mut out = Self { values, log_weights };
        out.sanitize_and_normalize()?;
        Ok(out)
    }

    /// A single particle carrying all the mass.
    pub fn point_mass(value: T) -> Self {
        Self {
            values: vec![value],
            log_weights: vec![F::zero()],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Normalized log-weights.
    pub fn log_weights(&self) -> &[F] {
        &self.log_weights
    }

    /// Normalized weights.
    pub fn weights(&self) -> Vec<F> {
        self.log_weights.iter().map(|lw| lw.exp()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&T, F)> + '_ {
        self.values
            .iter()
            .zip(self.log_weights.iter().map(|lw| lw.exp()))
    }

    /// `1 / sum(w^2)` for the normalized weights.
    pub fn effective_sample_size(&self) -> F {
        let s: F = self.log_weights.iter().map(|&lw| (lw + lw).exp()).sum();
        F::one() / s
    }

    /// Number of particles whose normalized weight is non-zero.
    pub fn support_size(&self) -> usize {
        self.log_weights
            .iter()
            .filter(|lw| lw.exp() > F::zero())
            .count()
    }

    /// Multiply each weight by `exp(log_lik(value))` and renormalize.
    pub fn reweighted(&self, mut log_lik: impl FnMut(&T) -> F) -> Result<Self>
    where
        T: Clone,
    {
        let log_weights = self
            .values
            .iter()
            .zip(&self.log_weights)
            .map(|(v, &lw)| lw + log_lik(v))
            .collect();
        let mut out = Self {
            values: self.values.clone(),
            log_weights,
        };
        out.sanitize_and_normalize()?;
        Ok(out)
    }

    /// In-place variant of [`reweighted`](Self::reweighted) that only touches
    /// the weights.
    pub fn reweight_in_place(&mut self, mut log_lik: impl FnMut(&T) -> F) -> Result<()> {
        for (v, lw) in self.values.iter().zip(self.log_weights.iter_mut()) {
            *lw = *lw + log_lik(v);
        }
        self.sanitize_and_normalize()
    }

    /// Draw one particle index with probability equal to its weight.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u = F::sample_open01(rng);
        let mut acc = F::zero();
        let mut last_positive = 0;
        for (i, lw) in self.log_weights.iter().enumerate() {
            let w = lw.exp();
            if w > F::zero() {
                last_positive = i;
            }
            acc = acc + w;
            if u < acc {
                return i;
            }
        }
        last_positive
    }

    /// Systematic resampling to `n` equally weighted particles.
    pub fn systematic_resample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Self>
    where
        T: Clone,
    {
        let picks = systematic_indices(&self.weights(), n, rng);
        Self::uniform(picks.into_iter().map(|i| self.values[i].clone()).collect())
    }

    fn sanitize_and_normalize(&mut self) -> Result<()> {
        let floor = log_weight_floor::<F>();
        for lw in self.log_weights.iter_mut() {
            if lw.is_nan() || *lw < floor {
                *lw = floor;
            }
        }
        let max = self
            .log_weights
            .iter()
            .copied()
            .fold(F::neg_infinity(), F::max);
        if max <= floor {
            return Err(Error::Degenerate(
                "every particle has zero likelihood".into(),
            ));
        }
        if max == F::infinity() {
            return Err(Error::Degenerate("infinite log-weight".into()));
        }
        let z = log_sum_exp(&self.log_weights);
        for lw in self.log_weights.iter_mut() {
            *lw = (*lw - z).max(floor);
        }
        Ok(())
    }
}

/// Indices chosen by systematic resampling of `weights` (assumed normalized).
pub fn systematic_indices<F: Scalar, R: Rng + ?Sized>(weights: &[F], n: usize, rng: &mut R) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    if weights.is_empty() || n == 0 {
        return out;
    }
    let nf = F::from_usize(n).expect("count representable");
    let u0 = F::sample_open01(rng) / nf;
    let mut acc = weights[0];
    let mut j = 0;
    for i in 0..n {
        let target = u0 + F::from_usize(i).expect("index representable") / nf;
        while target > acc && j + 1 < weights.len() {
            j += 1;
            acc = acc + weights[j];
        }
        out.push(j);
    }
    out
}
