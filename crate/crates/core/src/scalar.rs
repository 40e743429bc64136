//! Floating point abstraction shared by every model in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, Open01, StandardNormal};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar the models are generic over: `f32` or `f64`.
///
/// Random variate generation is part of the trait because `rand_distr`
/// expresses its support for a float type as bounds on the distribution
/// types, which do not propagate through a supertrait list.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Draw from N(0, 1).
    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Draw uniformly from the open interval (0, 1).
    fn sample_open01<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Draw from Gamma(shape, scale). Parameters must be positive.
    fn sample_gamma<R: Rng + ?Sized>(rng: &mut R, shape: Self, scale: Self) -> Self;

    /// Draw from Beta(a, b). Parameters must be positive.
    fn sample_beta<R: Rng + ?Sized>(rng: &mut R, a: Self, b: Self) -> Self;

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// Clamp into `[lo, hi]`. NaN is passed through.
    #[inline]
    fn clamp_to(self, lo: Self, hi: Self) -> Self {
        if self < lo {
            lo
        } else if self > hi {
            hi
        } else {
            self
        }
    }
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            #[inline]
            fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                StandardNormal.sample(rng)
            }

            #[inline]
            fn sample_open01<R: Rng + ?Sized>(rng: &mut R) -> Self {
                Open01.sample(rng)
            }

            fn sample_gamma<R: Rng + ?Sized>(rng: &mut R, shape: Self, scale: Self) -> Self {
                Gamma::new(shape, scale)
                    .expect("gamma parameters validated by caller")
                    .sample(rng)
            }

            fn sample_beta<R: Rng + ?Sized>(rng: &mut R, a: Self, b: Self) -> Self {
                Beta::new(a, b)
                    .expect("beta parameters validated by caller")
                    .sample(rng)
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// `log(sum(exp(xs)))` with max-subtraction. Returns `-inf` for an empty
/// slice or when every entry is `-inf`.
pub fn log_sum_exp<F: Scalar>(xs: &[F]) -> F {
    let max = xs.iter().copied().fold(F::neg_infinity(), F::max);
    if !max.is_finite() {
        return max;
    }
    let sum: F = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Log density of N(mean, sd^2) at `x`.
#[inline]
pub fn gaussian_log_pdf<F: Scalar>(x: F, mean: F, sd: F) -> F {
    let z = (x - mean) / sd;
    -F::lit(0.5) * z * z - sd.ln() - F::lit(0.5) * (F::lit(2.0) * F::PI()).ln()
}

/// Index of the first maximal element. `None` for an empty slice.
/// NaN entries never win.
pub fn argmax_first<F: Scalar>(xs: &[F]) -> Option<usize> {
    let mut best: Option<(usize, F)> = None;
    for (i, &x) in xs.iter().enumerate() {
        match best {
            None if !x.is_nan() => best = Some((i, x)),
            Some((_, b)) if x > b => best = Some((i, x)),
            _ => {}
        }
    }
    best.map(|(i, _)| i)
}

/// Evenly spaced grid of `n` points on `[0, 1]`. `n == 1` yields `[0]`.
pub fn unit_grid<F: Scalar>(n: usize) -> Vec<F> {
    if n <= 1 {
        return vec![F::zero(); n];
    }
    let denom = F::from_usize(n - 1).expect("grid size representable");
    (0..n)
        .map(|i| F::from_usize(i).expect("grid index representable") / denom)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_matches_direct_sum() {
        let xs = [0.1f64, -2.0, 3.5];
        let direct: f64 = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - direct).abs() < 1e-14);
        assert_eq!(log_sum_exp::<f64>(&[]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[-1000.0f64, -1000.0]) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn gaussian_at_mean() {
        let v = gaussian_log_pdf(0.3f64, 0.3, 1.0);
        assert!((v + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        assert_eq!(argmax_first(&[1.0f64, 3.0, 3.0, 2.0]), Some(1));
        assert_eq!(argmax_first::<f64>(&[]), None);
        assert_eq!(argmax_first(&[f64::NAN, 0.0]), Some(1));
    }

    #[test]
    fn grid_endpoints() {
        let g: Vec<f32> = unit_grid(5);
        assert_eq!(g, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(unit_grid::<f64>(1), vec![0.0]);
    }
}
