//! Utility functions over normalized trade-offs, the Boltzmann-rational
//! choice model over a discretized front, and the posterior over
//! preference weights.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::front::FrontParams;
use crate::particles::WeightedParticles;
use crate::scalar::{argmax_first, log_sum_exp, unit_grid, Scalar};

/// Default discretization density of presented curves.
pub const DEFAULT_Q: usize = 101;
/// Default rationality temperature.
pub const DEFAULT_TEMPERATURE: f64 = 0.2;
/// Default number of preference particles.
pub const DEFAULT_PREF_PARTICLES: usize = 512;

/// Weights `(w_privacy, w_accuracy)` on the simplex interior.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[F; 2]", into = "[F; 2]", bound = "F: Scalar")]
pub struct PreferenceWeights<F> {
    w: [F; 2],
}

impl<F: Scalar> PreferenceWeights<F> {
    /// Weights `(w1, 1 - w1)`; `w1` must lie strictly inside `(0, 1)`.
    pub fn new(w1: F) -> Result<Self> {
        let w2 = F::one() - w1;
        if !(w1 > F::zero() && w2 > F::zero()) {
            return Err(Error::invalid(format!("preference weight {w1} not in (0, 1)")));
        }
        Ok(Self { w: [w1, w2] })
    }

    /// Explicit pair; must sum to one within `1e-12` and be positive.
    pub fn from_pair(w1: F, w2: F) -> Result<Self> {
        if !(w1 > F::zero() && w2 > F::zero()) {
            return Err(Error::invalid(format!("preference weights ({w1}, {w2}) must be positive")));
        }
        if (w1 + w2 - F::one()).abs() > F::lit(1e-12).max(F::epsilon() * F::lit(4.0)) {
            return Err(Error::invalid(format!("preference weights ({w1}, {w2}) must sum to 1")));
        }
        Ok(Self { w: [w1, w2] })
    }

    #[inline]
    pub fn privacy(&self) -> F {
        self.w[0]
    }

    #[inline]
    pub fn accuracy(&self) -> F {
        self.w[1]
    }

    pub fn as_array(&self) -> [F; 2] {
        self.w
    }

    /// Euclidean distance between two weight vectors.
    pub fn distance(&self, other: &Self) -> F {
        let a = self.w[0] - other.w[0];
        let b = self.w[1] - other.w[1];
        (a * a + b * b).sqrt()
    }
}

impl<F: Scalar> TryFrom<[F; 2]> for PreferenceWeights<F> {
    type Error = Error;

    fn try_from(w: [F; 2]) -> Result<Self> {
        Self::from_pair(w[0], w[1])
    }
}

impl<F: Scalar> From<PreferenceWeights<F>> for [F; 2] {
    fn from(w: PreferenceWeights<F>) -> Self {
        w.w
    }
}

/// A normalized `(privacy, accuracy)` pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct TradeOffPoint<F> {
    pub p: F,
    pub alpha: F,
}

impl<F: Scalar> TradeOffPoint<F> {
    pub fn new(p: F, alpha: F) -> Result<Self> {
        for v in [p, alpha] {
            if !(v >= F::zero() && v <= F::one()) {
                return Err(Error::OutOfRange { value: v.as_f64(), low: 0.0, high: 1.0 });
            }
        }
        Ok(Self { p, alpha })
    }
}

/// Chebyshev utility `min(p / w1, alpha / w2)` without validation.
#[inline]
pub fn chebyshev<F: Scalar>(p: F, alpha: F, w: &PreferenceWeights<F>) -> F {
    (p / w.w[0]).min(alpha / w.w[1])
}

pub fn chebyshev_utility<F: Scalar>(y: &TradeOffPoint<F>, w: &PreferenceWeights<F>) -> Result<F> {
    check_weights(w)?;
    Ok(chebyshev(y.p, y.alpha, w))
}

/// `w1 * p + w2 * alpha` on normalized axes.
pub fn linear_utility<F: Scalar>(y: &TradeOffPoint<F>, w: &PreferenceWeights<F>) -> Result<F> {
    check_weights(w)?;
    Ok(w.w[0] * y.p + w.w[1] * y.alpha)
}

/// `w1 exp(-eps) + w2 exp(alpha - 1)` on raw epsilon and raw accuracy.
pub fn exp_linear_utility<F: Scalar>(eps: F, alpha: F, w: &PreferenceWeights<F>) -> Result<F> {
    check_weights(w)?;
    if !eps.is_finite() || !alpha.is_finite() {
        return Err(Error::invalid("non-finite epsilon or accuracy"));
    }
    Ok(w.w[0] * (-eps).exp() + w.w[1] * (alpha - F::one()).exp())
}

fn check_weights<F: Scalar>(w: &PreferenceWeights<F>) -> Result<()> {
    if w.w[0] > F::zero() && w.w[1] > F::zero() {
        Ok(())
    } else {
        Err(Error::invalid("preference weights must be strictly positive"))
    }
}

/// Options presented to the decision-maker: a discretized hypothetical
/// front, or an explicit pair of trade-offs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct CurveQuery<F> {
    /// Curve the points were taken from; `None` for pairwise queries.
    pub params: Option<FrontParams<F>>,
    pub points: Vec<TradeOffPoint<F>>,
    /// How many points had their accuracy clamped into `[0, 1]`.
    #[serde(default)]
    pub clamped: usize,
}

impl<F: Scalar> CurveQuery<F> {
    /// `q` points uniform in `p`, accuracy clamped into `[0, 1]`.
    pub fn from_curve(params: FrontParams<F>, q: usize) -> Result<Self> {
        if q < 2 {
            return Err(Error::invalid(format!("a presented curve needs q >= 2 points, got {q}")));
        }
        params.validate()?;
        let mut clamped = 0;
        let points = unit_grid::<F>(q)
            .into_iter()
            .map(|p| {
                let raw = params.eval(p);
                let alpha = params.eval_clamped(p);
                if alpha != raw {
                    clamped += 1;
                }
                TradeOffPoint { p, alpha }
            })
            .collect();
        Ok(Self { params: Some(params), points, clamped })
    }

    /// Two-option query, ordered by `p`.
    pub fn pair(a: TradeOffPoint<F>, b: TradeOffPoint<F>) -> Self {
        let points = if b.p < a.p { vec![b, a] } else { vec![a, b] };
        Self { params: None, points, clamped: 0 }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::invalid("query must offer at least two options"));
        }
        for pt in &self.points {
            TradeOffPoint::new(pt.p, pt.alpha)?;
        }
        if self.points.windows(2).any(|w| w[1].p < w[0].p) {
            return Err(Error::invalid("query points must be sorted by privacy"));
        }
        Ok(())
    }

    /// Chebyshev utilities of every option under `w`.
    pub fn utilities(&self, w: &PreferenceWeights<F>) -> Vec<F> {
        self.points.iter().map(|y| chebyshev(y.p, y.alpha, w)).collect()
    }
}

/// A presented query and the option the decision-maker picked.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct ChoiceRecord<F> {
    pub query: CurveQuery<F>,
    pub chosen_index: usize,
}

impl<F: Scalar> ChoiceRecord<F> {
    pub fn new(query: CurveQuery<F>, chosen_index: usize) -> Result<Self> {
        if chosen_index >= query.len() {
            return Err(Error::OutOfRange {
                value: chosen_index as f64,
                low: 0.0,
                high: query.len().saturating_sub(1) as f64,
            });
        }
        Ok(Self { query, chosen_index })
    }
}

/// Boltzmann user model settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar", default, deny_unknown_fields)]
pub struct UserModelConfig<F> {
    /// Temperature of the simulated decision-maker.
    pub temperature: F,
    /// Temperature assumed by the learner; `None` means equal to `temperature`.
    pub learner_temperature: Option<F>,
    /// Points per presented curve.
    pub q: usize,
    /// Dirichlet concentration of the weight prior.
    pub dirichlet: [F; 2],
    pub particles: usize,
}

impl<F: Scalar> Default for UserModelConfig<F> {
    fn default() -> Self {
        Self {
            temperature: F::lit(DEFAULT_TEMPERATURE),
            learner_temperature: None,
            q: DEFAULT_Q,
            dirichlet: [F::lit(2.0), F::lit(2.0)],
            particles: DEFAULT_PREF_PARTICLES,
        }
    }
}

impl<F: Scalar> UserModelConfig<F> {
    pub fn learner_t(&self) -> F {
        self.learner_temperature.unwrap_or(self.temperature)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > F::zero()) || !(self.learner_t() > F::zero()) {
            return Err(Error::Config("user_model temperatures must be positive".into()));
        }
        if self.q < 2 {
            return Err(Error::Config("user_model.q must be at least 2".into()));
        }
        if !(self.dirichlet[0] > F::zero() && self.dirichlet[1] > F::zero()) {
            return Err(Error::Config("user_model.dirichlet must be positive".into()));
        }
        if self.particles == 0 {
            return Err(Error::Config("user_model.particles must be at least 1".into()));
        }
        Ok(())
    }
}

/// Log-probabilities `U_j / T - logsumexp(U / T)`.
pub fn log_softmax<F: Scalar>(utilities: &[F], temperature: F) -> Vec<F> {
    let scaled: Vec<F> = utilities.iter().map(|&u| u / temperature).collect();
    let z = log_sum_exp(&scaled);
    scaled.into_iter().map(|s| s - z).collect()
}

/// Boltzmann choice log-probabilities over the query's options.
pub fn choice_log_probs<F: Scalar>(
    query: &CurveQuery<F>,
    w: &PreferenceWeights<F>,
    temperature: F,
) -> Result<Vec<F>> {
    if !(temperature > F::zero()) {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    query.validate()?;
    Ok(log_softmax(&query.utilities(w), temperature))
}

/// Sample an option index from the Boltzmann model.
pub fn simulate_choice<F: Scalar, R: Rng + ?Sized>(
    query: &CurveQuery<F>,
    w: &PreferenceWeights<F>,
    temperature: F,
    rng: &mut R,
) -> Result<usize> {
    let lp = choice_log_probs(query, w, temperature)?;
    Ok(sample_categorical(&lp, rng))
}

/// Inverse-CDF draw from normalized log-probabilities.
pub(crate) fn sample_categorical<F: Scalar, R: Rng + ?Sized>(log_probs: &[F], rng: &mut R) -> usize {
    let u = F::sample_open01(rng);
    let mut acc = F::zero();
    let mut last = 0;
    for (i, lp) in log_probs.iter().enumerate() {
        let p = lp.exp();
        if p > F::zero() {
            last = i;
        }
        acc = acc + p;
        if u < acc {
            return i;
        }
    }
    last
}

/// Index of the highest-utility option; ties go to the smaller index.
pub fn argmax_option<F: Scalar>(utilities: &[F]) -> Option<usize> {
    argmax_first(utilities)
}

/// Draw `w1 ~ Beta(a, b)`, i.e. `w ~ Dirichlet(a, b)`, strictly interior.
pub fn sample_weight_prior<F: Scalar, R: Rng + ?Sized>(dirichlet: [F; 2], rng: &mut R) -> PreferenceWeights<F> {
    loop {
        let w1 = F::sample_beta(rng, dirichlet[0], dirichlet[1]);
        if let Ok(w) = PreferenceWeights::new(w1) {
            return w;
        }
    }
}

/// Importance-sampling posterior over preference weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct PrefPosterior<F> {
    pub particles: WeightedParticles<PreferenceWeights<F>, F>,
}

impl<F: Scalar> PrefPosterior<F> {
    pub fn init<R: Rng + ?Sized>(particle_count: usize, dirichlet: [F; 2], rng: &mut R) -> Result<Self> {
        if particle_count == 0 {
            return Err(Error::invalid("particle_count must be at least 1"));
        }
        let values = (0..particle_count).map(|_| sample_weight_prior(dirichlet, rng)).collect();
        Ok(Self { particles: WeightedParticles::uniform(values)? })
    }

    pub fn point_mass(w: PreferenceWeights<F>) -> Self {
        Self { particles: WeightedParticles::point_mass(w) }
    }

    pub fn from_particles(particles: WeightedParticles<PreferenceWeights<F>, F>) -> Self {
        Self { particles }
    }

    /// Reweight by the Boltzmann likelihood of one recorded choice.
    pub fn update(&self, record: &ChoiceRecord<F>, temperature: F) -> Result<Self> {
        self.update_batch(std::slice::from_ref(record), temperature)
    }

    pub fn update_batch(&self, records: &[ChoiceRecord<F>], temperature: F) -> Result<Self> {
        if !(temperature > F::zero()) {
            return Err(Error::invalid("temperature must be positive"));
        }
        for r in records {
            r.query.validate()?;
            ChoiceRecord::new(r.query.clone(), r.chosen_index)?;
        }
        let particles = self.particles.reweighted(|w| {
            records
                .iter()
                .map(|r| log_softmax(&r.query.utilities(w), temperature)[r.chosen_index])
                .sum()
        })?;
        Ok(Self { particles })
    }

    pub fn effective_sample_size(&self) -> F {
        self.particles.effective_sample_size()
    }

    /// Posterior mean of the weights.
    pub fn mean(&self) -> [F; 2] {
        let w1: F = self.particles.iter().map(|(w, p)| p * w.privacy()).sum();
        [w1, F::one() - w1]
    }
}

/// `E_w || w_true - w ||_2` under the posterior.
pub fn pref_error<F: Scalar>(post: &PrefPosterior<F>, w_true: &PreferenceWeights<F>) -> F {
    post.particles.iter().map(|(w, p)| p * w.distance(w_true)).sum()
}
