//! Normalization, oracles, the interleaved evaluate/interact loop, metrics
//! and batch experiments.

mod batch;
mod config;
mod normalization;
mod oracle;

pub use batch::{run_batch, run_loop, BatchReport, BatchRow, LoopFailure, RunRecord, SeedFailure};
pub use config::{Arm, Interleave, LoopConfig, NormalizationConfig, PriorsConfig, SessionConfig};
pub use normalization::NormalizationSpec;
pub use oracle::{
    mc_logistic_accuracy, mc_logistic_accuracy_with, oracle_check, oracle_eval, read_tradeoff_csv, FrontTable, Oracle,
    OracleCheckRow, OracleKind, OracleSpec,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    expected_utility_grid, random_curve, random_pair, random_privacy, select_next_curve, select_next_pair,
    select_next_privacy, Selection,
};
use crate::error::{Error, Result};
use crate::front::{FrontObservation, FrontPosterior, MeanCurve, NoiseScale};
use crate::preference::{
    chebyshev, pref_error, sample_weight_prior, simulate_choice, ChoiceRecord, CurveQuery, PrefPosterior,
    PreferenceWeights,
};
use crate::scalar::{argmax_first, unit_grid, Scalar};

/// Smallest noise scale used for a known-front point mass.
const KNOWN_FRONT_MIN_SIGMA: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Interact,
    Evaluate,
}

/// Metrics recorded after every completed step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct MetricRecord<F> {
    /// Completed steps including this one.
    pub step: usize,
    pub kind: StepKind,
    /// Absent without simulation ground truth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pref_error: Option<F>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regret: Option<F>,
    pub p_star: F,
    pub u_star: F,
    /// Best KG among the evaluated candidates, when KG was used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kg: Option<F>,
}

/// The current recommendation, normalized and raw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Recommendation<F> {
    pub p_star: F,
    pub u_star: F,
    /// Posterior-mean front at `p_star`, normalized.
    pub alpha_star: F,
    pub eps_star: F,
    pub accuracy_star: F,
}

/// Simulation ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Truth<F> {
    pub w_true: Option<PreferenceWeights<F>>,
    /// Noise-free normalized front on the utility grid.
    pub front_grid: Option<Vec<F>>,
}

/// Source of decision-maker choices. An error suspends the session.
pub trait ChoiceProvider<F> {
    fn choose(&mut self, query: &CurveQuery<F>) -> std::result::Result<usize, String>;
}

/// Boltzmann-rational simulated decision-maker with its own random stream.
#[derive(Clone, Debug)]
pub struct SimulatedUser<F> {
    pub w: PreferenceWeights<F>,
    pub temperature: F,
    rng: ChaCha8Rng,
}

impl<F: Scalar> SimulatedUser<F> {
    pub fn new(w: PreferenceWeights<F>, temperature: F, seed: u64) -> Self {
        Self { w, temperature, rng: seeded_stream(seed, 1) }
    }
}

impl<F: Scalar> ChoiceProvider<F> for SimulatedUser<F> {
    fn choose(&mut self, query: &CurveQuery<F>) -> std::result::Result<usize, String> {
        simulate_choice(query, &self.w, self.temperature, &mut self.rng).map_err(|e| e.to_string())
    }
}

pub(crate) fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// True weights for a seed: fixed by the config or drawn from the prior on
/// a stream shared by all arms.
pub fn true_weights<F: Scalar>(config: &SessionConfig<F>, seed: u64) -> Result<PreferenceWeights<F>> {
    match config.loop_.w_true {
        Some(w1) => PreferenceWeights::new(w1),
        None => Ok(sample_weight_prior(config.user_model.dirichlet, &mut seeded_stream(seed, 2))),
    }
}

/// `U(y*_true; w) - U((p_i, h(p_i)); w)` on a uniform grid of true
/// normalized accuracies.
pub fn compute_regret<F: Scalar>(true_alpha: &[F], index: usize, w: &PreferenceWeights<F>) -> Result<F> {
    if index >= true_alpha.len() || true_alpha.len() < 2 {
        return Err(Error::invalid("regret index outside the grid"));
    }
    let grid = unit_grid::<F>(true_alpha.len());
    let u = |i: usize| chebyshev(grid[i], true_alpha[i].clamp_to(F::zero(), F::one()), w);
    let best = (0..grid.len()).map(u).fold(F::neg_infinity(), F::max);
    Ok(best - u(index))
}

/// One interactive session: posteriors, histories and metrics.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct SessionState<F> {
    pub config: SessionConfig<F>,
    pub arm: Arm,
    pub norm: NormalizationSpec<F>,
    pub oracle: Oracle<F>,
    pub front_post: FrontPosterior<F>,
    pub pref_post: PrefPosterior<F>,
    pub obs_history: Vec<FrontObservation<F>>,
    pub choice_history: Vec<ChoiceRecord<F>>,
    pub metric_trace: Vec<MetricRecord<F>>,
    pub step: usize,
    pub oracle_calls: usize,
    pub truth: Truth<F>,
    /// Query shown to the decision-maker and not yet answered.
    pub pending_query: Option<CurveQuery<F>>,
    pending_kg: Option<F>,
    rng: ChaCha8Rng,
}

impl<F: Scalar> SessionState<F> {
    /// Build a session for `arm`. `w_true` enables simulation metrics.
    pub fn new(config: SessionConfig<F>, arm: Arm, seed: u64, w_true: Option<PreferenceWeights<F>>) -> Result<Self> {
        config.validate()?;
        let oracle = Oracle::new(config.oracle.clone())?;
        let norm = config.resolve_normalization(&oracle)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let front_post = if config.loop_.known_front {
            let curve = oracle.true_curve(&norm).ok_or_else(|| {
                Error::Config("loop.known_front needs a closed_form_logistic or synthetic oracle".into())
            })?;
            let sigma = config.oracle.noise_sigma.max(F::lit(KNOWN_FRONT_MIN_SIGMA));
            FrontPosterior::point_mass(curve, NoiseScale(sigma))
        } else {
            FrontPosterior::init(config.priors.kind, config.priors.active(), config.priors.front_particles, &mut rng)?
        };
        let pref_post = if config.loop_.known_weights {
            let w = w_true.ok_or_else(|| Error::Config("loop.known_weights needs true weights".into()))?;
            PrefPosterior::point_mass(w)
        } else {
            PrefPosterior::init(config.user_model.particles, config.user_model.dirichlet, &mut rng)?
        };
        let front_grid = unit_grid::<F>(config.acquisition.p_grid_size)
            .into_iter()
            .map(|p| oracle.true_front(p, &norm))
            .collect::<Option<Vec<F>>>();

        Ok(Self {
            config,
            arm,
            norm,
            oracle,
            front_post,
            pref_post,
            obs_history: Vec::new(),
            choice_history: Vec::new(),
            metric_trace: Vec::new(),
            step: 0,
            oracle_calls: 0,
            truth: Truth { w_true, front_grid },
            pending_query: None,
            pending_kg: None,
            rng,
        })
    }

    /// What the alternation schedule asks for next.
    pub fn next_kind(&self) -> StepKind {
        if self.config.loop_.known_front || self.pending_query.is_some() || self.step % 2 == 1 {
            StepKind::Interact
        } else {
            StepKind::Evaluate
        }
    }

    fn learner_temperature(&self) -> F {
        self.config.user_model.learner_t()
    }

    fn select_query(&mut self) -> Result<(CurveQuery<F>, Option<F>)> {
        let cfg = self.config.acquisition;
        let q = self.config.user_model.q;
        let t = self.learner_temperature();
        let prior = self.config.priors.active().clone();
        let kind = self.config.priors.kind;
        Ok(match self.arm {
            Arm::CurveKg => {
                let s = select_next_curve(&self.front_post, &self.pref_post, &prior, kind, q, t, &cfg, &mut self.rng)?;
                (s.choice.clone(), Some(s.best_kg()))
            }
            Arm::PairKg => {
                let s = select_next_pair(&self.front_post, &self.pref_post, q, t, &cfg, &mut self.rng)?;
                (s.choice.clone(), Some(s.best_kg()))
            }
            Arm::RandomCurve => (random_curve(&prior, kind, q, &mut self.rng)?, None),
            Arm::RandomPairs => (random_pair(&self.front_post, q, &mut self.rng)?, None),
        })
    }

    fn select_privacy(&mut self) -> Result<Selection<F, F>> {
        if self.arm.kg_privacy() {
            select_next_privacy(&self.front_post, &self.pref_post, &self.config.acquisition, &mut self.rng)
        } else {
            let p = random_privacy(&mut self.rng);
            Ok(Selection { choice: p, index: 0, results: Vec::new() })
        }
    }

    /// The query awaiting a choice, selecting one if none is pending.
    pub fn prepare_query(&mut self) -> Result<&CurveQuery<F>> {
        if self.pending_query.is_none() {
            let (query, kg) = self.select_query()?;
            self.pending_query = Some(query);
            self.pending_kg = kg;
        }
        Ok(self.pending_query.as_ref().expect("query just prepared"))
    }

    /// Condition the preference posterior on a choice from the pending query.
    pub fn submit_choice(&mut self, chosen_index: usize) -> Result<()> {
        let query = self.pending_query.clone().ok_or_else(|| Error::invalid("no query is awaiting a choice"))?;
        let record = ChoiceRecord::new(query, chosen_index)?;
        self.pref_post = self.pref_post.update(&record, self.learner_temperature())?;
        self.choice_history.push(record);
        self.pending_query = None;
        let kg = self.pending_kg.take();
        self.finish_step(StepKind::Interact, kg);
        Ok(())
    }

    /// Evaluate the oracle at the next selected privacy level.
    pub fn evaluate(&mut self) -> Result<&FrontObservation<F>> {
        let saved = self.rng.clone();
        let result = self.select_privacy().and_then(|s| {
            let kg = (!s.results.is_empty()).then(|| s.best_kg());
            self.evaluate_at(s.choice, kg)
        });
        if let Err(e) = result {
            self.rng = saved;
            return Err(e);
        }
        Ok(self.obs_history.last().expect("observation recorded"))
    }

    fn evaluate_at(&mut self, p: F, kg: Option<F>) -> Result<()> {
        let obs = oracle_eval(&self.oracle, &self.norm, p, &mut self.rng)?;
        self.oracle_calls += 1;
        let mut post = self.front_post.update(&obs)?;
        let mut history = self.obs_history.clone();
        history.push(obs);
        if !self.config.loop_.known_front {
            post.rejuvenate(&self.config.priors.resample, self.config.priors.active(), &history, &mut self.rng)?;
        }
        self.front_post = post;
        self.obs_history = history;
        self.finish_step(StepKind::Evaluate, kg);
        Ok(())
    }

    /// Run one step of the given kind. A failing choice provider leaves the
    /// state untouched and reports a suspended session.
    pub fn run_step(&mut self, kind: StepKind, user: &mut dyn ChoiceProvider<F>) -> Result<()> {
        match kind {
            StepKind::Evaluate => self.evaluate().map(|_| ()),
            StepKind::Interact => {
                let saved = (self.rng.clone(), self.pending_query.clone(), self.pending_kg);
                let query = self.prepare_query()?.clone();
                match user.choose(&query) {
                    Ok(i) => self.submit_choice(i),
                    Err(msg) => {
                        (self.rng, self.pending_query, self.pending_kg) = saved;
                        Err(Error::Suspended(msg))
                    }
                }
            }
        }
    }

    /// Next step according to the configured interleaving.
    pub fn run_next(&mut self, user: &mut dyn ChoiceProvider<F>) -> Result<StepKind> {
        let adaptive = self.config.loop_.interleave == Interleave::Adaptive
            && self.arm.kg_privacy()
            && !self.config.loop_.known_front
            && self.pending_query.is_none();
        if !adaptive {
            let kind = self.next_kind();
            self.run_step(kind, user)?;
            return Ok(kind);
        }
        let saved = self.rng.clone();
        let planned = self.select_privacy().and_then(|p| Ok((p, self.select_query()?)));
        let (privacy, (query, query_kg)) = match planned {
            Ok(v) => v,
            Err(e) => {
                self.rng = saved;
                return Err(e);
            }
        };
        if privacy.best_kg() > query_kg.unwrap_or_else(F::zero) {
            self.evaluate_at(privacy.choice, Some(privacy.best_kg()))?;
            Ok(StepKind::Evaluate)
        } else {
            match user.choose(&query) {
                Ok(i) => {
                    self.pending_query = Some(query);
                    self.pending_kg = query_kg;
                    self.submit_choice(i)?;
                    Ok(StepKind::Interact)
                }
                Err(msg) => {
                    self.rng = saved;
                    Err(Error::Suspended(msg))
                }
            }
        }
    }

    fn finish_step(&mut self, kind: StepKind, kg: Option<F>) {
        self.step += 1;
        let (index, p_star, u_star) = self.optimum();
        let pref_error = self.truth.w_true.as_ref().map(|w| pref_error(&self.pref_post, w));
        let regret = match (&self.truth.front_grid, &self.truth.w_true) {
            (Some(grid), Some(w)) => compute_regret(grid, index, w).ok(),
            _ => None,
        };
        self.metric_trace.push(MetricRecord { step: self.step, kind, pref_error, regret, p_star, u_star, kg });
    }

    /// Grid index, `p_star` and `u_star` of the expected-utility maximizer.
    pub fn optimum(&self) -> (usize, F, F) {
        let grid = unit_grid::<F>(self.config.acquisition.p_grid_size);
        let eu = expected_utility_grid(&grid, &self.front_post, &self.pref_post);
        let i = argmax_first(&eu).unwrap_or(0);
        (i, grid[i], eu[i])
    }

    pub fn recommendation(&self) -> Recommendation<F> {
        let (_, p_star, u_star) = self.optimum();
        let alpha_star = self.front_post.mean_at(p_star);
        Recommendation {
            p_star,
            u_star,
            alpha_star,
            eps_star: self.norm.eps_of(p_star),
            accuracy_star: self.norm.denormalize_accuracy(alpha_star),
        }
    }

    /// Regret of the current recommendation under the simulation truth.
    pub fn regret(&self) -> Result<F> {
        match (&self.truth.front_grid, &self.truth.w_true) {
            (Some(grid), Some(w)) => compute_regret(grid, self.optimum().0, w),
            _ => Err(Error::Unsupported("regret")),
        }
    }

    pub fn pref_error(&self) -> Result<F> {
        self.truth.w_true.as_ref().map(|w| pref_error(&self.pref_post, w)).ok_or(Error::Unsupported("preference error"))
    }

    pub fn mean_curve(&self) -> Result<MeanCurve<F>> {
        self.front_post.mean_curve(&unit_grid::<F>(self.config.acquisition.p_grid_size))
    }
}
