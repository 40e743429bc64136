//! Expected utility under the joint posterior and knowledge-gradient
//! selection of the next hypothetical curve (preference side) and the next
//! privacy level to evaluate (front side).
//!
//! Expected Chebyshev utility is evaluated through sorted prefix sums rather
//! than the direct double sum over particles:
//!
//! * over preference particles at fixed `(p, alpha)`: particle `r`
//!   contributes `p / w1_r` when `w2_r / w1_r <= alpha / p` and
//!   `alpha / w2_r` otherwise, so sorting by `w2 / w1` turns the sum into
//!   two prefix sums and a binary search;
//! * over front particles at fixed `(p, w)`:
//!   `E[min(p / w1, alpha / w2)] = E[min(t, alpha)] / w2` with
//!   `t = p w2 / w1`, again two prefix sums over accuracies sorted at `p`.
//!
//! KG estimates follow the simulate-and-reweight scheme: draw an outcome
//! from the predictive distribution, reweight a copy of the posterior by
//! its likelihood, and record the change in the maximal expected utility.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::front::{CurveKind, CurvePrior, FrontParticle, FrontPosterior};
use crate::particles::systematic_indices;
use crate::preference::{log_softmax, sample_categorical, CurveQuery, PrefPosterior, PreferenceWeights, TradeOffPoint};
use crate::scalar::{argmax_first, gaussian_log_pdf, log_sum_exp, unit_grid, Scalar};

/// Relative log-weight below which a front particle is ignored inside KG
/// simulations (`exp(-30) ~ 1e-13`).
const NEGLIGIBLE_LOG_WEIGHT: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionConfig {
    /// Grid used to maximize expected utility over `p`.
    pub p_grid_size: usize,
    /// Monte-Carlo simulations per candidate.
    pub num_sims: usize,
    pub num_curve_candidates: usize,
    pub num_p_candidates: usize,
    pub num_pair_candidates: usize,
    /// Queries with at most this many options are scored by exact
    /// enumeration of outcomes instead of simulation.
    pub exact_max_options: usize,
    /// Upper bound on front particles carried through privacy-side KG
    /// simulations; larger sets are thinned by systematic resampling.
    pub kg_front_particle_cap: usize,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            p_grid_size: 201,
            num_sims: 64,
            num_curve_candidates: 16,
            num_p_candidates: 33,
            num_pair_candidates: 32,
            exact_max_options: 4,
            kg_front_particle_cap: 1024,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("p_grid_size", self.p_grid_size, 2),
            ("num_sims", self.num_sims, 1),
            ("num_curve_candidates", self.num_curve_candidates, 1),
            ("num_p_candidates", self.num_p_candidates, 1),
            ("num_pair_candidates", self.num_pair_candidates, 1),
            ("kg_front_particle_cap", self.kg_front_particle_cap, 1),
        ];
        for (name, v, min) in fields {
            if v < min {
                return Err(Error::Config(format!("acquisition.{name} must be at least {min}, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KgMethod {
    MonteCarlo,
    Exact,
}

/// Knowledge-gradient estimate for one candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct KgResult<F> {
    pub candidate: usize,
    pub kg_value: F,
    /// Monte Carlo: one improvement per simulation, `kg_value` is their
    /// mean. Exact: one improvement per outcome, `kg_value` is their mean
    /// weighted by `outcome_probs`.
    pub deltas: Vec<F>,
    pub outcome_probs: Option<Vec<F>>,
    pub method: KgMethod,
}

impl<F: Scalar> KgResult<F> {
    /// Standard error of a Monte-Carlo estimate (zero for exact results).
    pub fn std_error(&self) -> F {
        if self.method == KgMethod::Exact || self.deltas.len() < 2 {
            return F::zero();
        }
        let n = F::from_usize(self.deltas.len()).expect("count representable");
        let mean = self.kg_value;
        let var = self.deltas.iter().map(|&d| (d - mean) * (d - mean)).sum::<F>() / (n - F::one());
        (var / n).sqrt()
    }
}

/// The winning candidate of a selection, with every evaluated KG.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize, F: Scalar", deserialize = "T: Deserialize<'de>, F: Scalar"))]
pub struct Selection<T, F> {
    pub choice: T,
    pub index: usize,
    pub results: Vec<KgResult<F>>,
}

impl<T, F: Scalar> Selection<T, F> {
    pub fn best_kg(&self) -> F {
        self.results.get(self.index).map(|r| r.kg_value).unwrap_or_else(F::zero)
    }
}

// ---------------------------------------------------------------------------
// Expected utility
// ---------------------------------------------------------------------------

/// Preference particles sorted by `w2 / w1`, with the prefix sums needed to
/// evaluate `E_w[U(p, alpha; w)]` in logarithmic time.
#[derive(Clone, Debug)]
pub struct PrefSummary<F> {
    ratio: Vec<F>,
    /// `prefix[k] = sum_{i<k} pi_i / w1_i`
    prefix: Vec<F>,
    /// `suffix[k] = sum_{i>=k} pi_i / w2_i`
    suffix: Vec<F>,
}

impl<F: Scalar> PrefSummary<F> {
    pub fn new(pref: &PrefPosterior<F>) -> Self {
        Self::from_weighted(pref.particles.values(), &pref.particles.weights())
    }

    fn from_weighted(values: &[PreferenceWeights<F>], weights: &[F]) -> Self {
        let mut items: Vec<(F, F, F)> = values
            .iter()
            .zip(weights)
            .filter(|(_, &p)| p > F::zero())
            .map(|(w, &p)| (w.accuracy() / w.privacy(), p / w.privacy(), p / w.accuracy()))
            .collect();
        items.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite weight ratios"));
        let n = items.len();
        let mut prefix = vec![F::zero(); n + 1];
        let mut suffix = vec![F::zero(); n + 1];
        for (i, it) in items.iter().enumerate() {
            prefix[i + 1] = prefix[i] + it.1;
        }
        for i in (0..n).rev() {
            suffix[i] = suffix[i + 1] + items[i].2;
        }
        Self { ratio: items.into_iter().map(|it| it.0).collect(), prefix, suffix }
    }

    /// `E_w[min(p / w1, alpha / w2)]`.
    #[inline]
    pub fn expected(&self, p: F, alpha: F) -> F {
        let k = if p > F::zero() {
            let threshold = alpha / p;
            self.ratio.partition_point(|&r| r <= threshold)
        } else {
            self.ratio.len()
        };
        p * self.prefix[k] + alpha * self.suffix[k]
    }
}

/// `E_{beta, w}[U((p, clamp(h_beta(p))); w)]` under both posteriors.
pub fn expected_utility<F: Scalar>(p: F, front: &FrontPosterior<F>, pref: &PrefPosterior<F>) -> F {
    let summary = PrefSummary::new(pref);
    expected_utility_with(p, front, &summary)
}

fn expected_utility_with<F: Scalar>(p: F, front: &FrontPosterior<F>, summary: &PrefSummary<F>) -> F {
    front
        .particles
        .iter()
        .filter(|(_, w)| *w > F::zero())
        .map(|(pt, w)| w * summary.expected(p, pt.params.eval_clamped(p)))
        .sum()
}

/// Maximizer of expected utility over a uniform grid of `p_grid_size`
/// points, ties going to the smaller `p`. Returns `(p_star, u_star)`.
pub fn max_expected_utility<F: Scalar>(
    front: &FrontPosterior<F>,
    pref: &PrefPosterior<F>,
    cfg: &AcquisitionConfig,
) -> (F, F) {
    let grid = unit_grid::<F>(cfg.p_grid_size.max(2));
    let values = expected_utility_grid(&grid, front, pref);
    let i = argmax_first(&values).unwrap_or(0);
    (grid[i], values[i])
}

/// Expected utility at every grid point.
pub fn expected_utility_grid<F: Scalar>(grid: &[F], front: &FrontPosterior<F>, pref: &PrefPosterior<F>) -> Vec<F> {
    let summary = PrefSummary::new(pref);
    grid.iter().map(|&p| expected_utility_with(p, front, &summary)).collect()
}

/// `max_i sum_j weights_j * table[i * n + j]` with the first maximal row.
fn max_row_dot<F: Scalar>(table: &[F], n: usize, weights: &[F]) -> (usize, F) {
    let mut best = (0, F::neg_infinity());
    for (i, row) in table.chunks_exact(n).enumerate() {
        let v = dot(row, weights);
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Dot product with independent partial sums so the loop vectorizes.
#[inline]
fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    const LANES: usize = 8;
    let mut acc = [F::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let tail: F = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..LANES {
            acc[k] = acc[k] + x[k] * y[k];
        }
    }
    acc.iter().copied().sum::<F>() + tail
}

fn normalize_log_weights<F: Scalar>(log_w: &[F], out: &mut Vec<F>) {
    let z = log_sum_exp(log_w);
    out.clear();
    out.extend(log_w.iter().map(|&l| (l - z).exp()));
}

fn derive_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

// ---------------------------------------------------------------------------
// Preference-side KG
// ---------------------------------------------------------------------------

/// Everything needed to score preference queries against a fixed front
/// posterior: `table[i * n + r]` is the expected utility at grid point `i`
/// for preference particle `r`, averaged over the front.
#[derive(Clone, Debug)]
pub struct PrefKgContext<F> {
    pub grid: Vec<F>,
    values: Vec<PreferenceWeights<F>>,
    log_w: Vec<F>,
    weights: Vec<F>,
    table: Vec<F>,
    pub u_star: F,
    pub p_star: F,
}

impl<F: Scalar> PrefKgContext<F> {
    pub fn new(front: &FrontPosterior<F>, pref: &PrefPosterior<F>, cfg: &AcquisitionConfig) -> Self {
        let grid = unit_grid::<F>(cfg.p_grid_size.max(2));
        let values = pref.particles.values().to_vec();
        let n = values.len();
        let front_w = front.particles.weights();
        let live: Vec<(&FrontParticle<F>, F)> = front
            .particles
            .values()
            .iter()
            .zip(front_w)
            .filter(|(_, w)| *w > F::zero())
            .collect();

        // Preference particles in increasing w2 / w1, so thresholds
        // t = p w2 / w1 increase along this order at every p.
        let mut by_ratio: Vec<usize> = (0..n).collect();
        by_ratio.sort_by(|&a, &b| {
            let ra = values[a].accuracy() / values[a].privacy();
            let rb = values[b].accuracy() / values[b].privacy();
            ra.partial_cmp(&rb).expect("finite weight ratios")
        });

        let mut table = vec![F::zero(); grid.len() * n];
        let mut alpha = vec![F::zero(); live.len()];
        // Sorted order of accuracies, carried between neighbouring grid
        // points where it changes little.
        let mut order: Vec<usize> = (0..live.len()).collect();
        let mut cum_w = vec![F::zero(); live.len() + 1];
        let mut cum_wa = vec![F::zero(); live.len() + 1];
        for (i, &p) in grid.iter().enumerate() {
            for (a, (pt, _)) in alpha.iter_mut().zip(&live) {
                *a = pt.params.eval_clamped(p);
            }
            insertion_sort_by_key(&mut order, &alpha);
            for (j, &s) in order.iter().enumerate() {
                let w = live[s].1;
                cum_w[j + 1] = cum_w[j] + w;
                cum_wa[j + 1] = cum_wa[j] + w * alpha[s];
            }
            let total = cum_w[order.len()];
            let row = &mut table[i * n..(i + 1) * n];
            let mut j = 0;
            for &r in &by_ratio {
                // E[min(t, alpha)] / w2 with t = p w2 / w1.
                let w = &values[r];
                let t = p * w.accuracy() / w.privacy();
                while j < order.len() && alpha[order[j]] < t {
                    j += 1;
                }
                row[r] = (cum_wa[j] + t * (total - cum_w[j])) / w.accuracy();
            }
        }
        let log_w = pref.particles.log_weights().to_vec();
        let weights = pref.particles.weights();
        let (i, u_star) = max_row_dot(&table, n, &weights);
        Self { p_star: grid[i], grid, values, log_w, weights, table, u_star }
    }

    fn u_star_for(&self, weights: &[F]) -> F {
        max_row_dot(&self.table, self.values.len(), weights).1
    }

    /// `log_lik[j][r]`: log-probability of option `j` for particle `r`.
    fn choice_log_lik(&self, query: &CurveQuery<F>, temperature: F) -> Vec<Vec<F>> {
        let per_particle: Vec<Vec<F>> = self
            .values
            .iter()
            .map(|w| log_softmax(&query.utilities(w), temperature))
            .collect();
        (0..query.len())
            .map(|j| per_particle.iter().map(|lp| lp[j]).collect())
            .collect()
    }

    fn delta_for_outcome(&self, ll_j: &[F], scratch_log: &mut Vec<F>, scratch_w: &mut Vec<F>) -> F {
        scratch_log.clear();
        scratch_log.extend(self.log_w.iter().zip(ll_j).map(|(&a, &b)| a + b));
        normalize_log_weights(scratch_log, scratch_w);
        self.u_star_for(scratch_w) - self.u_star
    }

    /// KG of `query`, simulated with `num_sims` draws or enumerated exactly
    /// when the query has at most `exact_max_options` options.
    pub fn kg<R: Rng + ?Sized>(
        &self,
        id: usize,
        query: &CurveQuery<F>,
        temperature: F,
        cfg: &AcquisitionConfig,
        rng: &mut R,
    ) -> Result<KgResult<F>> {
        if query.len() <= cfg.exact_max_options {
            self.kg_exact(id, query, temperature)
        } else {
            self.kg_simulated(id, query, temperature, cfg.num_sims, rng)
        }
    }

    pub fn kg_simulated<R: Rng + ?Sized>(
        &self,
        id: usize,
        query: &CurveQuery<F>,
        temperature: F,
        num_sims: usize,
        rng: &mut R,
    ) -> Result<KgResult<F>> {
        check_query(query, temperature)?;
        let ll = self.choice_log_lik(query, temperature);
        let mut cache: Vec<Option<F>> = vec![None; query.len()];
        let mut deltas = Vec::with_capacity(num_sims);
        let (mut sl, mut sw) = (Vec::new(), Vec::new());
        let mut lp = vec![F::zero(); query.len()];
        for _ in 0..num_sims {
            let r = sample_weighted(&self.weights, rng);
            for (j, l) in lp.iter_mut().enumerate() {
                *l = ll[j][r];
            }
            let j = sample_categorical(&lp, rng);
            let d = match cache[j] {
                Some(d) => d,
                None => {
                    let d = self.delta_for_outcome(&ll[j], &mut sl, &mut sw);
                    cache[j] = Some(d);
                    d
                }
            };
            deltas.push(d);
        }
        let n = F::from_usize(deltas.len().max(1)).expect("count representable");
        let kg_value = deltas.iter().copied().sum::<F>() / n;
        Ok(KgResult { candidate: id, kg_value, deltas, outcome_probs: None, method: KgMethod::MonteCarlo })
    }

    pub fn kg_exact(&self, id: usize, query: &CurveQuery<F>, temperature: F) -> Result<KgResult<F>> {
        check_query(query, temperature)?;
        let ll = self.choice_log_lik(query, temperature);
        let (mut sl, mut sw) = (Vec::new(), Vec::new());
        let mut probs = Vec::with_capacity(query.len());
        let mut deltas = Vec::with_capacity(query.len());
        for ll_j in &ll {
            let pj: F = self.weights.iter().zip(ll_j).map(|(&w, &l)| w * l.exp()).sum();
            let d = if pj > F::zero() {
                self.delta_for_outcome(ll_j, &mut sl, &mut sw)
            } else {
                F::zero()
            };
            probs.push(pj);
            deltas.push(d);
        }
        let kg_value = probs.iter().zip(&deltas).map(|(&p, &d)| p * d).sum();
        Ok(KgResult { candidate: id, kg_value, deltas, outcome_probs: Some(probs), method: KgMethod::Exact })
    }
}

/// Stable insertion sort of indices by `key`; linear on nearly sorted input.
fn insertion_sort_by_key<F: Scalar>(order: &mut [usize], key: &[F]) {
    for i in 1..order.len() {
        let cur = order[i];
        let k = key[cur];
        let mut j = i;
        while j > 0 && key[order[j - 1]] > k {
            order[j] = order[j - 1];
            j -= 1;
        }
        order[j] = cur;
    }
}

fn check_query<F: Scalar>(query: &CurveQuery<F>, temperature: F) -> Result<()> {
    if !(temperature > F::zero()) {
        return Err(Error::invalid("temperature must be positive"));
    }
    query.validate()
}

fn sample_weighted<F: Scalar, R: Rng + ?Sized>(weights: &[F], rng: &mut R) -> usize {
    let u = F::sample_open01(rng);
    let mut acc = F::zero();
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > F::zero() {
            last = i;
        }
        acc = acc + w;
        if u < acc {
            return i;
        }
    }
    last
}

/// KG of presenting `candidate` to the decision-maker.
pub fn kg_curve<F: Scalar, R: Rng + ?Sized>(
    candidate: &CurveQuery<F>,
    front: &FrontPosterior<F>,
    pref: &PrefPosterior<F>,
    temperature: F,
    cfg: &AcquisitionConfig,
    rng: &mut R,
) -> Result<KgResult<F>> {
    PrefKgContext::new(front, pref, cfg).kg(0, candidate, temperature, cfg, rng)
}

/// KG of a pairwise comparison between `a` and `b`.
pub fn kg_pair<F: Scalar, R: Rng + ?Sized>(
    a: TradeOffPoint<F>,
    b: TradeOffPoint<F>,
    front: &FrontPosterior<F>,
    pref: &PrefPosterior<F>,
    temperature: F,
    cfg: &AcquisitionConfig,
    rng: &mut R,
) -> Result<KgResult<F>> {
    kg_curve(&CurveQuery::pair(a, b), front, pref, temperature, cfg, rng)
}

/// Candidate curves: the first half resampled from the front posterior,
/// the rest fresh prior draws.
pub fn curve_candidates<F: Scalar, R: Rng + ?Sized>(
    front: &FrontPosterior<F>,
    prior: &CurvePrior<F>,
    kind: CurveKind,
    count: usize,
    q: usize,
    rng: &mut R,
) -> Result<Vec<CurveQuery<F>>> {
    let from_posterior = count.div_ceil(2);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let params = if i < from_posterior {
            front.particles.values()[front.particles.sample_index(rng)].params
        } else {
            prior.sample(kind, rng).0
        };
        out.push(CurveQuery::from_curve(params, q)?);
    }
    Ok(out)
}

/// Score every candidate query and return the one with the largest KG
/// (first on ties).
pub fn select_query<F: Scalar, R: Rng + ?Sized>(
    ctx: &PrefKgContext<F>,
    candidates: Vec<CurveQuery<F>>,
    temperature: F,
    cfg: &AcquisitionConfig,
    rng: &mut R,
) -> Result<Selection<CurveQuery<F>, F>> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidate queries"));
    }
    let base = rng.next_u64();
    let results: Vec<KgResult<F>> = candidates
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let mut r = derive_rng(base, i as u64);
            ctx.kg(i, q, temperature, cfg, &mut r)
        })
        .collect::<Result<_>>()?;
    let values: Vec<F> = results.iter().map(|r| r.kg_value).collect();
    let index = argmax_first(&values).unwrap_or(0);
    let choice = candidates.into_iter().nth(index).expect("index in range");
    Ok(Selection { choice, index, results })
}

/// Next hypothetical curve to present, by KG over a candidate mixture.
#[allow(clippy::too_many_arguments)]
pub fn select_next_curve<F: Scalar, R: Rng + ?Sized>(
    front: &FrontPosterior<F>,
    pref: &PrefPosterior<F>,
    prior: &CurvePrior<F>,
    kind: CurveKind,
    q: usize,
    temperature: F,
    cfg: &AcquisitionConfig,
    rng: &mut R,
) -> Result<Selection<CurveQuery<F>, F>> {
    let candidates = curve_candidates(front, prior, kind, cfg.num_curve_candidates, q, rng)?;
    let ctx = PrefKgContext::new(front, pref, cfg);
    select_query(&ctx, candidates, temperature, cfg, rng)
}

/// The posterior-mean front discretized to `q` points, clamped.
pub fn mean_front_points<F: Scalar>(front: &FrontPosterior<F>, q: usize) -> Vec<TradeOffPoint<F>> {
    unit_grid::<F>(q)
        .into_iter()
        .map(|p| TradeOffPoint { p, alpha: front.mean_at(p).clamp_to(F::zero(), F::one()) })
        .collect()
}

/// Two distinct points drawn uniformly from `points`.
fn random_pair_from<F: Scalar, R: Rng + ?Sized>(points: &[TradeOffPoint<F>], rng: &mut R) -> Result<CurveQuery<F>> {
    if points.len() < 2 {
        return Err(Error::invalid("need at least two points to form a pair"));
    }
    let i = rng.gen_range(0..points.len());
    let mut j = rng.gen_range(0..points.len() - 1);
    if j >= i {
        j += 1;
    }
    Ok(CurveQuery::pair(points[i], points[j]))
}

/// Next pairwise comparison, by exact KG over random pairs from the
/// posterior-mean front.
pub fn select_next_pair<F: Scalar, R: Rng + ?Sized>(
    front: &FrontPosterior<F>,
    pref: &PrefPosterior<F>,
    q: usize,
    temperature: F,
    cfg: &AcquisitionConfig,
    rng: &mut R,
) -> Result<Selection<CurveQuery<F>, F>> {
    let points = mean_front_points(front, q);
    let candidates = (0..cfg.num_pair_candidates)
        .map(|_| random_pair_from(&points, rng))
        .collect::<Result<Vec<_>>>()?;
    let ctx = PrefKgContext::new(front, pref, cfg);
    select_query(&ctx, candidates, temperature, cfg, rng)
}

/// A hypothetical curve drawn from the prior.
pub fn random_curve<F: Scalar, R: Rng + ?Sized>(
    prior: &CurvePrior<F>,
    kind: CurveKind,
    q: usize,
    rng: &mut R,
) -> Result<CurveQuery<F>> {
    CurveQuery::from_curve(prior.sample(kind, rng).0, q)
}

/// A uniformly random pair from the posterior-mean front.
pub fn random_pair<F: Scalar, R: Rng + ?Sized>(front: &FrontPosterior<F>, q: usize, rng: &mut R) -> Result<CurveQuery<F>> {
    random_pair_from(&mean_front_points(front, q), rng)
}

// ---------------------------------------------------------------------------
// Privacy-side KG
// ---------------------------------------------------------------------------

/// Front particles (possibly thinned) with a table of expected utility per
/// grid point and particle, averaged over the fixed preference posterior.
#[derive(Clone, Debug)]
pub struct PrivacyKgContext<F> {
    pub grid: Vec<F>,
    particles: Vec<FrontParticle<F>>,
    log_w: Vec<F>,
    weights: Vec<F>,
    table: Vec<F>,
    pub u_star: F,
}

impl<F: Scalar> PrivacyKgContext<F> {
    pub fn new<R: Rng + ?Sized>(
        front: &FrontPosterior<F>,
        pref: &PrefPosterior<F>,
        cfg: &AcquisitionConfig,
        rng: &mut R,
    ) -> Self {
        let grid = unit_grid::<F>(cfg.p_grid_size.max(2));
        let (particles, weights) = active_front(front, cfg.kg_front_particle_cap, rng);
        let n = particles.len();
        let summary = PrefSummary::new(pref);
        let mut table = vec![F::zero(); grid.len() * n];
        for (i, &p) in grid.iter().enumerate() {
            for (s, pt) in particles.iter().enumerate() {
                table[i * n + s] = summary.expected(p, pt.params.eval_clamped(p));
            }
        }
        let log_w = weights.iter().map(|w| w.ln()).collect();
        let u_star = max_row_dot(&table, n, &weights).1;
        Self { grid, particles, log_w, weights, table, u_star }
    }

    /// Number of front particles carried through simulations.
    pub fn active_particles(&self) -> usize {
        self.particles.len()
    }

    pub fn kg<R: Rng + ?Sized>(&self, id: usize, p: F, num_sims: usize, rng: &mut R) -> Result<KgResult<F>> {
        if !(p >= F::zero() && p <= F::one()) {
            return Err(Error::OutOfRange { value: p.as_f64(), low: 0.0, high: 1.0 });
        }
        let n = self.particles.len();
        let means: Vec<F> = self.particles.iter().map(|pt| pt.params.eval(p)).collect();
        let mut log_new = vec![F::zero(); n];
        let mut w_new = Vec::with_capacity(n);
        let mut deltas = Vec::with_capacity(num_sims);
        for _ in 0..num_sims {
            let s = sample_weighted(&self.weights, rng);
            let alpha = means[s] + self.particles[s].sigma.0 * F::sample_standard_normal(rng);
            for (k, lw) in log_new.iter_mut().enumerate() {
                *lw = self.log_w[k] + gaussian_log_pdf(alpha, means[k], self.particles[k].sigma.0);
            }
            normalize_log_weights(&log_new, &mut w_new);
            deltas.push(max_row_dot(&self.table, n, &w_new).1 - self.u_star);
        }
        let count = F::from_usize(deltas.len().max(1)).expect("count representable");
        let kg_value = deltas.iter().copied().sum::<F>() / count;
        Ok(KgResult { candidate: id, kg_value, deltas, outcome_probs: None, method: KgMethod::MonteCarlo })
    }
}

/// Front particles with non-negligible weight; thinned to `cap` by
/// systematic resampling (aggregating duplicates) when there are more.
fn active_front<F: Scalar, R: Rng + ?Sized>(
    front: &FrontPosterior<F>,
    cap: usize,
    rng: &mut R,
) -> (Vec<FrontParticle<F>>, Vec<F>) {
    let lw = front.particles.log_weights();
    let max = lw.iter().copied().fold(F::neg_infinity(), F::max);
    let cut = max - F::lit(NEGLIGIBLE_LOG_WEIGHT);
    let keep: Vec<usize> = (0..lw.len()).filter(|&i| lw[i] >= cut).collect();
    let kept_w: Vec<F> = keep.iter().map(|&i| lw[i].exp()).collect();
    let total: F = kept_w.iter().copied().sum();
    let kept_w: Vec<F> = kept_w.into_iter().map(|w| w / total).collect();
    let values = front.particles.values();
    if keep.len() <= cap {
        return (keep.iter().map(|&i| values[i]).collect(), kept_w);
    }
    let picks = systematic_indices(&kept_w, cap, rng);
    let mut counts = vec![0usize; keep.len()];
    for j in picks {
        counts[j] += 1;
    }
    let capf = F::from_usize(cap).expect("cap representable");
    let mut particles = Vec::new();
    let mut weights = Vec::new();
    for (j, &c) in counts.iter().enumerate() {
        if c > 0 {
            particles.push(values[keep[j]]);
            weights.push(F::from_usize(c).expect("count representable") / capf);
        }
    }
    (particles, weights)
}

/// KG of evaluating the oracle at normalized privacy `p`.
pub fn kg_privacy<F: Scalar, R: Rng + ?Sized>(
    p: F,
    front: &FrontPosterior<F>,
    pref: &PrefPosterior<F>,
    cfg: &AcquisitionConfig,
    rng: &mut R,
) -> Result<KgResult<F>> {
    let ctx = PrivacyKgContext::new(front, pref, cfg, rng);
    ctx.kg(0, p, cfg.num_sims, rng)
}

/// Next privacy level to evaluate: KG argmax over a uniform candidate grid
/// (smaller `p` on ties).
pub fn select_next_privacy<F: Scalar, R: Rng + ?Sized>(
    front: &FrontPosterior<F>,
    pref: &PrefPosterior<F>,
    cfg: &AcquisitionConfig,
    rng: &mut R,
) -> Result<Selection<F, F>> {
    let ctx = PrivacyKgContext::new(front, pref, cfg, rng);
    let candidates = unit_grid::<F>(cfg.num_p_candidates);
    let base = rng.next_u64();
    let results: Vec<KgResult<F>> = candidates
        .par_iter()
        .enumerate()
        .map(|(i, &p)| {
            let mut r = derive_rng(base, i as u64);
            ctx.kg(i, p, cfg.num_sims, &mut r)
        })
        .collect::<Result<_>>()?;
    let values: Vec<F> = results.iter().map(|r| r.kg_value).collect();
    let index = argmax_first(&values).unwrap_or(0);
    Ok(Selection { choice: candidates[index], index, results })
}

/// A uniformly random privacy level.
pub fn random_privacy<F: Scalar, R: Rng + ?Sized>(rng: &mut R) -> F {
    F::sample_open01(rng)
}
