use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::front::FrontObservation;
use crate::scalar::Scalar;

use super::{true_weights, Arm, MetricRecord, Recommendation, SessionConfig, SessionState, SimulatedUser};

/// Everything needed to reproduce and inspect one simulated run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct RunRecord<F> {
    pub seed: u64,
    pub arm: Arm,
    pub config: SessionConfig<F>,
    pub w_true: Option<[F; 2]>,
    #[serde(rename = "final")]
    pub final_: Recommendation<F>,
    pub final_regret: Option<F>,
    pub final_pref_error: Option<F>,
    pub metric_trace: Vec<MetricRecord<F>>,
    pub obs_history: Vec<FrontObservation<F>>,
    pub choice_count: usize,
    pub oracle_calls: usize,
}

impl<F: Scalar> RunRecord<F> {
    pub fn from_state(state: &SessionState<F>, seed: u64) -> Self {
        Self {
            seed,
            arm: state.arm,
            config: state.config.clone(),
            w_true: state.truth.w_true.map(|w| w.as_array()),
            final_: state.recommendation(),
            final_regret: state.regret().ok(),
            final_pref_error: state.pref_error().ok(),
            metric_trace: state.metric_trace.clone(),
            obs_history: state.obs_history.clone(),
            choice_count: state.choice_history.len(),
            oracle_calls: state.oracle_calls,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }
}

/// A loop that stopped early, with everything recorded up to the failure.
#[derive(Debug)]
pub struct LoopFailure<F> {
    pub partial: Option<RunRecord<F>>,
    pub error: Error,
}

impl<F> From<Error> for LoopFailure<F> {
    fn from(error: Error) -> Self {
        Self { partial: None, error }
    }
}

impl<F> std::fmt::Display for LoopFailure<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.error)
    }
}

/// Run `config.loop.num_steps` steps of `arm` against a simulated user.
pub fn run_loop<F: Scalar>(config: &SessionConfig<F>, arm: Arm, seed: u64) -> Result<RunRecord<F>, LoopFailure<F>> {
    let w_true = true_weights(config, seed)?;
    let mut state = SessionState::new(config.clone(), arm, seed, Some(w_true))?;
    let mut user = SimulatedUser::new(w_true, config.user_model.temperature, seed);
    for _ in 0..config.loop_.num_steps {
        if let Err(error) = state.run_next(&mut user) {
            return Err(LoopFailure { partial: Some(RunRecord::from_state(&state, seed)), error });
        }
    }
    Ok(RunRecord::from_state(&state, seed))
}

/// Per-step aggregate of one metric across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub arm: Arm,
    pub step: usize,
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub arm: Arm,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct BatchReport<F> {
    pub arms: Vec<Arm>,
    pub seeds: Vec<u64>,
    pub records: Vec<RunRecord<F>>,
    pub failures: Vec<SeedFailure>,
    pub rows: Vec<BatchRow>,
}

/// Every arm on every seed; failed seeds are reported and excluded.
pub fn run_batch<F: Scalar>(config: &SessionConfig<F>, seeds: &[u64], arms: &[Arm]) -> Result<BatchReport<F>> {
    if seeds.is_empty() {
        return Err(Error::invalid("batch needs at least one seed"));
    }
    if arms.is_empty() {
        return Err(Error::invalid("batch needs at least one arm"));
    }
    config.validate()?;
    let jobs: Vec<(Arm, u64)> = arms.iter().flat_map(|&a| seeds.iter().map(move |&s| (a, s))).collect();
    let outcomes: Vec<_> = jobs.par_iter().map(|&(arm, seed)| (arm, seed, run_loop(config, arm, seed))).collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (arm, seed, outcome) in outcomes {
        match outcome {
            Ok(r) => records.push(r),
            Err(f) => failures.push(SeedFailure { arm, seed, error: f.error.to_string() }),
        }
    }
    let rows = aggregate(&records, arms);
    Ok(BatchReport { arms: arms.to_vec(), seeds: seeds.to_vec(), records, failures, rows })
}

fn aggregate<F: Scalar>(records: &[RunRecord<F>], arms: &[Arm]) -> Vec<BatchRow> {
    type Getter<F> = fn(&MetricRecord<F>) -> Option<F>;
    let metrics: [(&str, Getter<F>); 2] = [("pref_error", |m| m.pref_error), ("regret", |m| m.regret)];
    let mut rows = Vec::new();
    for &arm in arms {
        let mine: Vec<&RunRecord<F>> = records.iter().filter(|r| r.arm == arm).collect();
        let steps = mine.iter().map(|r| r.metric_trace.len()).max().unwrap_or(0);
        for step in 1..=steps {
            for (name, get) in metrics {
                let values: Vec<f64> =
                    mine.iter().filter_map(|r| r.metric_trace.get(step - 1).and_then(get)).map(|v| v.as_f64()).collect();
                if values.is_empty() {
                    continue;
                }
                let (mean, stderr) = mean_stderr(&values);
                rows.push(BatchRow { arm, step, metric: name.to_string(), mean, stderr, n: values.len() });
            }
        }
    }
    rows
}

/// Mean and `sample_std / sqrt(n)` (zero for a single value).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl<F: Scalar> BatchReport<F> {
    /// CSV `step,metric,mean,stderr,n`; with several arms the metric is
    /// prefixed by the arm name, e.g. `curve-kg:regret`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["step", "metric", "mean", "stderr", "n"]).expect("in-memory write");
        let prefixed = self.arms.len() > 1;
        for r in &self.rows {
            let metric = if prefixed { format!("{}:{}", r.arm, r.metric) } else { r.metric.clone() };
            w.write_record([r.step.to_string(), metric, r.mean.to_string(), r.stderr.to_string(), r.n.to_string()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn records_for(&self, arm: Arm) -> impl Iterator<Item = &RunRecord<F>> {
        self.records.iter().filter(move |r| r.arm == arm)
    }
}
