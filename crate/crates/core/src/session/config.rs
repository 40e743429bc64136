use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::acquisition::AcquisitionConfig;
use crate::error::{Error, Result};
use crate::front::{CurveKind, CurvePrior, ResamplePolicy, DEFAULT_FRONT_PARTICLES};
use crate::preference::UserModelConfig;
use crate::scalar::Scalar;

use super::{NormalizationSpec, Oracle, OracleKind, OracleSpec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar", default, deny_unknown_fields)]
pub struct NormalizationConfig<F> {
    pub eps_min: F,
    pub eps_max: F,
    /// Defaults depend on the oracle: chance accuracy 0.5 for simulated
    /// and external oracles, the table minimum for tabulated ones.
    pub alpha_min: Option<F>,
    pub alpha_max: Option<F>,
}

impl<F: Scalar> Default for NormalizationConfig<F> {
    fn default() -> Self {
        Self { eps_min: F::lit(0.01), eps_max: F::lit(0.5), alpha_min: None, alpha_max: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar", default, deny_unknown_fields)]
pub struct PriorsConfig<F> {
    /// Family used for the front model and for random curve queries.
    pub kind: CurveKind,
    pub front_particles: usize,
    pub resample: ResamplePolicy<F>,
    pub sigmoid: CurvePrior<F>,
    pub gompertz: CurvePrior<F>,
}

impl<F: Scalar> Default for PriorsConfig<F> {
    fn default() -> Self {
        Self {
            kind: CurveKind::Sigmoid,
            front_particles: DEFAULT_FRONT_PARTICLES,
            resample: ResamplePolicy::default(),
            sigmoid: CurvePrior::sigmoid_default(),
            gompertz: CurvePrior::gompertz_scaled(F::lit(5.0)),
        }
    }
}

impl<F: Scalar> PriorsConfig<F> {
    pub fn active(&self) -> &CurvePrior<F> {
        match self.kind {
            CurveKind::Sigmoid => &self.sigmoid,
            CurveKind::Gompertz => &self.gompertz,
        }
    }
}

/// Query strategy of an experiment arm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    /// KG over hypothetical curves; KG over privacy levels.
    CurveKg,
    /// Prior-drawn curves; uniformly random privacy levels.
    RandomCurve,
    /// KG over pairs from the estimated front; KG over privacy levels.
    PairKg,
    /// Random pairs from the estimated front; random privacy levels.
    RandomPairs,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::CurveKg, Arm::RandomCurve, Arm::PairKg, Arm::RandomPairs];

    pub fn name(self) -> &'static str {
        match self {
            Arm::CurveKg => "curve-kg",
            Arm::RandomCurve => "random-curve",
            Arm::PairKg => "pair-kg",
            Arm::RandomPairs => "random-pairs",
        }
    }

    /// Whether privacy levels are chosen by KG.
    pub fn kg_privacy(self) -> bool {
        matches!(self, Arm::CurveKg | Arm::PairKg)
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown arm `{s}` (expected one of curve-kg, random-curve, pair-kg, random-pairs)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interleave {
    /// Evaluate, interact, evaluate, ...
    #[default]
    Alternate,
    /// Take whichever action has the larger best KG.
    Adaptive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar", default, deny_unknown_fields)]
pub struct LoopConfig<F> {
    pub num_steps: usize,
    /// Number of seeds `0..seeds` used by batch runs.
    pub seeds: usize,
    pub arm: Arm,
    /// Arms compared by batch runs; empty means just `arm`.
    pub arms: Vec<Arm>,
    pub interleave: Interleave,
    /// Fix the front posterior at the oracle's true curve; every step is an
    /// interaction.
    pub known_front: bool,
    /// Fix the preference posterior at the true weights.
    pub known_weights: bool,
    /// True privacy weight `w1` of the simulated user; drawn from the
    /// weight prior per seed when absent.
    pub w_true: Option<F>,
}

impl<F: Scalar> Default for LoopConfig<F> {
    fn default() -> Self {
        Self {
            num_steps: 20,
            seeds: 30,
            arm: Arm::CurveKg,
            arms: Vec::new(),
            interleave: Interleave::Alternate,
            known_front: false,
            known_weights: false,
            w_true: None,
        }
    }
}

impl<F: Scalar> LoopConfig<F> {
    pub fn arm_list(&self) -> Vec<Arm> {
        if self.arms.is_empty() {
            vec![self.arm]
        } else {
            self.arms.clone()
        }
    }
}

/// Full experiment configuration, one JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar", deny_unknown_fields)]
pub struct SessionConfig<F> {
    #[serde(default)]
    pub normalization: NormalizationConfig<F>,
    #[serde(default)]
    pub oracle: OracleSpec<F>,
    #[serde(default)]
    pub user_model: UserModelConfig<F>,
    #[serde(default)]
    pub acquisition: AcquisitionConfig,
    #[serde(default)]
    pub priors: PriorsConfig<F>,
    #[serde(default, rename = "loop")]
    pub loop_: LoopConfig<F>,
}

impl<F: Scalar> Default for SessionConfig<F> {
    fn default() -> Self {
        Self {
            normalization: NormalizationConfig::default(),
            oracle: OracleSpec::default(),
            user_model: UserModelConfig::default(),
            acquisition: AcquisitionConfig::default(),
            priors: PriorsConfig::default(),
            loop_: LoopConfig::default(),
        }
    }
}

impl<F: Scalar> SessionConfig<F> {
    /// Parse JSON; errors name the offending field path and position.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::Config(format!("at `{path}` (line {}, column {}): {inner}", inner.line(), inner.column()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a config file; a relative tabulated-oracle path is resolved
    /// against the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let OracleKind::Tabulated { path: table } = &mut cfg.oracle.kind {
            if table.is_relative() {
                if let Some(dir) = path.parent() {
                    *table = dir.join(&*table);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.oracle.validate()?;
        self.user_model.validate()?;
        self.acquisition.validate()?;
        self.priors.sigmoid.validate().map_err(|e| Error::Config(format!("priors.sigmoid: {e}")))?;
        self.priors.gompertz.validate().map_err(|e| Error::Config(format!("priors.gompertz: {e}")))?;
        if self.priors.front_particles == 0 {
            return Err(Error::Config("priors.front_particles must be at least 1".into()));
        }
        if self.loop_.num_steps == 0 {
            return Err(Error::Config("loop.num_steps must be at least 1".into()));
        }
        if let Some(w) = self.loop_.w_true {
            if !(w > F::zero() && w < F::one()) {
                return Err(Error::Config(format!("loop.w_true must lie in (0, 1), got {w}")));
            }
        }
        let n = &self.normalization;
        if !(n.eps_min > F::zero() && n.eps_max > n.eps_min && n.eps_max.is_finite()) {
            return Err(Error::Config(format!("normalization needs 0 < eps_min < eps_max, got [{}, {}]", n.eps_min, n.eps_max)));
        }
        Ok(())
    }

    /// Normalization with oracle-dependent accuracy bounds filled in.
    pub fn resolve_normalization(&self, oracle: &Oracle<F>) -> Result<NormalizationSpec<F>> {
        let (lo, hi) = oracle.default_accuracy_range();
        let n = &self.normalization;
        NormalizationSpec::new(n.eps_min, n.eps_max, n.alpha_min.unwrap_or(lo), n.alpha_max.unwrap_or(hi))
    }
}
