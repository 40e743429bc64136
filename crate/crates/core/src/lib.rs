pub mod acquisition;
pub mod error;
pub mod front;
pub mod particles;
pub mod preference;
pub mod scalar;
pub mod session;

pub use error::{Error, Result};

pub type FrontParams64 = front::FrontParams<f64>;
pub type FrontPosterior64 = front::FrontPosterior<f64>;
pub type PrefPosterior64 = preference::PrefPosterior<f64>;
pub type PreferenceWeights64 = preference::PreferenceWeights<f64>;
pub type CurveQuery64 = preference::CurveQuery<f64>;
pub type SessionConfig64 = session::SessionConfig<f64>;
pub type SessionState64 = session::SessionState<f64>;
pub type RunRecord64 = session::RunRecord<f64>;
pub type BatchReport64 = session::BatchReport<f64>;
