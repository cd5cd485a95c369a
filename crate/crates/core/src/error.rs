use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("max |v| = {max_abs:.6} exceeds 1; rescale epsilon by this factor (see MapFamily::renormalized)")]
    Normalization { max_abs: f64 },

    #[error("r = {r} lies within 3*gamma of the resonance {p}/{q}; use the resonant-frame fields there")]
    ResonanceCollar { r: f64, p: i64, q: u64 },

    #[error("regime mismatch: {0}")]
    Regime(String),

    #[error("resolution too coarse: {0}")]
    Resolution(String),

    #[error("requested {requested} map steps exceeds the budget of {budget}")]
    Budget { requested: u128, budget: u128 },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
