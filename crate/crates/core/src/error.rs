use thiserror::Error;

use crate::catalog::ItemId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("unknown item id {0}")]
    UnknownItem(ItemId),

    #[error("degenerate statistics: component {component} has zero standard deviation")]
    DegenerateStats { component: &'static str },

    #[error("invalid state: {0}")]
    State(String),

    #[error("value outside domain: {0}")]
    Domain(String),

    #[error("integration diverged at s = {time}: {detail}")]
    Integration { time: f64, detail: String },

    #[error("enumeration of {required} paths exceeds budget of {budget}")]
    Budget { required: u128, budget: u128 },

    #[error("no enumerated path reaches position {0}")]
    UndefinedPosition(usize),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
