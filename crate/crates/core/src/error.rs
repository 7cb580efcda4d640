use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("an EV on the road cannot charge")]
    ChargeOnRoad,
    #[error("weight vector has no positive mass")]
    ZeroWeights,
    #[error("asked to charge {count} EVs but only {available} are chargeable")]
    TooManySelected { count: usize, available: usize },
    #[error("no adjustment possible: every building is inelastic")]
    AllInelastic,
    #[error("enumeration budget of {budget} leaves exceeded")]
    BudgetExceeded { budget: usize },
    #[error("row not stochastic (sums to {sum})")]
    NotStochastic { sum: f64 },
    #[error("no feasible schedule exists")]
    NoFeasibleSchedule,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot read or write checkpoint: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse checkpoint: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize checkpoint: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint weights do not match dims {dims:?} (got {len})")]
    Shape { dims: [usize; 4], len: usize },
}

#[derive(Debug, Error)]
pub enum CompareError {
    #[error("need at least two runs to compare (got {0})")]
    TooFew(usize),
    #[error("run {label} has scenario hash {found}, expected {expected}")]
    HashMismatch { label: String, expected: String, found: String },
    #[error("cannot read run: {0}")]
    Io(#[from] std::io::Error),
}
