use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("metric value {value} is not a positive finite number{}", line_suffix(*line))]
    NonPositiveValue { value: f64, line: Option<u64> },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("{users} distinct users cannot fill {buckets} buckets")]
    TooFewUsers { users: usize, buckets: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("probability {0} is outside (0, 1]")]
    Probability(f64),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("control and treatment analyses are evaluated on different grids")]
    GridMismatch,

    #[error("bootstrap replicate is invalid: {0}")]
    Replicate(String),

    #[error(
        "sample standard deviation and IQR are both zero; normal reference bandwidth is undefined"
    )]
    DegenerateBandwidth,

    #[error("kernel density estimate at {x} is zero with bandwidth {bandwidth}")]
    ZeroDensity { x: f64, bandwidth: f64 },

    #[error("malformed input rows:\n{}", .0.join("\n"))]
    MalformedRows(Vec<String>),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn line_suffix(line: Option<u64>) -> String {
    match line {
        Some(l) => format!(" (line {l})"),
        None => String::new(),
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
