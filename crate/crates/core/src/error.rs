use thiserror::Error;

pub type Result<T, E = OedError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum OedError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("system matrix is singular at omega = {frequency} rad/s (resonance)")]
    Resonance { frequency: f64 },

    #[error("FRF matrix is rank deficient: numerical rank {rank} < {required} parameters")]
    RankDeficient { rank: usize, required: usize },

    /// The weighted information matrix lost full column rank.
    #[error("ill-posed inverse problem{}: numerical rank {rank} < {required}", scenario_suffix(.scenario))]
    IllPosed {
        rank: usize,
        required: usize,
        scenario: Option<usize>,
    },

    #[error("insufficient data: {active} active observations for {required} parameters")]
    InsufficientData { active: usize, required: usize },

    #[error("combinatorial guard exceeded: {count} candidates > limit {limit}; {hint}")]
    CombinatorialGuard {
        count: u128,
        limit: u128,
        hint: &'static str,
    },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("Monte Carlo acceptance rate {rate:.4} below 1%; use larger survival probabilities")]
    LowAcceptance { rate: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn scenario_suffix(scenario: &Option<usize>) -> String {
    match scenario {
        Some(j) => format!(" in scenario {j}"),
        None => String::new(),
    }
}

impl OedError {
    pub(crate) fn ill_posed(rank: usize, required: usize) -> Self {
        OedError::IllPosed {
            rank,
            required,
            scenario: None,
        }
    }

    pub(crate) fn in_scenario(self, j: usize) -> Self {
        match self {
            OedError::IllPosed { rank, required, .. } => OedError::IllPosed {
                rank,
                required,
                scenario: Some(j),
            },
            other => other,
        }
    }

    pub fn is_ill_posed(&self) -> bool {
        matches!(self, OedError::IllPosed { .. })
    }

    /// Process exit code used by the `oed` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            OedError::InvalidConfig(_)
            | OedError::DimensionMismatch { .. }
            | OedError::Json(_)
            | OedError::Infeasible(_) => 2,
            OedError::IllPosed { .. }
            | OedError::RankDeficient { .. }
            | OedError::Resonance { .. }
            | OedError::InsufficientData { .. }
            | OedError::LowAcceptance { .. } => 3,
            OedError::CombinatorialGuard { .. } => 4,
            OedError::Io(_) | OedError::Csv(_) => 1,
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(OedError::DimensionMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}
