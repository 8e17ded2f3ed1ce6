use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    CriteriaFailed,
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Io(anyhow::Error),
    Run(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Run(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Io(_) => 3,
        }
    }

    pub fn io(context: impl fmt::Display, e: impl Into<anyhow::Error>) -> Self {
        Failure::Io(e.into().context(context.to_string()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "{m}"),
            Failure::Io(e) | Failure::Run(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<inverse_mcmc::Error> for Failure {
    fn from(e: inverse_mcmc::Error) -> Self {
        use inverse_mcmc::Error as E;
        match e {
            E::Config(_) | E::DimensionMismatch { .. } => Failure::Usage(e.to_string()),
            E::Io(_) | E::Csv(_) => Failure::Io(e.into()),
            other => Failure::Run(other.into()),
        }
    }
}

/// Parses counts written either as integers or in float notation (`1e6`).
pub fn parse_count(s: &str) -> Result<usize, String> {
    if let Ok(n) = s.parse::<usize>() {
        return Ok(n);
    }
    let v: f64 = s.parse().map_err(|_| format!("not a count: {s}"))?;
    if v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v <= 2f64.powi(53) {
        Ok(v as usize)
    } else {
        Err(format!("not a non-negative integer: {s}"))
    }
}
