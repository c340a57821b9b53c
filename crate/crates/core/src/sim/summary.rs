use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::SliceRun;
use crate::domain::QoeSample;

/// Which statistic of the per-request delay feeds the QoE sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Statistic {
    #[default]
    Max,
    Mean,
    /// Nearest-rank percentile, `p` in (0, 100].
    Percentile(f64),
}

impl Statistic {
    /// Statistic over `delays`; `f64::INFINITY` when empty.
    pub fn of(self, delays: &[f64]) -> f64 {
        if delays.is_empty() {
            return f64::INFINITY;
        }
        match self {
            Statistic::Max => delays.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Statistic::Mean => delays.iter().sum::<f64>() / delays.len() as f64,
            Statistic::Percentile(p) => {
                let mut v = delays.to_vec();
                v.sort_by(f64::total_cmp);
                let rank = (p / 100.0 * v.len() as f64).ceil() as usize;
                v[rank.clamp(1, v.len()) - 1]
            }
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statistic::Max => f.write_str("max"),
            Statistic::Mean => f.write_str("mean"),
            Statistic::Percentile(p) => write!(f, "p{p}"),
        }
    }
}

impl FromStr for Statistic {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim().to_ascii_lowercase();
        let pct = if let Some(rest) = s.strip_prefix("percentile(") {
            rest.strip_suffix(')')
        } else {
            s.strip_prefix('p')
        };
        match (s.as_str(), pct) {
            ("max", _) => Ok(Statistic::Max),
            ("mean", _) => Ok(Statistic::Mean),
            (_, Some(p)) => match p.parse::<f64>() {
                Ok(p) if p > 0.0 && p <= 100.0 => Ok(Statistic::Percentile(p)),
                _ => Err(format!("percentile must be in (0, 100]: {s:?}")),
            },
            _ => Err(format!(
                "unknown statistic {s:?} (expected max, mean, pNN or percentile(NN))"
            )),
        }
    }
}

impl TryFrom<String> for Statistic {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Statistic> for String {
    fn from(s: Statistic) -> String {
        s.to_string()
    }
}

/// Reduces one slice's raw run to a QoE sample.
pub fn summarize(run: &SliceRun, statistic: Statistic, seed: u64) -> QoeSample {
    let throughput = if run.offered == 0 {
        1.0
    } else {
        run.succeeded as f64 / run.offered as f64
    };
    QoeSample {
        delay_ms: statistic.of(&run.delays_ms),
        throughput,
        n_requests: run.offered,
        raw_delays: Some(run.delays_ms.clone()),
        seed,
    }
}
