//! ALPHA test supermartingale with the truncated shrinkage estimator, for
//! sampling cards without replacement.
//!
//! For a requirement with population assorter mean at most 1/2 the process
//! `M_t` is a nonnegative supermartingale starting at 1, so by Ville's
//! inequality it reaches `1/alpha` with probability at most `alpha`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contest::Contest;
use crate::requirement::{mean_assorter, AssorterValue, Requirement};

/// Upper truncation gap for the bet: `eta_t <= 1 - ETA_CAP_GAP`.
pub const ETA_CAP_GAP: f64 = 1e-6;

/// `ln(1e300)`; `log_m` saturates here.
pub const LOG_M_CAP: f64 = 690.775_527_898_213_7;

pub const DEFAULT_SHRINKAGE: f64 = 200.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TsmError {
    #[error("update after terminal status {0:?}")]
    Terminal(TsmStatus),
    #[error("all {0} cards already consumed")]
    Exhausted(u64),
    #[error("history gap: TSM has {have} draws but replay starts at draw {start}")]
    Gap { have: u64, start: u64 },
    #[error("initial alternative mean {0} must lie in (1/2, 1]")]
    BadEta0(f64),
    #[error("shrinkage weight {0} must be at least 1")]
    BadShrinkage(f64),
    #[error("population must contain at least one card")]
    EmptyPopulation,
    #[error("assorter-margin initial mean requires cast vote records")]
    MissingCvrs,
    #[error("last-round-margin initial mean requires a reported tabulation")]
    MissingMargin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TsmStatus {
    Active,
    /// The population mean is at most 1/2 whatever the unseen cards show.
    ProvenTrue,
    /// The population mean exceeds 1/2 whatever the unseen cards show.
    ProvenFalse,
}

/// Tuning for one base TSM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaParams {
    pub eta0: f64,
    /// Shrinkage weight `d`, in card-equivalents.
    pub d: f64,
}

impl AlphaParams {
    pub fn new(eta0: f64, d: f64) -> Result<Self, TsmError> {
        if !(eta0 > 0.5 && eta0 <= 1.0) {
            return Err(TsmError::BadEta0(eta0));
        }
        if !(d >= 1.0) {
            return Err(TsmError::BadShrinkage(d));
        }
        Ok(AlphaParams { eta0, d })
    }

    fn truncation(&self) -> f64 {
        (self.eta0 - 0.5) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseTsm {
    params: AlphaParams,
    total_cards: u64,
    draws: u64,
    /// Twice the running sum of assorter values; keeps the sum exact.
    twice_sum: u64,
    log_m: f64,
    status: TsmStatus,
}

impl BaseTsm {
    pub fn new(params: AlphaParams, total_cards: u64) -> Result<Self, TsmError> {
        if total_cards == 0 {
            return Err(TsmError::EmptyPopulation);
        }
        Ok(BaseTsm {
            params,
            total_cards,
            draws: 0,
            twice_sum: 0,
            log_m: 0.0,
            status: TsmStatus::Active,
        })
    }

    /// Builds a TSM by feeding `values` to a fresh one.
    pub fn replay(
        params: AlphaParams,
        total_cards: u64,
        values: impl IntoIterator<Item = AssorterValue>,
    ) -> Result<Self, TsmError> {
        let mut tsm = BaseTsm::new(params, total_cards)?;
        tsm.replay_from(0, values)?;
        Ok(tsm)
    }

    /// Continues from draw `start` (0-based). Values after the TSM reaches a
    /// terminal status are ignored.
    pub fn replay_from(
        &mut self,
        start: u64,
        values: impl IntoIterator<Item = AssorterValue>,
    ) -> Result<(), TsmError> {
        if start != self.draws {
            return Err(TsmError::Gap {
                have: self.draws,
                start,
            });
        }
        for x in values {
            if self.status != TsmStatus::Active {
                break;
            }
            self.update(x)?;
        }
        Ok(())
    }

    pub fn params(&self) -> AlphaParams {
        self.params
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    pub fn status(&self) -> TsmStatus {
        self.status
    }

    pub fn is_active(&self) -> bool {
        self.status == TsmStatus::Active
    }

    /// `ln M_t`. Meaningless for the threshold once proven false; see
    /// [`BaseTsm::score_log`].
    pub fn log_m(&self) -> f64 {
        self.log_m
    }

    pub fn value(&self) -> f64 {
        self.log_m.exp()
    }

    /// `ln M_t`, or `+inf` once the requirement is proven false.
    pub fn score_log(&self) -> f64 {
        if self.status == TsmStatus::ProvenFalse {
            f64::INFINITY
        } else {
            self.log_m
        }
    }

    pub fn sum(&self) -> f64 {
        self.twice_sum as f64 / 2.0
    }

    /// The null mean of the unseen cards, `(B/2 - S_t) / (B - t)`.
    pub fn null_mean(&self) -> Option<f64> {
        if self.draws >= self.total_cards {
            return None;
        }
        let num = self.total_cards as f64 - self.twice_sum as f64;
        Some(num / (2.0 * (self.total_cards - self.draws) as f64))
    }

    /// The bet for the next draw; depends only on draws already consumed.
    pub fn eta(&self) -> Option<f64> {
        if self.status != TsmStatus::Active {
            return None;
        }
        let mu = self.null_mean()?;
        Some(self.eta_given(mu))
    }

    fn eta_given(&self, mu: f64) -> f64 {
        let t = self.draws as f64;
        let AlphaParams { eta0, d } = self.params;
        let estimate = (d * eta0 + self.sum()) / (d + t);
        let floor = mu + self.params.truncation() / (d + t).sqrt();
        let eta = estimate.max(floor).min(1.0 - ETA_CAP_GAP);
        if eta > mu {
            eta
        } else {
            (mu + 1.0) / 2.0
        }
    }

    #[cfg(test)]
    pub(crate) fn set_log_m_for_test(&mut self, log_m: f64) {
        self.log_m = log_m;
    }

    /// Consumes one assorter value.
    pub fn update(&mut self, x: AssorterValue) -> Result<(), TsmError> {
        if self.status != TsmStatus::Active {
            return Err(TsmError::Terminal(self.status));
        }
        if self.draws >= self.total_cards {
            return Err(TsmError::Exhausted(self.total_cards));
        }
        let mu = self.null_mean().expect("cards remain");
        if mu > 0.0 {
            let eta = self.eta_given(mu);
            let value = x.as_f64();
            let factor = value * (eta - mu) / (mu * (1.0 - mu)) + (1.0 - eta) / (1.0 - mu);
            self.log_m = (self.log_m + factor.ln()).min(LOG_M_CAP);
        }
        // mu == 0: the unseen cards must all score 0; a positive value refutes
        // the null below, a zero leaves M unchanged.
        self.twice_sum += x.doubled();
        self.draws += 1;
        self.status = self.classify();
        Ok(())
    }

    fn classify(&self) -> TsmStatus {
        let b = self.total_cards;
        if self.twice_sum > b {
            TsmStatus::ProvenFalse
        } else if self.twice_sum + 2 * (b - self.draws) <= b {
            TsmStatus::ProvenTrue
        } else {
            TsmStatus::Active
        }
    }
}

/// How the initial alternative mean `eta0` is chosen per requirement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Eta0Policy {
    #[default]
    Fixed051,
    /// From the reported diluted last-round margin.
    Lrm,
    /// From the requirement's assorter mean over the cast vote records.
    Am,
}

impl std::str::FromStr for Eta0Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "051" | "0.51" | "fixed" | "fixed_051" => Ok(Eta0Policy::Fixed051),
            "lrm" => Ok(Eta0Policy::Lrm),
            "am" => Ok(Eta0Policy::Am),
            other => Err(format!("unknown eta0 mode {other:?}; expected 051, lrm or am")),
        }
    }
}

impl std::fmt::Display for Eta0Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Eta0Policy::Fixed051 => "051",
            Eta0Policy::Lrm => "lrm",
            Eta0Policy::Am => "am",
        })
    }
}

/// Reported information available to [`resolve_eta0`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ReportedInfo<'a> {
    /// Diluted last-round margin from the reported tabulation.
    pub last_round_margin: Option<f64>,
    pub cvrs: Option<&'a Contest>,
}

pub const ETA0_FLOOR: f64 = 0.51;
pub const ETA0_CEILING: f64 = 0.99;

pub fn resolve_eta0(
    policy: Eta0Policy,
    req: &Requirement,
    info: ReportedInfo<'_>,
) -> Result<f64, TsmError> {
    let raw = match policy {
        Eta0Policy::Fixed051 => return Ok(ETA0_FLOOR),
        Eta0Policy::Lrm => 0.5 + info.last_round_margin.ok_or(TsmError::MissingMargin)? / 2.0,
        Eta0Policy::Am => mean_assorter(req, info.cvrs.ok_or(TsmError::MissingCvrs)?).value(),
    };
    Ok(raw.clamp(ETA0_FLOOR, ETA0_CEILING))
}
