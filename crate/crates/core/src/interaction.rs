//! The merchant agent and the two interaction channels built on it.
//!
//! The merchant is a selection functional over the trend-following
//! population: every tick it looks at the preliminary (ungated) decisions
//! and broadcasts one recommendation. Under BM-TF newborn scales are drawn
//! around the scale of the agent the merchant follows; under RM-TF each
//! agent only acts when its preliminary decision agrees with the
//! recommendation and is passive (0) otherwise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// How the merchant turns the population's decisions into one signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MerchantMode {
    /// Follow the agent with the highest utility (lowest id on ties).
    Argmax,
    /// Sign of the utility-weighted vote, zero broken to +1.
    Weighted,
}

impl std::str::FromStr for MerchantMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "argmax" => Ok(MerchantMode::Argmax),
            "weighted" => Ok(MerchantMode::Weighted),
            other => Err(format!("unknown merchant mode {other:?} (argmax|weighted)")),
        }
    }
}

impl std::fmt::Display for MerchantMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MerchantMode::Argmax => "argmax",
            MerchantMode::Weighted => "weighted",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MerchantState {
    /// Recommendation in {-1, 0, +1}; 0 until some agent has decided.
    pub decision: i8,
    pub source_agent: Option<usize>,
    /// Scale of the followed agent: the scale the merchant "occupies".
    pub source_scale: usize,
}

impl MerchantState {
    /// State before any agent has decided: no recommendation, scale at the
    /// midpoint of the admissible range.
    pub fn initial(l_min: usize, l_max: usize) -> Self {
        MerchantState {
            decision: 0,
            source_agent: None,
            source_scale: l_min + (l_max - l_min) / 2,
        }
    }
}

/// What the merchant sees of one agent that decided this tick.
///
/// `age` is exposed for future selection rules; the shipped modes rank on
/// utility alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub id: usize,
    pub utility: i64,
    pub age: u64,
    pub scale: usize,
    pub decision: i8,
}

/// Streaming accumulator behind [`merchant_decide`]. Candidates must be
/// pushed in ascending id order for the tie-break to hold.
#[derive(Debug, Clone, Default)]
pub struct MerchantTally {
    best: Option<(usize, i64, usize, i8)>,
    weighted: i64,
}

impl MerchantTally {
    #[inline]
    pub fn push(&mut self, id: usize, utility: i64, scale: usize, decision: i8) {
        self.weighted += utility * i64::from(decision);
        match self.best {
            Some((_, best_u, _, _)) if utility <= best_u => {}
            _ => self.best = Some((id, utility, scale, decision)),
        }
    }

    pub fn finish(&self, mode: MerchantMode, previous: &MerchantState) -> MerchantState {
        let Some((id, _, scale, decision)) = self.best else {
            return MerchantState {
                decision: 0,
                source_agent: None,
                source_scale: previous.source_scale,
            };
        };
        let decision = match mode {
            MerchantMode::Argmax => decision,
            MerchantMode::Weighted => {
                if self.weighted >= 0 {
                    1
                } else {
                    -1
                }
            }
        };
        MerchantState {
            decision,
            source_agent: Some(id),
            source_scale: scale,
        }
    }
}

/// Forms the merchant's recommendation from this tick's preliminary
/// decisions. In both modes the merchant occupies the scale of the
/// highest-utility candidate. With no candidates the recommendation is 0 and
/// the occupied scale is carried over from `previous`.
pub fn merchant_decide(candidates: &[Candidate], mode: MerchantMode, previous: &MerchantState) -> MerchantState {
    let mut sorted: Vec<&Candidate> = candidates.iter().collect();
    sorted.sort_by_key(|c| c.id);
    let mut tally = MerchantTally::default();
    for c in sorted {
        tally.push(c.id, c.utility, c.scale, c.decision);
    }
    tally.finish(mode, previous)
}

/// Rounds a continuous scale proposal to the nearest integer inside
/// `[l_min, l_max]`.
pub fn round_clamp_scale(value: f64, l_min: usize, l_max: usize) -> usize {
    let rounded = value.round();
    if !(rounded >= l_min as f64) {
        l_min
    } else if rounded >= l_max as f64 {
        l_max
    } else {
        rounded as usize
    }
}

/// BM-TF birth: one Gaussian draw centred on the merchant's scale, rounded
/// and clamped into bounds.
pub fn bm_birth_scale<R: Rng + ?Sized>(
    rng: &mut R,
    merchant_scale: usize,
    sigma: f64,
    l_min: usize,
    l_max: usize,
) -> usize {
    let z: f64 = rng.sample(StandardNormal);
    round_clamp_scale(merchant_scale as f64 + sigma * z, l_min, l_max)
}

/// RM-TF gate: keep the preliminary decision when it agrees with the
/// recommendation, otherwise go passive.
#[inline]
pub fn rm_gate(preliminary: i8, recommendation: i8) -> i8 {
    if preliminary == recommendation {
        preliminary
    } else {
        0
    }
}
