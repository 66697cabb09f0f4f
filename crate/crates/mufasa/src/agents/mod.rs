//! Decision policies behind a single contract.
//!
//! A policy sees an [`Offering`] each round — either one arm set per bandit
//! (the usual Cartesian-product case) or an explicit list of combinations —
//! selects one combination, and is then shown the realized rewards exactly
//! once via [`Policy::observe`]. Selection never reads the current round's
//! rewards. All policies are deterministic given their seed, with ties
//! broken toward the lowest lexicographic combination index.

mod kerucb;
mod linucb;
mod mufasa;
mod neuucb;
mod random;

pub use kerucb::KernelUcbAgent;
pub use linucb::LinUcbAgent;
pub use mufasa::{AgentStats, BonusPoint, MufasaAgent, MufasaConfig};
pub use neuucb::NeuralUcbAgent;
pub use random::RandomAgent;

use std::collections::BTreeMap;

use crate::assembly::Combination;
use crate::confidence::UcbBreakdown;
use crate::error::{Error, Result};

/// One bandit's candidate arms for a round.
pub type ArmSet = Vec<Vec<f64>>;

/// What the environment puts on the table each round.
#[derive(Debug, Clone)]
pub enum Offering {
    /// One arm set per bandit; the candidates are the full Cartesian product.
    Product(Vec<ArmSet>),
    /// An explicit list of pre-paired combinations (arm-set choices).
    Combos(Vec<Combination>),
}

impl Offering {
    pub fn bandits(&self) -> usize {
        match self {
            Offering::Product(sets) => sets.len(),
            Offering::Combos(combos) => combos.first().map_or(0, |c| c.features.len()),
        }
    }

    /// Number of candidate combinations.
    pub fn count(&self) -> u128 {
        match self {
            Offering::Product(sets) => sets.iter().map(|s| s.len() as u128).product(),
            Offering::Combos(combos) => combos.len() as u128,
        }
    }

    /// Iterates candidates in canonical order (lexicographic for products,
    /// given order for explicit lists), enforcing the enumeration cap.
    pub fn combinations(&self, cap: u128) -> Result<CombinationIter<'_>> {
        let product = self.count();
        if product > cap {
            return Err(Error::EnumerationCap { product, cap });
        }
        Ok(CombinationIter {
            offering: self,
            cursor: 0,
            indices: vec![0; self.bandits()],
            done: product == 0,
        })
    }
}

/// Lazy lexicographic iterator over an offering's combinations.
pub struct CombinationIter<'a> {
    offering: &'a Offering,
    cursor: usize,
    indices: Vec<usize>,
    done: bool,
}

impl Iterator for CombinationIter<'_> {
    type Item = Combination;

    fn next(&mut self) -> Option<Combination> {
        if self.done {
            return None;
        }
        match self.offering {
            Offering::Product(sets) => {
                let indices = self.indices.clone();
                let features: Vec<Vec<f64>> = indices
                    .iter()
                    .zip(sets)
                    .map(|(i, set)| set[*i].clone())
                    .collect();
                // Odometer increment, last bandit fastest.
                let mut pos = sets.len();
                loop {
                    if pos == 0 {
                        self.done = true;
                        break;
                    }
                    pos -= 1;
                    self.indices[pos] += 1;
                    if self.indices[pos] < sets[pos].len() {
                        break;
                    }
                    self.indices[pos] = 0;
                }
                Some(Combination::new(indices, features))
            }
            Offering::Combos(combos) => {
                let combo = combos[self.cursor].clone();
                self.cursor += 1;
                if self.cursor >= combos.len() {
                    self.done = true;
                }
                Some(combo)
            }
        }
    }
}

/// Materializes the full candidate list in lexicographic order.
pub fn enumerate_combinations(arm_sets: &[ArmSet], cap: u128) -> Result<Vec<Combination>> {
    let offering = Offering::Product(arm_sets.to_vec());
    Ok(offering.combinations(cap)?.collect())
}

/// Index of the strictly largest score; ties keep the earliest index.
pub fn argmax(scores: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.enumerate() {
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}

/// A policy's pick for the round, with its score decomposition.
#[derive(Debug, Clone)]
pub struct Selection {
    pub combination: Combination,
    /// Model value of the chosen combination (0 for value-free policies).
    pub predicted: f64,
    /// Confidence breakdown when the policy computes one.
    pub ucb: Option<UcbBreakdown>,
}

/// Everything the environment reveals after a combination is played.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub t: u64,
    pub combination: Combination,
    /// Final reward, including observation noise.
    pub final_reward: f64,
    /// Observed sub-rewards keyed by bandit index; possibly partial.
    pub sub_rewards: BTreeMap<usize, f64>,
    pub predicted: f64,
    pub ucb: Option<UcbBreakdown>,
    /// Noise-free value of the played combination, when the environment
    /// can provide it (simulation only).
    pub clean_value: Option<f64>,
    /// Noise-free value of the best combination this round.
    pub oracle_value: Option<f64>,
}

impl RoundOutcome {
    pub fn regret(&self) -> Option<f64> {
        match (self.clean_value, self.oracle_value) {
            (Some(v), Some(star)) => Some(star - v),
            _ => None,
        }
    }
}

/// Select/observe contract implemented by every policy.
pub trait Policy {
    fn name(&self) -> &str;

    /// Chooses a combination for round `t` (0-based).
    fn select(&mut self, t: u64, offering: &Offering) -> Result<Selection>;

    /// Feeds back the realized rewards for the most recent selection.
    /// Called exactly once per round.
    fn observe(&mut self, outcome: &RoundOutcome) -> Result<()>;
}
