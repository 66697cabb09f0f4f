//! Per-bandit linear ridge baseline.
//!
//! One independent linear model per bandit: ridge state `A = λI + Σ x xᵀ`,
//! `b = Σ r x`, arm score `xᵀθ̂ + α·√(xᵀA⁻¹x)` with `θ̂ = A⁻¹b`. The
//! combination is the product of per-bandit argmaxes. Needs every
//! sub-reward every round; treats all bandits equally.

use crate::assembly::Combination;
use crate::error::{Error, Result};
use crate::tensor::{self, Matrix};

use super::{argmax, Offering, Policy, RoundOutcome, Selection};

struct RidgeArmState {
    a_inv: Matrix,
    b: Vec<f64>,
}

impl RidgeArmState {
    fn new(dim: usize, lambda: f64) -> Self {
        let mut a_inv = Matrix::identity(dim);
        a_inv.scale(1.0 / lambda);
        RidgeArmState {
            a_inv,
            b: vec![0.0; dim],
        }
    }

    fn score(&self, x: &[f64], alpha: f64) -> Result<(f64, f64)> {
        let theta = tensor::matvec(&self.a_inv, &self.b)?;
        let mean = tensor::dot(&theta, x);
        let bonus = alpha * tensor::quad_norm(&self.a_inv, x)?;
        Ok((mean, bonus))
    }

    fn update(&mut self, x: &[f64], reward: f64) -> Result<()> {
        self.a_inv = tensor::sherman_morrison_update(&self.a_inv, x, 1.0)?;
        for (bi, xi) in self.b.iter_mut().zip(x) {
            *bi += reward * xi;
        }
        Ok(())
    }
}

pub struct LinUcbAgent {
    name: String,
    alpha: f64,
    lambda: f64,
    dims: Vec<usize>,
    states: Vec<RidgeArmState>,
    pending: bool,
}

impl LinUcbAgent {
    pub fn new(dims: &[usize], alpha: f64, lambda: f64) -> Result<Self> {
        if lambda <= 0.0 {
            return Err(Error::config("ridge lambda must be positive"));
        }
        Ok(LinUcbAgent {
            name: "k_linucb".to_string(),
            alpha,
            lambda,
            dims: dims.to_vec(),
            states: dims
                .iter()
                .map(|d| RidgeArmState::new(*d, lambda))
                .collect(),
            pending: false,
        })
    }

    pub fn set_name(&mut self, name: impl Into<String>) {
        self.name = name.into();
    }

    /// Greedy ridge estimate of one bandit's arm (for tests).
    pub fn mean_of(&self, bandit: usize, x: &[f64]) -> Result<f64> {
        Ok(self.states[bandit].score(x, 0.0)?.0)
    }
}

impl Policy for LinUcbAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn select(&mut self, _t: u64, offering: &Offering) -> Result<Selection> {
        if self.pending {
            return Err(Error::contract("select called with an unobserved round"));
        }
        let sets = match offering {
            Offering::Product(sets) => sets,
            Offering::Combos(_) => {
                return Err(Error::Unsupported(
                    "per-bandit baselines need product offerings".into(),
                ))
            }
        };
        if sets.len() != self.states.len() {
            return Err(Error::DimensionMismatch {
                context: "linucb offering",
                expected: self.states.len(),
                got: sets.len(),
            });
        }
        let mut indices = Vec::with_capacity(sets.len());
        let mut features = Vec::with_capacity(sets.len());
        let mut predicted = 0.0;
        for (k, set) in sets.iter().enumerate() {
            let mut scores = Vec::with_capacity(set.len());
            let mut means = Vec::with_capacity(set.len());
            for x in set {
                if x.len() != self.dims[k] {
                    return Err(Error::DimensionMismatch {
                        context: "linucb arm dim",
                        expected: self.dims[k],
                        got: x.len(),
                    });
                }
                let (mean, bonus) = self.states[k].score(x, self.alpha)?;
                scores.push(mean + bonus);
                means.push(mean);
            }
            let pick = argmax(scores.into_iter())
                .ok_or_else(|| Error::contract("empty arm set"))?;
            predicted += means[pick];
            indices.push(pick);
            features.push(set[pick].clone());
        }
        self.pending = true;
        Ok(Selection {
            combination: Combination::new(indices, features),
            predicted,
            ucb: None,
        })
    }

    fn observe(&mut self, outcome: &RoundOutcome) -> Result<()> {
        if !self.pending {
            return Err(Error::contract("observe called twice for one round"));
        }
        self.pending = false;
        for k in 0..self.states.len() {
            let reward = outcome.sub_rewards.get(&k).copied().ok_or_else(|| {
                Error::Unsupported(format!(
                    "linucb needs every sub-reward; bandit {k} is masked"
                ))
            })?;
            self.states[k].update(&outcome.combination.features[k], reward)?;
        }
        Ok(())
    }
}
