//! The assembled-network UCB policy.
//!
//! Each round the agent scores every candidate combination with
//! `value + bonus`: the assembled model's prediction plus the weighted
//! confidence total `C̄·Σ_k B^k + B^F`. The per-bandit terms depend only on
//! the arm, so product offerings are scored with one gradient evaluation
//! per arm rather than per combination; the shared term is evaluated per
//! combination. After observing rewards it appends the round to its
//! history, pushes the chosen combination's gradients into the design
//! streams, and every `train_every` rounds retrains: component-wise when
//! every stored round has all sub-rewards, end-to-end on zero-padded
//! upper-bound samples otherwise.

use std::collections::BTreeMap;

use crate::assembly::{
    self, AssembledParams, AssembledSpec, Combination, JointTrainConfig, RoundSample,
};
use crate::confidence::{
    empirical_bonus, gamma_terms, theoretical_bonus, ucb_total, DesignState, UcbBreakdown,
    UcbConfig, UcbMode,
};
use crate::error::{Error, Result};
use crate::mlp;

use super::{Offering, Policy, RoundOutcome, Selection};

/// Behavior knobs of the assembled-network policy.
#[derive(Debug, Clone)]
pub struct MufasaConfig {
    /// Retrain cadence in rounds.
    pub train_every: u64,
    pub eta: f64,
    /// Gradient steps per training epoch.
    pub steps: usize,
    /// Ridge weight, shared by training and the design matrices.
    pub lambda: f64,
    pub ucb: UcbConfig,
    /// Resume each training epoch from the current parameters instead of
    /// the initialization.
    pub warm_start: bool,
    /// Rebuild the design streams from the full history after every
    /// training epoch, so accumulated gradients are taken at the newest
    /// parameters (the literal definition; costs O(t) per epoch).
    pub recompute_design: bool,
    /// Cap on the training window (None = full history).
    pub max_history: Option<usize>,
    pub combination_cap: u128,
    /// When false, the shared net is ignored: the score is the sum of
    /// sub-network values plus per-bandit bonuses. This is the single-task
    /// building block the per-bandit neural baseline duplicates.
    pub use_shared: bool,
    /// Feed per-arm pull counts instead of the round index into the mixing
    /// schedule; meaningful when arm identities persist across rounds.
    pub schedule_per_arm: bool,
}

impl Default for MufasaConfig {
    fn default() -> Self {
        MufasaConfig {
            train_every: 50,
            eta: 0.01,
            steps: 100,
            lambda: 1.0,
            ucb: UcbConfig::default(),
            warm_start: true,
            recompute_design: false,
            max_history: None,
            combination_cap: 1_000_000,
            use_shared: true,
            schedule_per_arm: false,
        }
    }
}

/// Counters and traces for tests and diagnostics.
#[derive(Debug, Clone, Default)]
pub struct AgentStats {
    /// Training epochs that took the all-sub-rewards branch.
    pub all_epochs: u64,
    /// Training epochs that took the partial (end-to-end) branch.
    pub partial_epochs: u64,
    /// Per-round sample-set sizes from the latest partial epoch.
    pub omega_sizes: Vec<usize>,
    /// Chosen-combination bonus decomposition per round.
    pub bonus_trace: Vec<BonusPoint>,
}

/// Empirical-bonus split of one round's chosen combination.
#[derive(Debug, Clone, Copy)]
pub struct BonusPoint {
    /// Mixing weight on the initialization-gradient term.
    pub weight: f64,
    /// Weighted current-parameter share of the total bonus.
    pub current_share: f64,
    /// Weighted initialization share of the total bonus.
    pub init_share: f64,
}

struct PendingChoice {
    t: u64,
    indices: Vec<usize>,
    sub_grads_current: Vec<Vec<f64>>,
    sub_grads_init: Vec<Vec<f64>>,
    shared_grad_current: Option<Vec<f64>>,
    shared_grad_init: Option<Vec<f64>>,
}

/// Scored data for one arm of one bandit, reused across combinations.
struct ArmScore {
    value: f64,
    bonus: f64,
    current_norm: f64,
    init_norm: f64,
    grad_current: Vec<f64>,
    grad_init: Vec<f64>,
}

pub struct MufasaAgent {
    name: String,
    spec: AssembledSpec,
    params: AssembledParams,
    init_params: AssembledParams,
    cfg: MufasaConfig,
    bandit_designs: Vec<DesignState>,
    shared_design: DesignState,
    history: Vec<RoundSample>,
    rounds_observed: u64,
    pending: Option<PendingChoice>,
    /// Pulls per (bandit, arm index) for pull-count schedules.
    arm_pulls: Vec<BTreeMap<usize, u64>>,
    pub stats: AgentStats,
}

impl MufasaAgent {
    pub fn new(spec: AssembledSpec, seed: u64, cfg: MufasaConfig) -> Result<Self> {
        let params = assembly::init_assembled(&spec, seed)?;
        Self::with_params(spec, params, cfg)
    }

    /// Builds the agent around explicit parameters (useful for handcrafted
    /// models in tests and for resuming serialized runs).
    pub fn with_params(
        spec: AssembledSpec,
        params: AssembledParams,
        cfg: MufasaConfig,
    ) -> Result<Self> {
        cfg.ucb.validate()?;
        if spec.m_hat() != 1 {
            return Err(Error::Unsupported(
                "confidence-driven selection needs m_hat = 1".into(),
            ));
        }
        let bandit_designs = spec
            .sub_specs()
            .iter()
            .map(|s| DesignState::new(s.param_count(), cfg.lambda, s.width as f64))
            .collect::<Result<Vec<_>>>()?;
        let shared_spec = spec.shared_spec();
        let shared_design = DesignState::new(
            shared_spec.param_count(),
            cfg.lambda,
            shared_spec.width as f64,
        )?;
        let k = spec.bandits();
        let init_params = AssembledParams {
            shared: params.shared.at_init(),
            subs: params.subs.iter().map(|p| p.at_init()).collect(),
        };
        Ok(MufasaAgent {
            name: "mufasa".to_string(),
            spec,
            params,
            init_params,
            cfg,
            bandit_designs,
            shared_design,
            history: Vec::new(),
            rounds_observed: 0,
            pending: None,
            arm_pulls: vec![BTreeMap::new(); k],
            stats: AgentStats::default(),
        })
    }

    pub fn set_name(&mut self, name: impl Into<String>) {
        self.name = name.into();
    }

    pub fn spec(&self) -> &AssembledSpec {
        &self.spec
    }

    pub fn params(&self) -> &AssembledParams {
        &self.params
    }

    pub fn design_state(&self, bandit: usize) -> &DesignState {
        &self.bandit_designs[bandit]
    }

    pub fn shared_design_state(&self) -> &DesignState {
        &self.shared_design
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    fn schedule_weight(&self, bandit: usize, arm: usize, t: u64) -> f64 {
        let count = if self.cfg.schedule_per_arm {
            *self.arm_pulls[bandit].get(&arm).unwrap_or(&0)
        } else {
            t
        };
        self.cfg.ucb.schedule.weight(count)
    }

    /// Per-bandit confidence term for one arm.
    fn bandit_bonus(
        &self,
        bandit: usize,
        g_current: &[f64],
        g_init: &[f64],
        weight: f64,
        t: u64,
    ) -> Result<f64> {
        let state = &self.bandit_designs[bandit];
        match self.cfg.ucb.mode {
            UcbMode::Empirical => empirical_bonus(state, g_current, g_init, weight),
            UcbMode::Theoretical => {
                let sub = self.spec.sub_spec(bandit);
                let mut cfg = self.cfg.ucb.clone();
                cfg.delta = self.cfg.ucb.delta / (self.spec.bandits() as f64 + 1.0);
                let gamma = gamma_terms(
                    &cfg,
                    t,
                    state.logdet_ratio(),
                    sub.width,
                    sub.depth,
                    self.cfg.lambda,
                )?;
                theoretical_bonus(state, g_current, g_init, &gamma)
            }
        }
    }

    fn shared_bonus(
        &self,
        g_current: &[f64],
        g_init: &[f64],
        weight: f64,
        t: u64,
    ) -> Result<f64> {
        let state = &self.shared_design;
        match self.cfg.ucb.mode {
            UcbMode::Empirical => empirical_bonus(state, g_current, g_init, weight),
            UcbMode::Theoretical => {
                let shared = self.spec.shared_spec();
                let mut cfg = self.cfg.ucb.clone();
                cfg.delta = self.cfg.ucb.delta / (self.spec.bandits() as f64 + 1.0);
                let gamma = gamma_terms(
                    &cfg,
                    t,
                    state.logdet_ratio(),
                    shared.width,
                    shared.depth,
                    self.cfg.lambda,
                )?;
                theoretical_bonus(state, g_current, g_init, &gamma)
            }
        }
    }

    fn score_arm(&self, bandit: usize, arm_index: usize, x: &[f64], t: u64) -> Result<ArmScore> {
        let value = mlp::forward_scalar(self.spec.sub_spec(bandit), &self.params.subs[bandit], x)?;
        let grad_current = assembly::grad_sub(&self.spec, &self.params, x, bandit)?;
        let grad_init = assembly::grad_sub(&self.spec, &self.init_params, x, bandit)?;
        let weight = self.schedule_weight(bandit, arm_index, t);
        let bonus = self.bandit_bonus(bandit, &grad_current, &grad_init, weight, t)?;
        let state = &self.bandit_designs[bandit];
        Ok(ArmScore {
            value,
            bonus: self.cfg.ucb.bonus_scale * bonus,
            current_norm: (1.0 - weight) * state.current_norm(&grad_current)?,
            init_norm: weight * state.init_norm(&grad_init)?,
            grad_current,
            grad_init,
        })
    }

    /// Scores one fully-resolved combination given its per-arm scores.
    /// Returns `(predicted, breakdown, shared grads, bonus split)`.
    #[allow(clippy::type_complexity)]
    fn score_combination(
        &self,
        arm_scores: &[&ArmScore],
        t: u64,
    ) -> Result<(
        f64,
        UcbBreakdown,
        Option<(Vec<f64>, Vec<f64>)>,
        (f64, f64),
    )> {
        let per_bandit: Vec<f64> = arm_scores.iter().map(|a| a.bonus).collect();
        let mut current_share: f64 = arm_scores.iter().map(|a| a.current_norm).sum::<f64>()
            * self.spec.lipschitz
            * self.cfg.ucb.bonus_scale;
        let mut init_share: f64 = arm_scores.iter().map(|a| a.init_norm).sum::<f64>()
            * self.spec.lipschitz
            * self.cfg.ucb.bonus_scale;
        if !self.cfg.use_shared {
            let predicted: f64 = arm_scores.iter().map(|a| a.value).sum();
            let breakdown = ucb_total(&per_bandit, 0.0, self.spec.lipschitz)?;
            return Ok((predicted, breakdown, None, (current_share, init_share)));
        }
        let sub_values: Vec<f64> = arm_scores.iter().map(|a| a.value).collect();
        let predicted = assembly::shared_forward(&self.spec, &self.params, &sub_values)?;
        let g_current = assembly::grad_shared(&self.spec, &self.params, &sub_values)?;
        let g_init = assembly::grad_shared(&self.spec, &self.init_params, &sub_values)?;
        let weight = self.cfg.ucb.schedule.weight(t);
        let bonus =
            self.cfg.ucb.bonus_scale * self.shared_bonus(&g_current, &g_init, weight, t)?;
        current_share += (1.0 - weight)
            * self.shared_design.current_norm(&g_current)?
            * self.cfg.ucb.bonus_scale;
        init_share +=
            weight * self.shared_design.init_norm(&g_init)? * self.cfg.ucb.bonus_scale;
        let breakdown = ucb_total(&per_bandit, bonus, self.spec.lipschitz)?;
        Ok((
            predicted,
            breakdown,
            Some((g_current, g_init)),
            (current_share, init_share),
        ))
    }

    fn training_window(&self) -> &[RoundSample] {
        match self.cfg.max_history {
            Some(cap) if self.history.len() > cap => &self.history[self.history.len() - cap..],
            _ => &self.history,
        }
    }

    fn train_epoch(&mut self) -> Result<()> {
        let window = self.training_window();
        let k = self.spec.bandits();
        let full = window
            .iter()
            .all(|r| r.sub_rewards.len() == k && (0..k).all(|i| r.sub_rewards.contains_key(&i)));
        let start = if self.cfg.warm_start {
            self.params.clone()
        } else {
            AssembledParams {
                shared: self.params.shared.at_init(),
                subs: self.params.subs.iter().map(|p| p.at_init()).collect(),
            }
        };
        let cfg = JointTrainConfig::new(self.cfg.eta, self.cfg.steps, self.cfg.lambda);
        if full {
            self.params = assembly::train_all(&self.spec, &start, window, &cfg)?;
            self.stats.all_epochs += 1;
        } else {
            if !self.cfg.use_shared {
                return Err(Error::Unsupported(
                    "per-bandit agent needs full sub-rewards".into(),
                ));
            }
            let mut samples = Vec::new();
            let mut sizes = Vec::with_capacity(window.len());
            for round in window {
                let expanded = assembly::build_partial_samples(
                    &round.features,
                    round.final_reward,
                    &round.sub_rewards,
                    self.spec.lipschitz,
                );
                sizes.push(expanded.len());
                samples.extend(expanded);
            }
            self.stats.omega_sizes = sizes;
            self.params = assembly::train_partial(&self.spec, &start, &samples, &cfg)?;
            self.stats.partial_epochs += 1;
        }
        if self.cfg.recompute_design {
            self.rebuild_designs()?;
        }
        Ok(())
    }

    /// Re-accumulates every design stream with gradients taken at the
    /// current parameters (the initialization stream reconstructs to the
    /// same values since the anchor never moves).
    fn rebuild_designs(&mut self) -> Result<()> {
        for state in &mut self.bandit_designs {
            state.reset();
        }
        self.shared_design.reset();
        let history = self.history.clone();
        for round in &history {
            for k in 0..self.spec.bandits() {
                let g_now = assembly::grad_sub(&self.spec, &self.params, &round.features[k], k)?;
                let g_init =
                    assembly::grad_sub(&self.spec, &self.init_params, &round.features[k], k)?;
                self.bandit_designs[k].update(&g_now, &g_init)?;
            }
            if self.cfg.use_shared {
                let f = assembly::sub_outputs(&self.spec, &self.params, &round.features)?;
                let g_now = assembly::grad_shared(&self.spec, &self.params, &f)?;
                let g_init = assembly::grad_shared(&self.spec, &self.init_params, &f)?;
                self.shared_design.update(&g_now, &g_init)?;
            }
        }
        Ok(())
    }
}

impl Policy for MufasaAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn select(&mut self, t: u64, offering: &Offering) -> Result<Selection> {
        if self.pending.is_some() {
            return Err(Error::contract("select called with an unobserved round"));
        }
        if offering.bandits() != self.spec.bandits() {
            return Err(Error::DimensionMismatch {
                context: "offering bandit count",
                expected: self.spec.bandits(),
                got: offering.bandits(),
            });
        }
        let mut best: Option<(f64, Selection, PendingChoice, (f64, f64))> = None;
        let mut consider = |agent: &Self,
                            combination: Combination,
                            arm_scores: &[&ArmScore],
                            best: &mut Option<(f64, Selection, PendingChoice, (f64, f64))>|
         -> Result<()> {
            let (predicted, breakdown, shared_grads, shares) =
                agent.score_combination(arm_scores, t)?;
            let score = predicted + breakdown.total;
            if best.as_ref().map_or(true, |(b, ..)| score > *b) {
                let (shared_grad_current, shared_grad_init) = match shared_grads {
                    Some((c, i)) => (Some(c), Some(i)),
                    None => (None, None),
                };
                let pending = PendingChoice {
                    t,
                    indices: combination.indices.clone(),
                    sub_grads_current: arm_scores
                        .iter()
                        .map(|a| a.grad_current.clone())
                        .collect(),
                    sub_grads_init: arm_scores.iter().map(|a| a.grad_init.clone()).collect(),
                    shared_grad_current,
                    shared_grad_init,
                };
                let selection = Selection {
                    combination,
                    predicted,
                    ucb: Some(breakdown),
                };
                *best = Some((score, selection, pending, shares));
            }
            Ok(())
        };

        match offering {
            Offering::Product(sets) => {
                // Per-arm scores once, per-combination shared term.
                let _ = offering.combinations(self.cfg.combination_cap)?;
                let mut scored: Vec<Vec<ArmScore>> = Vec::with_capacity(sets.len());
                for (k, set) in sets.iter().enumerate() {
                    let mut per_arm = Vec::with_capacity(set.len());
                    for (i, x) in set.iter().enumerate() {
                        per_arm.push(self.score_arm(k, i, x, t)?);
                    }
                    scored.push(per_arm);
                }
                for combination in offering.combinations(self.cfg.combination_cap)? {
                    let arm_scores: Vec<&ArmScore> = combination
                        .indices
                        .iter()
                        .enumerate()
                        .map(|(k, i)| &scored[k][*i])
                        .collect();
                    consider(self, combination, &arm_scores, &mut best)?;
                }
            }
            Offering::Combos(_) => {
                for combination in offering.combinations(self.cfg.combination_cap)? {
                    let mut arm_scores = Vec::with_capacity(combination.features.len());
                    for (k, x) in combination.features.iter().enumerate() {
                        arm_scores.push(self.score_arm(k, combination.indices[k], x, t)?);
                    }
                    let refs: Vec<&ArmScore> = arm_scores.iter().collect();
                    consider(self, combination, &refs, &mut best)?;
                }
            }
        }

        let (_, selection, pending, shares) =
            best.ok_or_else(|| Error::contract("offering contained no combinations"))?;
        self.stats.bonus_trace.push(BonusPoint {
            weight: self.cfg.ucb.schedule.weight(t),
            current_share: shares.0,
            init_share: shares.1,
        });
        self.pending = Some(pending);
        Ok(selection)
    }

    fn observe(&mut self, outcome: &RoundOutcome) -> Result<()> {
        let pending = self
            .pending
            .take()
            .ok_or_else(|| Error::contract("observe called twice for one round"))?;
        if pending.t != outcome.t || pending.indices != outcome.combination.indices {
            return Err(Error::contract(
                "observed outcome does not match the pending selection",
            ));
        }
        for (k, (g_now, g_init)) in pending
            .sub_grads_current
            .iter()
            .zip(&pending.sub_grads_init)
            .enumerate()
        {
            self.bandit_designs[k].update(g_now, g_init)?;
            *self.arm_pulls[k]
                .entry(outcome.combination.indices[k])
                .or_insert(0) += 1;
        }
        if let (Some(g_now), Some(g_init)) =
            (&pending.shared_grad_current, &pending.shared_grad_init)
        {
            self.shared_design.update(g_now, g_init)?;
        }
        self.history.push(RoundSample {
            features: outcome.combination.features.clone(),
            final_reward: outcome.final_reward,
            sub_rewards: outcome.sub_rewards.clone(),
        });
        self.rounds_observed += 1;
        if self.cfg.train_every > 0
            && self.rounds_observed % self.cfg.train_every == 0
            && self.cfg.steps > 0
        {
            self.train_epoch()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{NetParams, NetSpec};
    use crate::rng::Rng;
    use crate::tensor::{dot, Matrix};

    fn small_spec() -> AssembledSpec {
        AssembledSpec::new(
            vec![NetSpec::new(2, 8, 3, 1), NetSpec::new(2, 8, 3, 1)],
            2,
            8,
            true,
            1.0,
        )
        .unwrap()
    }

    fn offering(rng: &mut Rng, n: usize) -> Offering {
        Offering::Product(vec![
            (0..n).map(|_| rng.unit_ball(3)).collect(),
            (0..n).map(|_| rng.unit_ball(3)).collect(),
        ])
    }

    fn outcome_for(t: u64, sel: &Selection, subs: &[f64]) -> RoundOutcome {
        let mut sub_rewards = BTreeMap::new();
        for (k, r) in subs.iter().enumerate() {
            sub_rewards.insert(k, *r);
        }
        RoundOutcome {
            t,
            combination: sel.combination.clone(),
            final_reward: subs.iter().sum(),
            sub_rewards,
            predicted: sel.predicted,
            ucb: sel.ucb.clone(),
            clean_value: None,
            oracle_value: None,
        }
    }

    #[test]
    fn selection_is_deterministic_per_seed() {
        let cfg = MufasaConfig::default();
        let mut a = MufasaAgent::new(small_spec(), 7, cfg.clone()).unwrap();
        let mut b = MufasaAgent::new(small_spec(), 7, cfg).unwrap();
        let mut rng = Rng::new(3);
        let off = offering(&mut rng, 4);
        let sa = a.select(0, &off).unwrap();
        let sb = b.select(0, &off).unwrap();
        assert_eq!(sa.combination.indices, sb.combination.indices);
        assert_eq!(sa.predicted, sb.predicted);
    }

    #[test]
    fn score_decomposition_is_reported_exactly() {
        let mut agent = MufasaAgent::new(small_spec(), 1, MufasaConfig::default()).unwrap();
        let mut rng = Rng::new(5);
        let off = offering(&mut rng, 3);
        let sel = agent.select(0, &off).unwrap();
        let ucb = sel.ucb.as_ref().unwrap();
        // total = C̄·Σ B^k + B^F exactly.
        let recomputed =
            1.0 * ucb.per_bandit.iter().sum::<f64>() + ucb.shared;
        assert_eq!(ucb.total, recomputed);
    }

    #[test]
    fn double_observe_is_rejected() {
        let mut agent = MufasaAgent::new(small_spec(), 2, MufasaConfig::default()).unwrap();
        let mut rng = Rng::new(6);
        let off = offering(&mut rng, 2);
        let sel = agent.select(0, &off).unwrap();
        let out = outcome_for(0, &sel, &[0.1, 0.2]);
        agent.observe(&out).unwrap();
        assert!(matches!(agent.observe(&out), Err(Error::Contract(_))));
    }

    #[test]
    fn design_updates_track_rounds() {
        let mut agent = MufasaAgent::new(small_spec(), 3, MufasaConfig::default()).unwrap();
        let mut rng = Rng::new(7);
        for t in 0..5 {
            let off = offering(&mut rng, 2);
            let sel = agent.select(t, &off).unwrap();
            let out = outcome_for(t, &sel, &[0.1, 0.2]);
            agent.observe(&out).unwrap();
        }
        assert_eq!(agent.design_state(0).update_count(), 5);
        assert_eq!(agent.design_state(1).update_count(), 5);
        assert_eq!(agent.shared_design_state().update_count(), 5);
        assert_eq!(agent.history_len(), 5);
    }

    #[test]
    fn training_branches_follow_sub_reward_availability() {
        let mut cfg = MufasaConfig::default();
        cfg.train_every = 5;
        cfg.steps = 5;
        let mut agent = MufasaAgent::new(small_spec(), 4, cfg.clone()).unwrap();
        let mut rng = Rng::new(8);
        for t in 0..10 {
            let off = offering(&mut rng, 2);
            let sel = agent.select(t, &off).unwrap();
            let out = outcome_for(t, &sel, &[0.1, 0.2]);
            agent.observe(&out).unwrap();
        }
        assert_eq!(agent.stats.all_epochs, 2);
        assert_eq!(agent.stats.partial_epochs, 0);

        // Mask one sub-reward: every epoch flips to the partial branch with
        // per-round sample sets of size (available + 1) = 2.
        let mut agent = MufasaAgent::new(small_spec(), 4, cfg).unwrap();
        let mut rng = Rng::new(8);
        for t in 0..10 {
            let off = offering(&mut rng, 2);
            let sel = agent.select(t, &off).unwrap();
            let mut out = outcome_for(t, &sel, &[0.1, 0.2]);
            out.sub_rewards.remove(&1);
            agent.observe(&out).unwrap();
        }
        assert_eq!(agent.stats.all_epochs, 0);
        assert_eq!(agent.stats.partial_epochs, 2);
        assert!(agent.stats.omega_sizes.iter().all(|s| *s == 2));
    }

    #[test]
    fn per_arm_caching_matches_explicit_combo_scoring() {
        // The same two-combination offering expressed as a product and as an
        // explicit list must produce identical scores.
        let spec = small_spec();
        let cfg = MufasaConfig::default();
        let mut product_agent = MufasaAgent::new(spec.clone(), 11, cfg.clone()).unwrap();
        let mut combo_agent = MufasaAgent::new(spec, 11, cfg).unwrap();
        let mut rng = Rng::new(12);
        let a0 = rng.unit_ball(3);
        let a1 = rng.unit_ball(3);
        let product = Offering::Product(vec![vec![a0.clone()], vec![a1.clone()]]);
        let combos = Offering::Combos(vec![Combination::new(vec![0, 0], vec![a0, a1])]);
        let sp = product_agent.select(0, &product).unwrap();
        let sc = combo_agent.select(0, &combos).unwrap();
        assert!((sp.predicted - sc.predicted).abs() < 1e-12);
        let (up, uc) = (sp.ucb.unwrap(), sc.ucb.unwrap());
        assert!((up.total - uc.total).abs() < 1e-12);
    }

    #[test]
    fn zero_bonus_greedy_with_exact_model_picks_the_oracle() {
        // Linear depth-1 components reproduce a separable linear value
        // exactly: f_k = ⟨a_k, x⟩ and the shared net adds them.
        let d = 3;
        let sub_spec = NetSpec::new(1, 4, d, 1);
        let spec = AssembledSpec::new(vec![sub_spec.clone(), sub_spec.clone()], 1, 4, false, 1.0)
            .unwrap();
        let mut rng = Rng::new(77);
        let a0 = rng.unit_vector(d);
        let a1 = rng.unit_vector(d);
        let scale = sub_spec.scale();
        let sub_params = |a: &Vec<f64>| {
            let w: Vec<f64> = a.iter().map(|v| v / scale).collect();
            NetParams::from_weights(&sub_spec, vec![Matrix::from_rows(1, d, w).unwrap()]).unwrap()
        };
        let shared_scale = spec.shared_spec().scale();
        let shared = NetParams::from_weights(
            spec.shared_spec(),
            vec![Matrix::from_rows(1, 2, vec![1.0 / shared_scale, 1.0 / shared_scale]).unwrap()],
        )
        .unwrap();
        let params = AssembledParams {
            shared,
            subs: vec![sub_params(&a0), sub_params(&a1)],
        };
        let mut cfg = MufasaConfig::default();
        cfg.ucb.bonus_scale = 0.0;
        cfg.train_every = 0;
        let mut agent = MufasaAgent::with_params(spec, params, cfg).unwrap();

        for t in 0..20 {
            let sets: Vec<Vec<Vec<f64>>> = (0..2)
                .map(|_| (0..5).map(|_| rng.unit_ball(d)).collect())
                .collect();
            // Oracle: maximize ⟨a_0,x⟩ + ⟨a_1,y⟩ over the product.
            let best0 = crate::agents::argmax(sets[0].iter().map(|x| dot(&a0, x))).unwrap();
            let best1 = crate::agents::argmax(sets[1].iter().map(|x| dot(&a1, x))).unwrap();
            let off = Offering::Product(sets);
            let sel = agent.select(t, &off).unwrap();
            assert_eq!(sel.combination.indices, vec![best0, best1]);
            let out = outcome_for(t, &sel, &[0.0, 0.0]);
            agent.observe(&out).unwrap();
        }
    }

    #[test]
    fn recompute_design_rebuilds_streams() {
        let mut cfg = MufasaConfig::default();
        cfg.train_every = 3;
        cfg.steps = 3;
        cfg.recompute_design = true;
        let mut agent = MufasaAgent::new(small_spec(), 13, cfg).unwrap();
        let mut rng = Rng::new(14);
        for t in 0..6 {
            let off = offering(&mut rng, 2);
            let sel = agent.select(t, &off).unwrap();
            let out = outcome_for(t, &sel, &[0.3, 0.1]);
            agent.observe(&out).unwrap();
        }
        // Streams were rebuilt from the 6-round history after the epoch at
        // round 6, so they must hold exactly 6 updates.
        assert_eq!(agent.design_state(0).update_count(), 6);
        assert_eq!(agent.shared_design_state().update_count(), 6);
    }
}
