//! Design-matrix streams and UCB bonuses.
//!
//! Each gradient stream maintains two regularized Gram matrices of scaled
//! parameter gradients: `A = λI + Σ g(x;θ_t) g(x;θ_t)ᵀ/m` over gradients at
//! the current parameters, and `A' = λI + Σ g(x;θ₀) g(x;θ₀)ᵀ/m` over
//! gradients at the initialization. Inverses are maintained incrementally
//! by rank-one updates and re-synchronized from a direct Cholesky inverse
//! every [`RESYNC_INTERVAL`] updates to bound drift without per-round cubic
//! cost.
//!
//! Gradients are accumulated at the parameters that were current when the
//! arm was selected (streaming). The literal definition re-evaluates all
//! historical gradients at today's parameters; agents expose a
//! `recompute_design` switch that rebuilds the streams after each training
//! epoch for small-horizon fidelity runs.
//!
//! Two bonus formulas are provided: the empirical two-term formula with a
//! decreasing mixing schedule (the practical default), and the
//! theoretical four-coefficient bound (vacuously wide at small widths,
//! kept for diagnostics).

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{self, Matrix};

/// Rank-one updates between direct re-inversions.
pub const RESYNC_INTERVAL: u64 = 500;

/// Incremented when `1 − η·m·λ` is negative and the geometric factor in the
/// first confidence coefficient is clamped to zero.
static GAMMA_CLAMPS: AtomicU64 = AtomicU64::new(0);

pub fn gamma_clamp_count() -> u64 {
    GAMMA_CLAMPS.load(Ordering::Relaxed)
}

/// One gradient stream's ridge state: maintained inverses of both Gram
/// matrices, their accumulators for re-synchronization, and the running
/// log-determinant of the initialization-gradient matrix.
#[derive(Debug, Clone)]
pub struct DesignState {
    a_acc: Matrix,
    a0_acc: Matrix,
    a_inv: Matrix,
    a0_inv: Matrix,
    lambda: f64,
    m_width: f64,
    update_count: u64,
    /// Absolute `log det A'`; starts at `P·log λ`.
    logdet_init: f64,
}

impl DesignState {
    pub fn new(dim: usize, lambda: f64, m_width: f64) -> Result<Self> {
        if lambda <= 0.0 || m_width <= 0.0 {
            return Err(Error::config("design state needs lambda > 0 and width > 0"));
        }
        let mut a = Matrix::identity(dim);
        a.scale(lambda);
        let mut inv = Matrix::identity(dim);
        inv.scale(1.0 / lambda);
        Ok(DesignState {
            a_acc: a.clone(),
            a0_acc: a,
            a_inv: inv.clone(),
            a0_inv: inv,
            lambda,
            m_width,
            update_count: 0,
            logdet_init: dim as f64 * lambda.ln(),
        })
    }

    pub fn dim(&self) -> usize {
        self.a_inv.rows()
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn m_width(&self) -> f64 {
        self.m_width
    }

    pub fn logdet_init(&self) -> f64 {
        self.logdet_init
    }

    /// `log(det A' / det λI)`, the ratio entering the second confidence
    /// coefficient.
    pub fn logdet_ratio(&self) -> f64 {
        (self.logdet_init - self.dim() as f64 * self.lambda.ln()).max(0.0)
    }

    pub fn a_inv(&self) -> &Matrix {
        &self.a_inv
    }

    pub fn a0_inv(&self) -> &Matrix {
        &self.a0_inv
    }

    /// Rank-one update of both streams with the round's gradients (current
    /// parameters and initialization). The log-determinant is advanced by
    /// the matrix determinant lemma before the inverse moves.
    pub fn update(&mut self, g_current: &[f64], g_init: &[f64]) -> Result<()> {
        let c = 1.0 / self.m_width;
        let quad0 = tensor::dot(g_init, &tensor::matvec(&self.a0_inv, g_init)?);
        self.logdet_init += (1.0 + c * quad0).ln();
        self.a_inv = tensor::sherman_morrison_update(&self.a_inv, g_current, c)?;
        self.a0_inv = tensor::sherman_morrison_update(&self.a0_inv, g_init, c)?;
        self.a_acc.add_outer(g_current, c);
        self.a0_acc.add_outer(g_init, c);
        self.update_count += 1;
        if self.update_count % RESYNC_INTERVAL == 0 {
            self.a_inv = tensor::direct_inverse(&self.a_acc)?;
            self.a0_inv = tensor::direct_inverse(&self.a0_acc)?;
        }
        Ok(())
    }

    /// Drops all accumulated gradients, returning to the fresh `λI` state.
    pub fn reset(&mut self) {
        let dim = self.dim();
        let mut a = Matrix::identity(dim);
        a.scale(self.lambda);
        let mut inv = Matrix::identity(dim);
        inv.scale(1.0 / self.lambda);
        self.a_acc = a.clone();
        self.a0_acc = a;
        self.a_inv = inv.clone();
        self.a0_inv = inv;
        self.update_count = 0;
        self.logdet_init = dim as f64 * self.lambda.ln();
    }

    /// `‖g/√m‖` under the current-parameter inverse.
    pub fn current_norm(&self, g: &[f64]) -> Result<f64> {
        let scaled: Vec<f64> = g.iter().map(|v| v / self.m_width.sqrt()).collect();
        tensor::quad_norm(&self.a_inv, &scaled)
    }

    /// `‖g/√m‖` under the initialization inverse.
    pub fn init_norm(&self, g: &[f64]) -> Result<f64> {
        let scaled: Vec<f64> = g.iter().map(|v| v / self.m_width.sqrt()).collect();
        tensor::quad_norm(&self.a0_inv, &scaled)
    }
}

/// Mixing schedule for the empirical bonus: the weight on the
/// initialization-gradient term, decreasing in the round (or pull) count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaSchedule {
    /// `1/√(t+1)`.
    InvSqrt,
    /// `min(1, 1/ln(t+2))`.
    InvLog,
    /// A fixed weight in `[0, 1]`.
    Constant(f64),
}

impl LambdaSchedule {
    pub fn weight(&self, t: u64) -> f64 {
        match self {
            LambdaSchedule::InvSqrt => 1.0 / ((t + 1) as f64).sqrt(),
            LambdaSchedule::InvLog => (1.0 / ((t + 2) as f64).ln()).min(1.0),
            LambdaSchedule::Constant(c) => *c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let LambdaSchedule::Constant(c) = self {
            if !(0.0..=1.0).contains(c) {
                return Err(Error::config("constant schedule weight must be in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Which bonus formula drives exploration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UcbMode {
    Empirical,
    Theoretical,
}

/// Exploration settings shared by all streams of one agent.
#[derive(Debug, Clone)]
pub struct UcbConfig {
    pub mode: UcbMode,
    /// Failure probability δ; the per-stream coefficient uses δ/(K+1).
    pub delta: f64,
    /// Norm bound on the (scaled) ground-truth parameter.
    pub s_bound: f64,
    pub schedule: LambdaSchedule,
    /// Stand-in for the unspecified absolute constant inside the first
    /// coefficient's `O(L)` term.
    pub c_l: f64,
    pub c1: f64,
    pub c2: f64,
    /// Learning rate and step count entering the first coefficient.
    pub eta: f64,
    pub steps: usize,
    /// Multiplies the final bonus; zero disables exploration entirely.
    pub bonus_scale: f64,
}

impl Default for UcbConfig {
    fn default() -> Self {
        UcbConfig {
            mode: UcbMode::Empirical,
            delta: 0.1,
            s_bound: 1.0,
            schedule: LambdaSchedule::InvSqrt,
            c_l: 1.0,
            c1: 1.0,
            c2: 1.0,
            eta: 0.01,
            steps: 100,
            bonus_scale: 1.0,
        }
    }
}

impl UcbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.delta && self.delta < 1.0) {
            return Err(Error::config("delta must lie in (0, 1)"));
        }
        self.schedule.validate()
    }
}

/// Two-term empirical bonus:
/// `(1−w)·‖g_t/√m‖_{A⁻¹} + w·‖g₀/√m‖_{A'⁻¹}` with `w` from the schedule.
pub fn empirical_bonus(
    state: &DesignState,
    g_current: &[f64],
    g_init: &[f64],
    weight: f64,
) -> Result<f64> {
    debug_assert!((0.0..=1.0).contains(&weight));
    let current = if weight < 1.0 {
        state.current_norm(g_current)?
    } else {
        0.0
    };
    let init = if weight > 0.0 {
        state.init_norm(g_init)?
    } else {
        0.0
    };
    Ok((1.0 - weight) * current + weight * init)
}

/// The four coefficients of the theoretical bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaTerms {
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
    pub g4: f64,
}

/// Evaluates the four confidence coefficients:
///
/// - `γ₁ = (λ + t·c_L·L)·(1 − ηmλ)^{J/2}·√(t/λ) + 1`
/// - `γ₂ = √(log(det A'/det λI) − 2·log δ) + √λ·S`
/// - `γ₃ = C₂·m^{−1/6}·√(log m)·t^{1/6}·λ^{−7/6}·L^{7/2}`
/// - `γ₄ = C₁·m^{−1/6}·√(log m)·t^{2/3}·λ^{−2/3}·L³`
///
/// The caller supplies the δ already divided among the streams.
pub fn gamma_terms(
    cfg: &UcbConfig,
    t: u64,
    logdet_ratio: f64,
    width: usize,
    depth: usize,
    lambda: f64,
) -> Result<GammaTerms> {
    if width <= 1 {
        return Err(Error::config("gamma terms need width > 1"));
    }
    if logdet_ratio < 0.0 {
        return Err(Error::contract("logdet ratio must be non-negative"));
    }
    let m = width as f64;
    let l = depth as f64;
    let tf = t as f64;
    let base = 1.0 - cfg.eta * m * lambda;
    let geometric = if base < 0.0 {
        GAMMA_CLAMPS.fetch_add(1, Ordering::Relaxed);
        0.0
    } else {
        base.powf(cfg.steps as f64 / 2.0)
    };
    let g1 = (lambda + tf * cfg.c_l * l) * (geometric * (tf / lambda).sqrt()) + 1.0;
    let g2 = (logdet_ratio - 2.0 * cfg.delta.ln()).sqrt() + lambda.sqrt() * cfg.s_bound;
    let log_m = m.ln();
    let g3 = cfg.c2 * m.powf(-1.0 / 6.0) * log_m.sqrt() * tf.powf(1.0 / 6.0)
        / lambda.powf(7.0 / 6.0)
        * l.powf(3.5);
    let g4 = cfg.c1 * m.powf(-1.0 / 6.0) * log_m.sqrt() * tf.powf(2.0 / 3.0)
        / lambda.powf(2.0 / 3.0)
        * l.powi(3);
    Ok(GammaTerms { g1, g2, g3, g4 })
}

/// Four-term theoretical bonus:
/// `γ₁‖g_t/√m‖_{A⁻¹} + γ₂‖g₀/√m‖_{A'⁻¹} + γ₁γ₃ + γ₄`.
pub fn theoretical_bonus(
    state: &DesignState,
    g_current: &[f64],
    g_init: &[f64],
    gamma: &GammaTerms,
) -> Result<f64> {
    Ok(gamma.g1 * state.current_norm(g_current)?
        + gamma.g2 * state.init_norm(g_init)?
        + gamma.g1 * gamma.g3
        + gamma.g4)
}

/// Per-bandit and shared confidence terms with their weighted total.
#[derive(Debug, Clone, PartialEq)]
pub struct UcbBreakdown {
    pub per_bandit: Vec<f64>,
    pub shared: f64,
    pub total: f64,
}

/// Combines the per-bandit bonuses and the shared bonus:
/// `total = C̄·Σ_k B^k + B^F`.
pub fn ucb_total(per_bandit: &[f64], shared: f64, lipschitz: f64) -> Result<UcbBreakdown> {
    if shared < 0.0 || per_bandit.iter().any(|b| *b < 0.0) {
        return Err(Error::contract("confidence bonuses must be non-negative"));
    }
    let total = lipschitz * per_bandit.iter().sum::<f64>() + shared;
    Ok(UcbBreakdown {
        per_bandit: per_bandit.to_vec(),
        shared,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::norm2;

    #[test]
    fn fresh_state_invariants() {
        let s = DesignState::new(3, 4.0, 2.0).unwrap();
        assert_eq!(s.update_count(), 0);
        assert!((s.a_inv().get(0, 0) - 0.25).abs() < 1e-15);
        assert!((s.a0_inv().get(2, 2) - 0.25).abs() < 1e-15);
        assert!((s.logdet_init() - 3.0 * 4f64.ln()).abs() < 1e-12);
        assert_eq!(s.logdet_ratio(), 0.0);
    }

    #[test]
    fn zero_gradients_only_bump_the_count() {
        let mut s = DesignState::new(2, 1.0, 1.0).unwrap();
        let before = s.clone();
        s.update(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(s.update_count(), 1);
        assert_eq!(s.a_inv(), before.a_inv());
        assert_eq!(s.logdet_init(), before.logdet_init());
    }

    #[test]
    fn single_update_logdet_hand_case() {
        // λ=1, P=2, g_init=(1,0), m=1: A' = diag(2,1), log det = ln 2.
        let mut s = DesignState::new(2, 1.0, 1.0).unwrap();
        s.update(&[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((s.logdet_init() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn logdet_matches_direct_oracle_over_many_updates() {
        let mut s = DesignState::new(6, 0.5, 3.0).unwrap();
        let mut rng = Rng::new(2);
        for _ in 0..50 {
            let g = rng.gaussian_vec(6, 1.0);
            let g0 = rng.gaussian_vec(6, 1.0);
            s.update(&g, &g0).unwrap();
        }
        let direct = tensor::log_det(s_a0(&s)).unwrap();
        assert!(
            (s.logdet_init() - direct).abs() <= 1e-7,
            "running {} vs direct {direct}",
            s.logdet_init()
        );
    }

    fn s_a0(s: &DesignState) -> &Matrix {
        &s.a0_acc
    }

    #[test]
    fn resync_pins_inverse_to_accumulator() {
        let mut s = DesignState::new(4, 1.0, 1.0).unwrap();
        let mut rng = Rng::new(7);
        for _ in 0..(RESYNC_INTERVAL + 1) {
            let g = rng.gaussian_vec(4, 1.0);
            s.update(&g, &g).unwrap();
        }
        let exact = tensor::direct_inverse(&s.a_acc).unwrap();
        assert!(s.a_inv().max_abs_diff(&exact) < 1e-10);
    }

    #[test]
    fn empirical_bonus_fresh_state_is_schedule_free() {
        let s = DesignState::new(3, 2.0, 4.0).unwrap();
        let g = vec![0.5, -1.0, 2.0];
        let want = norm2(&g) / 4f64.sqrt() / 2f64.sqrt();
        for w in [0.0, 0.3, 1.0] {
            let b = empirical_bonus(&s, &g, &g, w).unwrap();
            assert!((b - want).abs() < 1e-12, "w={w}: {b} vs {want}");
        }
    }

    #[test]
    fn empirical_bonus_endpoints_pick_one_term() {
        let mut s = DesignState::new(2, 1.0, 1.0).unwrap();
        s.update(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        let g_t = vec![1.0, 0.0];
        let g_0 = vec![0.0, 1.0];
        let only_current = empirical_bonus(&s, &g_t, &g_0, 0.0).unwrap();
        assert!((only_current - s.current_norm(&g_t).unwrap()).abs() < 1e-15);
        let only_init = empirical_bonus(&s, &g_t, &g_0, 1.0).unwrap();
        assert!((only_init - s.init_norm(&g_0).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn schedule_weights() {
        assert_eq!(LambdaSchedule::InvSqrt.weight(0), 1.0);
        assert!((LambdaSchedule::InvSqrt.weight(3) - 0.5).abs() < 1e-15);
        assert_eq!(LambdaSchedule::InvLog.weight(0), 1.0); // clamped from 1/ln 2
        assert!(LambdaSchedule::InvLog.weight(10) < 1.0);
        assert_eq!(LambdaSchedule::Constant(0.25).weight(999), 0.25);
        assert!(LambdaSchedule::Constant(1.5).validate().is_err());
    }

    #[test]
    fn bonus_shrinks_exactly_on_repeated_direction() {
        // After n identical updates with g, the bonus along g is
        // ‖g‖ / √(m·(λ + n‖g‖²/m)).
        let lambda = 1.0;
        let m = 4.0;
        let g = vec![0.8, -0.6]; // ‖g‖ = 1
        let mut s = DesignState::new(2, lambda, m).unwrap();
        for n in 1..=20u64 {
            s.update(&g, &g).unwrap();
            let want = 1.0 / (m * (lambda + n as f64 * 1.0 / m)).sqrt();
            let got = s.current_norm(&g).unwrap();
            assert!((got - want).abs() < 1e-9, "n={n}: {got} vs {want}");
        }
    }

    #[test]
    fn gamma_limit_and_endpoint_cases() {
        let mut cfg = UcbConfig::default();
        cfg.eta = 0.01;
        cfg.steps = 100_000; // geometric factor underflows
        let g = gamma_terms(&cfg, 50, 3.0, 16, 2, 1.0).unwrap();
        assert!((g.g1 - 1.0).abs() < 1e-9, "g1 {}", g.g1);

        cfg.delta = 1.0 - 1e-15; // effectively δ = 1: −2 log δ ≈ 0
        cfg.s_bound = 2.0;
        let g = gamma_terms(&cfg, 10, 0.0, 16, 2, 4.0).unwrap();
        assert!((g.g2 - 2.0 * 2.0).abs() < 1e-6, "g2 {}", g.g2);
    }

    #[test]
    fn gamma_direct_substitution() {
        // m = e, t = 1, λ = 1, L = 1, C₁ = 1 → γ₄ = e^{−1/6}.
        let cfg = UcbConfig {
            c1: 1.0,
            ..UcbConfig::default()
        };
        // width must be an integer; e ≈ 2.718 is not, so check the formula
        // directly at width 3 against a hand evaluation too.
        let m = 3.0f64;
        let g = gamma_terms(&cfg, 1, 0.0, 3, 1, 1.0).unwrap();
        let want = m.powf(-1.0 / 6.0) * m.ln().sqrt();
        assert!((g.g4 - want).abs() < 1e-12);
        // And the e-based value from the formula itself:
        let e = std::f64::consts::E;
        let g4_at_e = e.powf(-1.0 / 6.0) * e.ln().sqrt();
        assert!((g4_at_e - 0.846481724890614).abs() < 1e-12);
    }

    #[test]
    fn gamma_clamps_negative_geometric_base() {
        let before = gamma_clamp_count();
        let cfg = UcbConfig {
            eta: 1.0,
            steps: 3,
            ..UcbConfig::default()
        };
        // 1 − ηmλ = 1 − 16 < 0 → clamped; γ₁ collapses to 1.
        let g = gamma_terms(&cfg, 5, 0.0, 16, 2, 1.0).unwrap();
        assert_eq!(g.g1, 1.0);
        assert!(gamma_clamp_count() > before);
    }

    #[test]
    fn theoretical_bonus_cases() {
        let s = DesignState::new(2, 1.0, 1.0).unwrap();
        let gamma = GammaTerms {
            g1: 2.0,
            g2: 3.0,
            g3: 0.5,
            g4: 0.25,
        };
        let floor = theoretical_bonus(&s, &[0.0, 0.0], &[0.0, 0.0], &gamma).unwrap();
        assert!((floor - (2.0 * 0.5 + 0.25)).abs() < 1e-15);

        let ones = GammaTerms {
            g1: 1.0,
            g2: 1.0,
            g3: 0.0,
            g4: 0.0,
        };
        let g = vec![1.0, 1.0];
        let b = theoretical_bonus(&s, &g, &g, &ones).unwrap();
        assert!((b - 2.0 * norm2(&g)).abs() < 1e-12); // λ=1, m=1: each term ‖g‖
    }

    #[test]
    fn theoretical_bonus_monotone_in_coefficients() {
        let mut s = DesignState::new(3, 1.0, 2.0).unwrap();
        let mut rng = Rng::new(44);
        for _ in 0..5 {
            let g = rng.gaussian_vec(3, 1.0);
            s.update(&g, &g).unwrap();
        }
        let g_t = rng.gaussian_vec(3, 1.0);
        let g_0 = rng.gaussian_vec(3, 1.0);
        let base = GammaTerms {
            g1: 1.0,
            g2: 1.0,
            g3: 0.5,
            g4: 0.5,
        };
        let b0 = theoretical_bonus(&s, &g_t, &g_0, &base).unwrap();
        for bump in 0..4 {
            let mut g = base;
            match bump {
                0 => g.g1 += 0.5,
                1 => g.g2 += 0.5,
                2 => g.g3 += 0.5,
                _ => g.g4 += 0.5,
            }
            let b = theoretical_bonus(&s, &g_t, &g_0, &g).unwrap();
            assert!(b >= b0, "bonus not monotone in coefficient {bump}");
        }
    }

    #[test]
    fn ucb_total_structure() {
        let b = ucb_total(&[0.1, 0.2], 0.3, 1.0).unwrap();
        assert!((b.total - 0.6).abs() < 1e-15);

        let z = ucb_total(&[0.0, 0.0], 0.0, 2.0).unwrap();
        assert_eq!(z.total, 0.0);

        let weighted = ucb_total(&[0.1, 0.2], 0.3, 2.0).unwrap();
        assert!((weighted.total - 0.9).abs() < 1e-15);

        assert!(ucb_total(&[-0.1], 0.0, 1.0).is_err());
    }
}
