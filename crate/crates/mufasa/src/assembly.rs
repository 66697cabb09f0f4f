//! The assembled reward model: one sub-network per bandit feeding a shared
//! combiner network.
//!
//! For a combination `X = (x¹, …, x^K)` the model computes
//! `F(concat(f_1(x¹), …, f_K(x^K)))`. In `zero_init_mode` (the default) the
//! concatenated sub-outputs are duplicated before entering `F`; combined
//! with the antisymmetric head of the shared net this makes the assembled
//! output exactly zero at initialization for *every* input, not just
//! mirrored ones.
//!
//! Two training procedures are provided. When all sub-rewards are observed,
//! [`train_all`] fits each sub-network on its own `(arm, sub-reward)` pairs
//! and the shared net on `(sub-reward vector, final reward)` pairs. Note the
//! shared net is trained on *true* sub-reward vectors while selection feeds
//! it the learned sub-network outputs; the two input conventions coincide
//! only as the sub-networks converge. With missing sub-rewards,
//! [`build_partial_samples`] turns each round into up to `K+1` zero-padded
//! training pairs whose targets are Lipschitz upper bounds, and
//! [`train_partial`] descends the end-to-end loss through the whole model.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mlp::{self, NetParams, NetSpec};
use crate::tensor::Matrix;

/// One arm choice per bandit: the chosen indices and the resolved feature
/// vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Combination {
    pub indices: Vec<usize>,
    pub features: Vec<Vec<f64>>,
}

impl Combination {
    pub fn new(indices: Vec<usize>, features: Vec<Vec<f64>>) -> Self {
        Combination { indices, features }
    }
}

/// Architecture of the assembled model.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledSpec {
    sub_specs: Vec<NetSpec>,
    shared: NetSpec,
    /// Duplicate the sub-outputs before the shared net, forcing the
    /// assembled output to zero at initialization for every input. When
    /// off, the shared net sees the plain concatenation and only mirrored
    /// inputs cancel.
    pub zero_init_mode: bool,
    /// Lipschitz bound of the final-reward combiner; scales the per-bandit
    /// confidence terms and the partial-training targets.
    pub lipschitz: f64,
}

impl AssembledSpec {
    pub fn new(
        sub_specs: Vec<NetSpec>,
        shared_depth: usize,
        shared_width: usize,
        zero_init_mode: bool,
        lipschitz: f64,
    ) -> Result<Self> {
        if sub_specs.is_empty() {
            return Err(Error::config("need at least one bandit"));
        }
        if lipschitz <= 0.0 {
            return Err(Error::config("lipschitz bound must be positive"));
        }
        let m_hat = sub_specs[0].out_dim;
        for s in &sub_specs {
            s.validate()?;
            if s.out_dim != m_hat {
                return Err(Error::config("all sub-networks must share out_dim"));
            }
        }
        let k = sub_specs.len();
        let in_dim = m_hat * k * if zero_init_mode { 2 } else { 1 };
        let shared = NetSpec::new(shared_depth, shared_width, in_dim, 1).with_antisymmetric_head();
        shared.validate()?;
        Ok(AssembledSpec {
            sub_specs,
            shared,
            zero_init_mode,
            lipschitz,
        })
    }

    pub fn bandits(&self) -> usize {
        self.sub_specs.len()
    }

    /// Sub-network output width `m̂`.
    pub fn m_hat(&self) -> usize {
        self.sub_specs[0].out_dim
    }

    pub fn sub_spec(&self, k: usize) -> &NetSpec {
        &self.sub_specs[k]
    }

    pub fn sub_specs(&self) -> &[NetSpec] {
        &self.sub_specs
    }

    pub fn shared_spec(&self) -> &NetSpec {
        &self.shared
    }

    /// Input to the shared net for given concatenated sub-outputs.
    pub fn shared_input(&self, sub_outputs: &[f64]) -> Vec<f64> {
        if self.zero_init_mode {
            let mut u = Vec::with_capacity(sub_outputs.len() * 2);
            u.extend_from_slice(sub_outputs);
            u.extend_from_slice(sub_outputs);
            u
        } else {
            sub_outputs.to_vec()
        }
    }
}

/// Full parameter collection: shared-net weights plus one set per bandit.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledParams {
    pub shared: NetParams,
    pub subs: Vec<NetParams>,
}

/// Initializes every component; per-component streams are derived from the
/// seed so the whole collection is reproducible.
pub fn init_assembled(spec: &AssembledSpec, seed: u64) -> Result<AssembledParams> {
    let shared = mlp::init_params(spec.shared_spec(), seed ^ 0x5ea1)?;
    let subs = spec
        .sub_specs
        .iter()
        .enumerate()
        .map(|(k, s)| mlp::init_params(s, seed.wrapping_add(0x10_0000 * (k as u64 + 1))))
        .collect::<Result<Vec<_>>>()?;
    Ok(AssembledParams { shared, subs })
}

/// Outputs of all sub-networks, concatenated.
pub fn sub_outputs(
    spec: &AssembledSpec,
    params: &AssembledParams,
    features: &[Vec<f64>],
) -> Result<Vec<f64>> {
    if features.len() != spec.bandits() {
        return Err(Error::DimensionMismatch {
            context: "assembled forward",
            expected: spec.bandits(),
            got: features.len(),
        });
    }
    let mut out = Vec::with_capacity(spec.bandits() * spec.m_hat());
    for (k, x) in features.iter().enumerate() {
        out.extend(mlp::forward(&spec.sub_specs[k], &params.subs[k], x)?);
    }
    Ok(out)
}

/// Shared-net output for already-computed sub-outputs.
pub fn shared_forward(
    spec: &AssembledSpec,
    params: &AssembledParams,
    sub_outputs: &[f64],
) -> Result<f64> {
    let u = spec.shared_input(sub_outputs);
    mlp::forward_scalar(spec.shared_spec(), &params.shared, &u)
}

/// Joint forward pass of the assembled model.
pub fn assembled_forward(
    spec: &AssembledSpec,
    params: &AssembledParams,
    features: &[Vec<f64>],
) -> Result<f64> {
    let f = sub_outputs(spec, params, features)?;
    shared_forward(spec, params, &f)
}

/// Gradient of sub-network `k`'s scalar output with respect to its own
/// parameters, at the given arm. By construction it does not depend on any
/// other bandit's input, and it is *not* chain-ruled through the shared net.
pub fn grad_sub(
    spec: &AssembledSpec,
    params: &AssembledParams,
    x: &[f64],
    k: usize,
) -> Result<Vec<f64>> {
    if spec.m_hat() != 1 {
        return Err(Error::Unsupported(
            "per-bandit confidence gradients need m_hat = 1".into(),
        ));
    }
    mlp::grad_params(&spec.sub_specs[k], &params.subs[k], x)
}

/// Gradient of the shared net's output with respect to the shared
/// parameters, at the given concatenated sub-outputs.
pub fn grad_shared(
    spec: &AssembledSpec,
    params: &AssembledParams,
    sub_outputs: &[f64],
) -> Result<Vec<f64>> {
    let u = spec.shared_input(sub_outputs);
    mlp::grad_params(spec.shared_spec(), &params.shared, &u)
}

/// One training pair for the end-to-end loss: `K` (possibly zero-padded)
/// arm vectors and a final-reward target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub inputs: Vec<Vec<f64>>,
    pub target: f64,
}

/// A completed round as stored in the agent's history.
#[derive(Debug, Clone)]
pub struct RoundSample {
    pub features: Vec<Vec<f64>>,
    pub final_reward: f64,
    /// Observed sub-rewards, keyed by bandit index; may be partial.
    pub sub_rewards: BTreeMap<usize, f64>,
}

/// Expands one round into training pairs: the full combination with its
/// final reward, plus one zero-padded single-bandit pair per available
/// sub-reward, targeted at `lipschitz · r^k` (an upper bound on the
/// unobserved final reward of the padded combination).
pub fn build_partial_samples(
    features: &[Vec<f64>],
    final_reward: f64,
    available: &BTreeMap<usize, f64>,
    lipschitz: f64,
) -> Vec<TrainingSample> {
    let mut samples = Vec::with_capacity(available.len() + 1);
    samples.push(TrainingSample {
        inputs: features.to_vec(),
        target: final_reward,
    });
    for (&k, &r) in available {
        let inputs: Vec<Vec<f64>> = features
            .iter()
            .enumerate()
            .map(|(j, x)| {
                if j == k {
                    x.clone()
                } else {
                    vec![0.0; x.len()]
                }
            })
            .collect();
        samples.push(TrainingSample {
            inputs,
            target: lipschitz * r,
        });
    }
    samples
}

/// Settings shared by both training procedures; the regularizer width
/// factor is chosen per component.
#[derive(Debug, Clone, Copy)]
pub struct JointTrainConfig {
    pub eta: f64,
    pub steps: usize,
    pub lambda: f64,
    pub per_sample_step: bool,
}

impl JointTrainConfig {
    pub fn new(eta: f64, steps: usize, lambda: f64) -> Self {
        JointTrainConfig {
            eta,
            steps,
            lambda,
            per_sample_step: true,
        }
    }

    fn for_net(&self, reg_width: f64) -> mlp::TrainConfig {
        mlp::TrainConfig {
            eta: self.eta,
            steps: self.steps,
            lambda: self.lambda,
            reg_width,
            per_sample_step: self.per_sample_step,
        }
    }
}

/// Component-wise training when every round carries all `K` sub-rewards:
/// each sub-network fits its `(arm, sub-reward)` pairs, and the shared net
/// fits `(sub-reward vector, final reward)` pairs.
pub fn train_all(
    spec: &AssembledSpec,
    params: &AssembledParams,
    history: &[RoundSample],
    cfg: &JointTrainConfig,
) -> Result<AssembledParams> {
    let k_total = spec.bandits();
    for (i, round) in history.iter().enumerate() {
        if round.sub_rewards.len() != k_total
            || (0..k_total).any(|k| !round.sub_rewards.contains_key(&k))
        {
            return Err(Error::contract(format!(
                "round {i} is missing sub-rewards; use the partial trainer"
            )));
        }
    }
    let mut out = params.clone();
    if history.is_empty() {
        return Ok(out);
    }
    for k in 0..k_total {
        let inputs: Vec<Vec<f64>> = history.iter().map(|r| r.features[k].clone()).collect();
        let targets: Vec<f64> = history.iter().map(|r| r.sub_rewards[&k]).collect();
        let net_cfg = cfg.for_net(spec.sub_specs[k].width as f64);
        out.subs[k] =
            mlp::train(&spec.sub_specs[k], &out.subs[k], &inputs, &targets, &net_cfg)?.params;
    }
    // The shared net is fitted on true sub-reward vectors (selection feeds
    // it learned sub-outputs instead; the input convention matches per mode).
    let inputs: Vec<Vec<f64>> = history
        .iter()
        .map(|r| {
            let rewards: Vec<f64> = (0..k_total).map(|k| r.sub_rewards[&k]).collect();
            spec.shared_input(&rewards)
        })
        .collect();
    let targets: Vec<f64> = history.iter().map(|r| r.final_reward).collect();
    let net_cfg = cfg.for_net(spec.shared_spec().width as f64);
    out.shared = mlp::train(spec.shared_spec(), &out.shared, &inputs, &targets, &net_cfg)?.params;
    Ok(out)
}

struct JointGrad {
    shared: Vec<Matrix>,
    subs: Vec<Vec<Matrix>>,
}

impl JointGrad {
    fn zeros(spec: &AssembledSpec) -> Self {
        let zeros_for = |s: &NetSpec| -> Vec<Matrix> {
            s.layer_dims()
                .iter()
                .map(|(r, c)| Matrix::zeros(*r, *c))
                .collect()
        };
        JointGrad {
            shared: zeros_for(spec.shared_spec()),
            subs: spec.sub_specs.iter().map(zeros_for).collect(),
        }
    }
}

fn joint_loss(
    spec: &AssembledSpec,
    params: &AssembledParams,
    anchor: &AssembledParams,
    samples: &[TrainingSample],
    reg: f64,
) -> Result<f64> {
    let mut loss = 0.0;
    for s in samples {
        let out = assembled_forward(spec, params, &s.inputs)?;
        let resid = out - s.target;
        loss += 0.5 * resid * resid;
    }
    let reg_term = |w: &[Matrix], w0: &[Matrix]| -> f64 {
        w.iter()
            .zip(w0)
            .map(|(a, b)| {
                a.data()
                    .iter()
                    .zip(b.data())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
            })
            .sum()
    };
    loss += 0.5 * reg * reg_term(params.shared.weights(), anchor.shared.theta0());
    for (p, a) in params.subs.iter().zip(&anchor.subs) {
        loss += 0.5 * reg * reg_term(p.weights(), a.theta0());
    }
    Ok(loss)
}

/// Gradient of the end-to-end square loss (data term only) for one sample,
/// accumulated into `acc`. Returns the residual.
fn accumulate_joint_grad(
    spec: &AssembledSpec,
    params: &AssembledParams,
    sample: &TrainingSample,
    acc: &mut JointGrad,
) -> Result<f64> {
    let k_total = spec.bandits();
    let m_hat = spec.m_hat();
    // Forward through the subs with caches kept for the backward sweep.
    let mut caches = Vec::with_capacity(k_total);
    let mut f = Vec::with_capacity(k_total * m_hat);
    for (k, x) in sample.inputs.iter().enumerate() {
        let cache = mlp::forward_cached(&spec.sub_specs[k], params.subs[k].weights(), x)?;
        f.extend_from_slice(&cache.output);
        caches.push(cache);
    }
    let u = spec.shared_input(&f);
    let shared_cache = mlp::forward_cached(spec.shared_spec(), params.shared.weights(), &u)?;
    let resid = shared_cache.output[0] - sample.target;
    if resid == 0.0 {
        return Ok(0.0);
    }
    let (shared_grads, input_grad) = mlp::backprop(
        spec.shared_spec(),
        params.shared.weights(),
        &shared_cache,
        &[resid],
    );
    for (a, g) in acc.shared.iter_mut().zip(&shared_grads) {
        a.add_assign(g);
    }
    // Chain into each sub-network; with duplicated inputs both halves of the
    // shared input carry gradient for the same sub-output slot.
    for k in 0..k_total {
        let mut cotangent = vec![0.0; m_hat];
        for (j, c) in cotangent.iter_mut().enumerate() {
            let slot = k * m_hat + j;
            *c = input_grad[slot];
            if spec.zero_init_mode {
                *c += input_grad[k_total * m_hat + slot];
            }
        }
        if cotangent.iter().all(|c| *c == 0.0) {
            continue;
        }
        let (sub_grads, _) = mlp::backprop(
            &spec.sub_specs[k],
            params.subs[k].weights(),
            &caches[k],
            &cotangent,
        );
        for (a, g) in acc.subs[k].iter_mut().zip(&sub_grads) {
            a.add_assign(g);
        }
    }
    Ok(resid)
}

/// End-to-end training on accumulated zero-padded samples: full-batch
/// gradient descent on
/// `L(θ) = Σ (𝓕(X;θ) − R)²/2 + m₂·λ·‖θ − θ₀‖²/2`
/// updating the shared net and every sub-network jointly.
pub fn train_partial(
    spec: &AssembledSpec,
    params: &AssembledParams,
    samples: &[TrainingSample],
    cfg: &JointTrainConfig,
) -> Result<AssembledParams> {
    let mut current = params.clone();
    if samples.is_empty() || cfg.steps == 0 {
        return Ok(current);
    }
    let reg = spec.shared_spec().width as f64 * cfg.lambda;
    let step_scale = if cfg.per_sample_step {
        cfg.eta / samples.len() as f64
    } else {
        cfg.eta
    };
    let anchor = params.clone();
    for step in 0..cfg.steps {
        let mut grad = JointGrad::zeros(spec);
        for s in samples {
            accumulate_joint_grad(spec, &current, s, &mut grad)?;
        }
        let apply = |p: &mut NetParams, g: &[Matrix]| {
            let theta0 = p.theta0().to_vec();
            for ((w, w0), gi) in p.weights_mut().iter_mut().zip(&theta0).zip(g) {
                let wd = w.data_mut();
                for ((a, b), gv) in wd.iter_mut().zip(w0.data()).zip(gi.data()) {
                    *a -= step_scale * (gv + reg * (*a - b));
                }
            }
        };
        apply(&mut current.shared, &grad.shared);
        for (k, g) in grad.subs.iter().enumerate() {
            apply(&mut current.subs[k], g);
        }
        let loss = joint_loss(spec, &current, &anchor, samples, reg)?;
        if !loss.is_finite() || loss > 1e12 {
            return Err(Error::Divergence { loss, step });
        }
    }
    Ok(current)
}

/// Writes the shared and per-bandit component files plus a manifest naming
/// them.
pub fn save_assembled(dir: &Path, spec: &AssembledSpec, params: &AssembledParams) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = fs::File::create(dir.join("manifest.txt"))?;
    writeln!(manifest, "mufasa-assembly v1")?;
    writeln!(manifest, "bandits {}", spec.bandits())?;
    writeln!(
        manifest,
        "zero_init_mode {}",
        if spec.zero_init_mode { 1 } else { 0 }
    )?;
    writeln!(manifest, "lipschitz {:.16e}", spec.lipschitz)?;
    writeln!(manifest, "shared shared.net")?;
    for k in 0..spec.bandits() {
        writeln!(manifest, "sub {k} sub{k}.net")?;
    }
    let shared_file = fs::File::create(dir.join("shared.net"))?;
    mlp::save_params(spec.shared_spec(), &params.shared, shared_file)?;
    for k in 0..spec.bandits() {
        let f = fs::File::create(dir.join(format!("sub{k}.net")))?;
        mlp::save_params(&spec.sub_specs[k], &params.subs[k], f)?;
    }
    Ok(())
}

/// Reads a manifest directory written by [`save_assembled`].
pub fn load_assembled(dir: &Path) -> Result<(AssembledSpec, AssembledParams)> {
    let manifest = fs::File::open(dir.join("manifest.txt"))?;
    let mut lines = BufReader::new(manifest).lines();
    let mut next = || -> Result<String> {
        lines
            .next()
            .transpose()
            .map_err(Error::Io)?
            .ok_or_else(|| Error::parse(0, "truncated manifest"))
    };
    if next()?.trim() != "mufasa-assembly v1" {
        return Err(Error::parse(1, "not a mufasa-assembly v1 manifest"));
    }
    let field = |line: String, key: &str| -> Result<String> {
        line.strip_prefix(key)
            .map(|v| v.trim().to_string())
            .ok_or_else(|| Error::parse(0, format!("expected manifest field {key}")))
    };
    let bandits: usize = field(next()?, "bandits")?
        .parse()
        .map_err(|_| Error::parse(0, "bad bandit count"))?;
    let zero_init = field(next()?, "zero_init_mode")? == "1";
    let lipschitz: f64 = field(next()?, "lipschitz")?
        .parse()
        .map_err(|_| Error::parse(0, "bad lipschitz value"))?;
    let shared_name = field(next()?, "shared")?;
    let shared_file = fs::File::open(dir.join(&shared_name))?;
    let (shared_spec, shared) = mlp::load_params(BufReader::new(shared_file))?;
    let mut sub_specs = Vec::with_capacity(bandits);
    let mut subs = Vec::with_capacity(bandits);
    for k in 0..bandits {
        let line = next()?;
        let name = field(line, &format!("sub {k}"))?;
        let f = fs::File::open(dir.join(&name))?;
        let (s, p) = mlp::load_params(BufReader::new(f))?;
        sub_specs.push(s);
        subs.push(p);
    }
    let spec = AssembledSpec::new(
        sub_specs,
        shared_spec.depth,
        shared_spec.width,
        zero_init,
        lipschitz,
    )?;
    if spec.shared_spec() != &shared_spec {
        return Err(Error::parse(0, "shared spec inconsistent with manifest"));
    }
    Ok((spec, AssembledParams { shared, subs }))
}
