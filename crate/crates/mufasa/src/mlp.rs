//! Bias-free fully-connected ReLU networks.
//!
//! The network computes `f(x) = √m · W_L σ(W_{L−1} σ(… σ(W_1 x)))` with no
//! bias terms anywhere, so `f(0) = 0`. Hidden layers are initialized with a
//! mirrored block-diagonal scheme; with an antisymmetric final layer
//! `(wᵀ, −wᵀ)` the network outputs exactly zero on inputs whose upper half
//! equals the lower half. Gradients are analytic; the ReLU subgradient at
//! exactly zero is taken to be zero.
//!
//! Parameters flatten head-first: `W_L, W_{L−1}, …, W_1`, each row-major.
//! That order is versioned in the serialization header so design matrices
//! built on flattened gradients are reproducible across runs.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Matrix;

/// Identifier of the canonical parameter order used by [`flatten_weights`].
pub const FLATTEN_ORDER: &str = "head-first-row-major-v1";

/// Training diverged once the loss passes this bound.
const DIVERGENCE_GUARD: f64 = 1e12;

/// Architecture of one network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetSpec {
    /// Number of weight matrices; `depth = 1` is a purely linear map.
    pub depth: usize,
    /// Hidden width `m`; must be even for the mirrored block initialization.
    pub width: usize,
    pub in_dim: usize,
    pub out_dim: usize,
    /// Initialize the final layer as `(wᵀ, −wᵀ)`; requires `out_dim = 1`.
    pub antisymmetric_head: bool,
}

impl NetSpec {
    pub fn new(depth: usize, width: usize, in_dim: usize, out_dim: usize) -> Self {
        NetSpec {
            depth,
            width,
            in_dim,
            out_dim,
            antisymmetric_head: false,
        }
    }

    pub fn with_antisymmetric_head(mut self) -> Self {
        self.antisymmetric_head = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::config("net depth must be at least 1"));
        }
        if self.width < 2 || self.width % 2 != 0 {
            return Err(Error::config(format!(
                "net width must be even and >= 2, got {}",
                self.width
            )));
        }
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::config("net dimensions must be positive"));
        }
        if self.antisymmetric_head && self.out_dim != 1 {
            return Err(Error::config("antisymmetric head requires a scalar output"));
        }
        Ok(())
    }

    /// Output scaling factor `√m`.
    pub fn scale(&self) -> f64 {
        (self.width as f64).sqrt()
    }

    /// `(rows, cols)` of `W_1 … W_L`.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        if self.depth == 1 {
            return vec![(self.out_dim, self.in_dim)];
        }
        let mut dims = vec![(self.width, self.in_dim)];
        for _ in 1..self.depth - 1 {
            dims.push((self.width, self.width));
        }
        dims.push((self.out_dim, self.width));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(r, c)| r * c).sum()
    }
}

/// Weights of one network plus the frozen snapshot of their initialization,
/// which anchors the ridge regularizer and the initialization-gradient
/// design stream.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    weights: Vec<Matrix>,
    theta0: Vec<Matrix>,
    seed: u64,
}

impl NetParams {
    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn theta0(&self) -> &[Matrix] {
        &self.theta0
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// View of the initialization as a network of its own (for gradients at
    /// the anchor point).
    pub fn at_init(&self) -> NetParams {
        NetParams {
            weights: self.theta0.clone(),
            theta0: self.theta0.clone(),
            seed: self.seed,
        }
    }

    /// Builds parameters from explicit weight matrices; the snapshot is
    /// taken from the supplied weights.
    pub fn from_weights(spec: &NetSpec, weights: Vec<Matrix>) -> Result<Self> {
        let dims = spec.layer_dims();
        if weights.len() != dims.len() {
            return Err(Error::config(format!(
                "expected {} weight matrices, got {}",
                dims.len(),
                weights.len()
            )));
        }
        for (w, (r, c)) in weights.iter().zip(&dims) {
            if w.rows() != *r || w.cols() != *c {
                return Err(Error::config(format!(
                    "weight shape {}x{} does not match spec {}x{}",
                    w.rows(),
                    w.cols(),
                    r,
                    c
                )));
            }
        }
        Ok(NetParams {
            theta0: weights.clone(),
            weights,
            seed: 0,
        })
    }

    pub fn flat(&self) -> Vec<f64> {
        flatten_weights(&self.weights)
    }

    pub fn theta0_flat(&self) -> Vec<f64> {
        flatten_weights(&self.theta0)
    }

    /// Replaces the current weights from a flat vector in canonical order.
    /// The initialization snapshot is left untouched.
    pub fn set_flat(&mut self, spec: &NetSpec, flat: &[f64]) -> Result<()> {
        self.weights = unflatten_weights(spec, flat)?;
        Ok(())
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }
}

/// Flattens weights head-first (`W_L … W_1`), each matrix row-major.
pub fn flatten_weights(weights: &[Matrix]) -> Vec<f64> {
    let mut out = Vec::with_capacity(weights.iter().map(|w| w.data().len()).sum());
    for w in weights.iter().rev() {
        out.extend_from_slice(w.data());
    }
    out
}

/// Inverse of [`flatten_weights`] for the given spec.
pub fn unflatten_weights(spec: &NetSpec, flat: &[f64]) -> Result<Vec<Matrix>> {
    let dims = spec.layer_dims();
    let total: usize = dims.iter().map(|(r, c)| r * c).sum();
    if flat.len() != total {
        return Err(Error::DimensionMismatch {
            context: "unflatten_weights",
            expected: total,
            got: flat.len(),
        });
    }
    let mut chunks = Vec::with_capacity(dims.len());
    let mut offset = 0;
    for (r, c) in dims.iter().rev() {
        let len = r * c;
        chunks.push(Matrix::from_rows(
            *r,
            *c,
            flat[offset..offset + len].to_vec(),
        )?);
        offset += len;
    }
    chunks.reverse();
    Ok(chunks)
}

/// Mirrored block matrix: the same Gaussian block `w` sits in the upper-left
/// and lower-right quadrants, zeros elsewhere. Odd dimensions reuse the
/// leading rows/columns of `w` for the (smaller) second block.
fn block_matrix(rows: usize, cols: usize, std_dev: f64, rng: &mut Rng) -> Matrix {
    let r0 = rows.div_ceil(2);
    let c0 = cols.div_ceil(2);
    let w = rng.gaussian_vec(r0 * c0, std_dev);
    let mut m = Matrix::zeros(rows, cols);
    for i in 0..r0 {
        for j in 0..c0 {
            m.set(i, j, w[i * c0 + j]);
        }
    }
    for i in 0..rows - r0 {
        for j in 0..cols - c0 {
            m.set(r0 + i, c0 + j, w[i * c0 + j]);
        }
    }
    m
}

/// Gaussian initialization: hidden layers (and non-antisymmetric heads) are
/// mirrored blocks with entries `N(0, 4/m)`; an antisymmetric head is
/// `(wᵀ, −wᵀ)` with `w ~ N(0, 2/m)`. Deterministic given the seed.
pub fn init_params(spec: &NetSpec, seed: u64) -> Result<NetParams> {
    spec.validate()?;
    let mut rng = Rng::derive(seed, "net-init");
    let block_std = (4.0 / spec.width as f64).sqrt();
    let dims = spec.layer_dims();
    let mut weights = Vec::with_capacity(dims.len());
    for (l, (rows, cols)) in dims.iter().enumerate() {
        let is_head = l == dims.len() - 1;
        if is_head && spec.antisymmetric_head {
            let half = cols / 2;
            let w = rng.gaussian_vec(half, (2.0 / spec.width as f64).sqrt());
            let mut data = Vec::with_capacity(*cols);
            data.extend_from_slice(&w);
            data.extend(w.iter().map(|v| -v));
            weights.push(Matrix::from_rows(1, *cols, data)?);
        } else {
            weights.push(block_matrix(*rows, *cols, block_std, &mut rng));
        }
    }
    Ok(NetParams {
        theta0: weights.clone(),
        weights,
        seed,
    })
}

pub(crate) struct ForwardCache {
    /// `z_0 = x, z_1 = σ(W_1 x), …, z_{L−1}`.
    pub(crate) activations: Vec<Vec<f64>>,
    pub(crate) output: Vec<f64>,
}

pub(crate) fn forward_cached(spec: &NetSpec, weights: &[Matrix], x: &[f64]) -> Result<ForwardCache> {
    if x.len() != spec.in_dim {
        return Err(Error::DimensionMismatch {
            context: "mlp forward",
            expected: spec.in_dim,
            got: x.len(),
        });
    }
    let mut activations = Vec::with_capacity(spec.depth);
    activations.push(x.to_vec());
    let mut z = x.to_vec();
    for w in &weights[..spec.depth - 1] {
        let mut a = crate::tensor::matvec(w, &z)?;
        for v in a.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        activations.push(a.clone());
        z = a;
    }
    let mut output = crate::tensor::matvec(&weights[spec.depth - 1], &z)?;
    let scale = spec.scale();
    for v in output.iter_mut() {
        *v *= scale;
    }
    Ok(ForwardCache {
        activations,
        output,
    })
}

/// Forward pass `√m · W_L σ(… σ(W_1 x))`.
pub fn forward(spec: &NetSpec, params: &NetParams, x: &[f64]) -> Result<Vec<f64>> {
    Ok(forward_cached(spec, params.weights(), x)?.output)
}

/// Scalar-output forward, for the common `out_dim = 1` case.
pub fn forward_scalar(spec: &NetSpec, params: &NetParams, x: &[f64]) -> Result<f64> {
    let out = forward(spec, params, x)?;
    Ok(out[0])
}

/// Reverse-mode sweep: given a cotangent on the output, returns the per-layer
/// parameter gradients and the input gradient.
pub(crate) fn backprop(
    spec: &NetSpec,
    weights: &[Matrix],
    cache: &ForwardCache,
    cotangent: &[f64],
) -> (Vec<Matrix>, Vec<f64>) {
    let scale = spec.scale();
    let depth = spec.depth;
    let mut grads: Vec<Matrix> = Vec::with_capacity(depth);
    // Head: dW_L = √m · u ⊗ z_{L−1};   e = √m · W_Lᵀ u.
    let z_last = &cache.activations[depth - 1];
    let head = &weights[depth - 1];
    let mut g_head = Matrix::zeros(head.rows(), head.cols());
    let mut e = vec![0.0; head.cols()];
    for i in 0..head.rows() {
        let ui = scale * cotangent[i];
        let row = head.row(i);
        for j in 0..head.cols() {
            g_head.set(i, j, ui * z_last[j]);
            e[j] += ui * row[j];
        }
    }
    grads.push(g_head);
    // Hidden layers, walking back to the input.
    for l in (0..depth - 1).rev() {
        let w = &weights[l];
        let z_in = &cache.activations[l];
        let z_out = &cache.activations[l + 1];
        // Gate by the ReLU mask: σ'(a) = 1 iff the activation survived.
        let d: Vec<f64> = e
            .iter()
            .zip(z_out)
            .map(|(ei, zo)| if *zo > 0.0 { *ei } else { 0.0 })
            .collect();
        let mut g = Matrix::zeros(w.rows(), w.cols());
        let mut e_next = vec![0.0; w.cols()];
        for i in 0..w.rows() {
            if d[i] != 0.0 {
                let row = w.row(i);
                for j in 0..w.cols() {
                    g.set(i, j, d[i] * z_in[j]);
                    e_next[j] += d[i] * row[j];
                }
            }
        }
        grads.push(g);
        e = e_next;
    }
    grads.reverse();
    (grads, e)
}

/// Gradient of the scalar network output with respect to the parameters,
/// flattened in canonical order.
pub fn grad_params(spec: &NetSpec, params: &NetParams, x: &[f64]) -> Result<Vec<f64>> {
    if spec.out_dim != 1 {
        return Err(Error::Unsupported(
            "grad_params needs a scalar output; take per-output gradients instead".into(),
        ));
    }
    let cache = forward_cached(spec, params.weights(), x)?;
    let (grads, _) = backprop(spec, params.weights(), &cache, &[1.0]);
    Ok(flatten_weights(&grads))
}

/// Parameter and input gradients for an arbitrary output cotangent.
/// Returns `(flat param gradient, input gradient, output)`.
pub fn vjp(
    spec: &NetSpec,
    params: &NetParams,
    x: &[f64],
    cotangent: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if cotangent.len() != spec.out_dim {
        return Err(Error::DimensionMismatch {
            context: "vjp cotangent",
            expected: spec.out_dim,
            got: cotangent.len(),
        });
    }
    let cache = forward_cached(spec, params.weights(), x)?;
    let (grads, input_grad) = backprop(spec, params.weights(), &cache, cotangent);
    Ok((flatten_weights(&grads), input_grad, cache.output))
}

/// Gradient-descent settings for the regularized square loss.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    /// Learning rate.
    pub eta: f64,
    /// Number of full-batch gradient steps.
    pub steps: usize,
    /// Ridge weight λ.
    pub lambda: f64,
    /// Width factor multiplying the regularizer (`m·λ‖θ−θ₀‖²/2`).
    pub reg_width: f64,
    /// When set (the default), each step is scaled by 1/(sample count), so a
    /// fixed `eta` stays stable as the training set grows. The objective and
    /// its minimizer are unchanged; only the step size is.
    pub per_sample_step: bool,
}

impl TrainConfig {
    pub fn new(eta: f64, steps: usize, lambda: f64, reg_width: f64) -> Self {
        TrainConfig {
            eta,
            steps,
            lambda,
            reg_width,
            per_sample_step: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta < 0.0 || !self.eta.is_finite() {
            return Err(Error::config("eta must be non-negative"));
        }
        if self.lambda < 0.0 {
            return Err(Error::config("lambda must be non-negative"));
        }
        Ok(())
    }

    pub(crate) fn step_scale(&self, samples: usize) -> f64 {
        if self.per_sample_step && samples > 0 {
            self.eta / samples as f64
        } else {
            self.eta
        }
    }
}

/// Result of a training call: final parameters and the loss at every
/// iterate (length `steps + 1`).
pub struct TrainOutcome {
    pub params: NetParams,
    pub loss_trace: Vec<f64>,
}

/// Full-batch gradient descent on
/// `L(θ) = Σᵢ (f(xᵢ;θ) − rᵢ)²/2 + reg_width·λ·‖θ − θ₀‖²/2`,
/// starting from the supplied parameters (warm start across rounds).
pub fn train(
    spec: &NetSpec,
    params: &NetParams,
    inputs: &[Vec<f64>],
    targets: &[f64],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if spec.out_dim != 1 {
        return Err(Error::Unsupported(
            "train expects a scalar-output network".into(),
        ));
    }
    if inputs.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            context: "train inputs/targets",
            expected: inputs.len(),
            got: targets.len(),
        });
    }
    let mut current = params.clone();
    let reg = cfg.reg_width * cfg.lambda;
    let step_scale = cfg.step_scale(inputs.len());

    let loss_of = |weights: &[Matrix], theta0: &[Matrix]| -> Result<f64> {
        let mut loss = 0.0;
        for (x, r) in inputs.iter().zip(targets) {
            let out = forward_cached(spec, weights, x)?.output[0];
            let resid = out - r;
            loss += 0.5 * resid * resid;
        }
        for (w, w0) in weights.iter().zip(theta0) {
            for (a, b) in w.data().iter().zip(w0.data()) {
                let d = a - b;
                loss += 0.5 * reg * d * d;
            }
        }
        Ok(loss)
    };

    let mut trace = Vec::with_capacity(cfg.steps + 1);
    trace.push(loss_of(current.weights(), current.theta0())?);

    let dims = spec.layer_dims();
    for step in 0..cfg.steps {
        let mut grad: Vec<Matrix> = dims.iter().map(|(r, c)| Matrix::zeros(*r, *c)).collect();
        for (x, r) in inputs.iter().zip(targets) {
            let cache = forward_cached(spec, current.weights(), x)?;
            let resid = cache.output[0] - r;
            if resid != 0.0 {
                let (g, _) = backprop(spec, current.weights(), &cache, &[resid]);
                for (acc, gi) in grad.iter_mut().zip(&g) {
                    acc.add_assign(gi);
                }
            }
        }
        let theta0 = current.theta0.clone();
        for ((w, w0), g) in current.weights_mut().iter_mut().zip(&theta0).zip(&grad) {
            let wd = w.data_mut();
            for ((a, b), gi) in wd.iter_mut().zip(w0.data()).zip(g.data()) {
                *a -= step_scale * (gi + reg * (*a - b));
            }
        }
        let loss = loss_of(current.weights(), current.theta0())?;
        if !loss.is_finite() || loss > DIVERGENCE_GUARD {
            return Err(Error::Divergence { loss, step });
        }
        trace.push(loss);
    }
    Ok(TrainOutcome {
        params: current,
        loss_trace: trace,
    })
}

fn fmt_f64(v: f64) -> String {
    // 17 significant digits round-trip any finite f64 exactly.
    format!("{v:.16e}")
}

/// Serializes spec + weights + initialization snapshot as decimal text.
/// Round-trips value-exact at 17 significant digits.
pub fn save_params<W: Write>(spec: &NetSpec, params: &NetParams, mut out: W) -> Result<()> {
    writeln!(out, "mufasa-net v1")?;
    writeln!(out, "depth {}", spec.depth)?;
    writeln!(out, "width {}", spec.width)?;
    writeln!(out, "in_dim {}", spec.in_dim)?;
    writeln!(out, "out_dim {}", spec.out_dim)?;
    writeln!(
        out,
        "antisymmetric_head {}",
        if spec.antisymmetric_head { 1 } else { 0 }
    )?;
    writeln!(out, "seed {}", params.seed)?;
    writeln!(out, "flatten_order {FLATTEN_ORDER}")?;
    writeln!(out, "weights {}", spec.param_count())?;
    for v in params.flat() {
        writeln!(out, "{}", fmt_f64(v))?;
    }
    writeln!(out, "theta0 {}", spec.param_count())?;
    for v in params.theta0_flat() {
        writeln!(out, "{}", fmt_f64(v))?;
    }
    Ok(())
}

/// Parses the output of [`save_params`].
pub fn load_params<R: BufRead>(reader: R) -> Result<(NetSpec, NetParams)> {
    let lines: Vec<String> = reader
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(Error::Io)?;
    let mut cursor = 0usize;
    let mut next = |expect: &str, cursor: &mut usize| -> Result<(usize, String)> {
        if *cursor >= lines.len() {
            return Err(Error::parse(
                lines.len(),
                format!("unexpected end of file, wanted {expect}"),
            ));
        }
        *cursor += 1;
        Ok((*cursor, lines[*cursor - 1].clone()))
    };
    let (ln, magic) = next("magic", &mut cursor)?;
    if magic.trim() != "mufasa-net v1" {
        return Err(Error::parse(ln, "not a mufasa-net v1 file"));
    }
    let mut field = |name: &str, cursor: &mut usize| -> Result<String> {
        let (ln, line) = next(name, cursor)?;
        let mut parts = line.splitn(2, ' ');
        let key = parts.next().unwrap_or("");
        if key != name {
            return Err(Error::parse(ln, format!("expected field {name}, got {key}")));
        }
        Ok(parts.next().unwrap_or("").trim().to_string())
    };
    let parse_usize = |s: String, what: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::parse(0, format!("bad {what}: {s}")))
    };
    let depth = parse_usize(field("depth", &mut cursor)?, "depth")?;
    let width = parse_usize(field("width", &mut cursor)?, "width")?;
    let in_dim = parse_usize(field("in_dim", &mut cursor)?, "in_dim")?;
    let out_dim = parse_usize(field("out_dim", &mut cursor)?, "out_dim")?;
    let anti = field("antisymmetric_head", &mut cursor)? == "1";
    let seed: u64 = field("seed", &mut cursor)?
        .parse()
        .map_err(|_| Error::parse(0, "bad seed"))?;
    let order = field("flatten_order", &mut cursor)?;
    if order != FLATTEN_ORDER {
        return Err(Error::parse(0, format!("unknown flatten order {order}")));
    }
    let spec = NetSpec {
        depth,
        width,
        in_dim,
        out_dim,
        antisymmetric_head: anti,
    };
    spec.validate()?;
    let count = parse_usize(field("weights", &mut cursor)?, "weight count")?;
    if count != spec.param_count() {
        return Err(Error::parse(0, "weight count does not match spec"));
    }
    let mut read_block = |n: usize, cursor: &mut usize| -> Result<Vec<f64>> {
        let mut vals = Vec::with_capacity(n);
        for _ in 0..n {
            let (ln, line) = next("weight value", cursor)?;
            vals.push(
                line.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(ln, format!("bad float: {line}")))?,
            );
        }
        Ok(vals)
    };
    let flat = read_block(count, &mut cursor)?;
    let (ln, theta_hdr) = next("theta0 header", &mut cursor)?;
    if !theta_hdr.starts_with("theta0 ") {
        return Err(Error::parse(ln, "expected theta0 section"));
    }
    let theta_flat = read_block(count, &mut cursor)?;
    let weights = unflatten_weights(&spec, &flat)?;
    let theta0 = unflatten_weights(&spec, &theta_flat)?;
    Ok((
        spec.clone(),
        NetParams {
            weights,
            theta0,
            seed,
        },
    ))
}
