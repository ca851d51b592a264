//! Dense multi-layer perceptrons with exact backpropagation.
//!
//! Batches are row-per-sample matrices: a batch of `n` inputs to a network
//! with input dimension `d` is an `n × d` matrix. Layer weights are stored
//! `out_dim × in_dim`, so a layer computes `act(X · Wᵀ + 1·bᵀ)`.
//!
//! The module also carries the binary cross-entropy loss used by both GAN
//! phases, an Adam optimizer and the `MLPv1` plain-text checkpoint format.

use std::fmt;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Lower/upper clamp applied to predictions before taking logs in [`bce_loss`].
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => tanh(z),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed in terms of the activation output.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Input(format!("unknown activation `{other}`"))),
        }
    }
}

// The libm `tanh`/`exp` take a slow path for the small arguments that
// dominate training, so activations use a branch-free exp instead: Cody-Waite
// reduction to |r| <= ln2/2 and a degree-13 Taylor polynomial. Relative error
// stays within two ulps over the clamped range.
#[inline(always)]
pub(crate) fn exp(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    const SHIFT: f64 = 6_755_399_441_055_744.0;
    const COEFFS: [f64; 13] = [
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ];
    let x = x.clamp(-708.0, 709.0);
    // Adding SHIFT rounds to an integer that also sits in the low mantissa
    // bits, so the 2^n scale is built without a float-to-int conversion.
    let kd = x * std::f64::consts::LOG2_E + SHIFT;
    let n = kd - SHIFT;
    let r = x - n * LN2_HI - n * LN2_LO;
    let mut p = 1.0 / 6_227_020_800.0;
    for c in COEFFS {
        p = p * r + c;
    }
    p * f64::from_bits(kd.to_bits().wrapping_add(1023) << 52)
}

// Absolute error is at the ulp level; beyond |z| = 20 the result rounds to 1.
#[inline(always)]
fn tanh(z: f64) -> f64 {
    let a = z.abs().min(20.0);
    (1.0 - 2.0 / (exp(2.0 * a) + 1.0)).copysign(z)
}

// Evaluated on -|z| so the exponential never overflows.
#[inline(always)]
fn sigmoid(z: f64) -> f64 {
    let e = exp(-z.abs());
    if z >= 0.0 {
        1.0 / (1.0 + e)
    } else {
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    /// `out_dim × in_dim`.
    pub weights: Matrix,
    pub bias: Vector,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    fn forward(&self, input: &Matrix) -> Matrix {
        let mut z = input * self.weights.transpose();
        let n = z.nrows();
        if n == 0 {
            return z;
        }
        // Column-major storage: each column is one contiguous output unit.
        let act = self.activation;
        for (col, &b) in z.as_mut_slice().chunks_exact_mut(n).zip(self.bias.iter()) {
            match act {
                Activation::Tanh => col.iter_mut().for_each(|v| *v = tanh(*v + b)),
                Activation::Sigmoid => col.iter_mut().for_each(|v| *v = sigmoid(*v + b)),
                Activation::Identity => col.iter_mut().for_each(|v| *v += b),
            }
        }
        z
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

/// Everything [`Mlp::backward`] needs from a forward pass: the network input
/// and each layer's post-activation output.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    input: Matrix,
    outputs: Vec<Matrix>,
}

impl ForwardCache {
    /// The matrix fed into layer `k`.
    fn layer_input(&self, k: usize) -> &Matrix {
        if k == 0 {
            &self.input
        } else {
            &self.outputs[k - 1]
        }
    }

    pub fn output(&self) -> &Matrix {
        self.outputs.last().expect("cache of a non-empty network")
    }

    pub fn layer_outputs(&self) -> &[Matrix] {
        &self.outputs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradients {
    pub weights: Matrix,
    pub bias: Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
}

impl Gradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Gradients {
            layers: mlp
                .layers
                .iter()
                .map(|l| LayerGradients {
                    weights: Matrix::zeros(l.out_dim(), l.in_dim()),
                    bias: Vector::zeros(l.out_dim()),
                })
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    fn congruent_with(&self, mlp: &Mlp) -> bool {
        self.layers.len() == mlp.layers.len()
            && self
                .layers
                .iter()
                .zip(&mlp.layers)
                .all(|(g, l)| g.weights.shape() == l.weights.shape() && g.bias.len() == l.bias.len())
    }
}

impl Mlp {
    /// Builds a network with layer widths `dims` (input first) and one
    /// activation per layer. Weights are Glorot-uniform, biases zero.
    pub fn new(dims: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_rng(dims, activations, &mut rng)
    }

    pub fn with_rng<R: Rng + ?Sized>(dims: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(format!(
                "a network needs at least an input and an output width, got {dims:?}"
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Config(format!("layer widths must be positive, got {dims:?}")));
        }
        if activations.len() != dims.len() - 1 {
            return Err(Error::Config(format!(
                "{} layers need {} activations, got {}",
                dims.len() - 1,
                dims.len() - 1,
                activations.len()
            )));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = Matrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-limit..=limit));
                DenseLayer {
                    weights,
                    bias: Vector::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Ok(Mlp { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a network needs at least one layer".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::Shape(format!(
                    "layer {k}: bias length {} != out_dim {}",
                    l.bias.len(),
                    l.out_dim()
                )));
            }
            if l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Input(format!("layer {k} has non-finite parameters")));
            }
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer {k} outputs {} values but layer {} expects {}",
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Bitwise fingerprint of every parameter; equal checksums mean the
    /// parameters were not touched.
    pub fn checksum(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for l in &self.layers {
            for v in l.weights.iter().chain(l.bias.iter()) {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    fn check_input(&self, inputs: &Matrix) -> Result<()> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} input columns, got {}",
                self.input_dim(),
                inputs.ncols()
            )));
        }
        Ok(())
    }

    /// Output only, without keeping intermediate activations.
    pub fn predict(&self, inputs: &Matrix) -> Result<Matrix> {
        self.check_input(inputs)?;
        let mut a = self.layers[0].forward(inputs);
        for l in &self.layers[1..] {
            a = l.forward(&a);
        }
        Ok(a)
    }

    pub fn forward(&self, inputs: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_input(inputs)?;
        let mut cache = ForwardCache {
            input: inputs.clone(),
            outputs: Vec::with_capacity(self.layers.len()),
        };
        for (k, l) in self.layers.iter().enumerate() {
            let out = l.forward(cache.layer_input(k));
            cache.outputs.push(out);
        }
        Ok((cache.output().clone(), cache))
    }

    fn check_cache(&self, cache: &ForwardCache, dloss_doutput: &Matrix) -> Result<()> {
        if cache.outputs.len() != self.layers.len()
            || (0..self.layers.len()).any(|k| cache.layer_input(k).ncols() != self.layers[k].in_dim())
            || cache
                .outputs
                .iter()
                .zip(&self.layers)
                .any(|(y, l)| y.ncols() != l.out_dim())
        {
            return Err(Error::Shape("forward cache does not belong to this network".into()));
        }
        if dloss_doutput.shape() != cache.output().shape() {
            return Err(Error::Shape(format!(
                "output gradient has shape {:?}, network output has {:?}",
                dloss_doutput.shape(),
                cache.output().shape()
            )));
        }
        Ok(())
    }

    /// Walks the layers backwards. Returns parameter gradients when
    /// `want_params` is set, and the gradient with respect to the inputs.
    fn backprop(&self, cache: &ForwardCache, dloss_doutput: &Matrix, want_params: bool) -> (Option<Gradients>, Matrix) {
        let mut grads = want_params.then(|| Vec::with_capacity(self.layers.len()));
        let mut upstream = dloss_doutput.clone();
        for (k, l) in self.layers.iter().enumerate().rev() {
            let out = &cache.outputs[k];
            let act = l.activation;
            let delta = upstream.zip_map(out, |g, a| g * act.derivative_from_output(a));
            if let Some(g) = grads.as_mut() {
                let weights = delta.tr_mul(cache.layer_input(k));
                let bias = Vector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
                g.push(LayerGradients { weights, bias });
            }
            upstream = &delta * &l.weights;
        }
        let grads = grads.map(|mut g| {
            g.reverse();
            Gradients { layers: g }
        });
        (grads, upstream)
    }

    /// Parameter gradients of a scalar loss whose derivative with respect to
    /// the network output is `dloss_doutput`.
    pub fn backward(&self, cache: &ForwardCache, dloss_doutput: &Matrix) -> Result<Gradients> {
        self.check_cache(cache, dloss_doutput)?;
        let (grads, _) = self.backprop(cache, dloss_doutput, true);
        Ok(grads.expect("requested"))
    }

    /// Gradient with respect to the network inputs; parameters are treated
    /// as constants.
    pub fn backward_through_input(&self, cache: &ForwardCache, dloss_doutput: &Matrix) -> Result<Matrix> {
        self.check_cache(cache, dloss_doutput)?;
        Ok(self.backprop(cache, dloss_doutput, false).1)
    }

    /// Both parameter and input gradients from one backward sweep.
    pub fn backward_full(&self, cache: &ForwardCache, dloss_doutput: &Matrix) -> Result<(Gradients, Matrix)> {
        self.check_cache(cache, dloss_doutput)?;
        let (grads, dinput) = self.backprop(cache, dloss_doutput, true);
        Ok((grads.expect("requested"), dinput))
    }

    /// Serializes to the `MLPv1` text format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "MLPv1 {}", self.layers.len()).unwrap();
        for l in &self.layers {
            writeln!(s, "layer {} {} {}", l.in_dim(), l.out_dim(), l.activation).unwrap();
            for r in 0..l.out_dim() {
                let row: Vec<String> = l.weights.row(r).iter().map(|v| fmt_f64(*v)).collect();
                writeln!(s, "{}", row.join(" ")).unwrap();
            }
            let bias: Vec<String> = l.bias.iter().map(|v| fmt_f64(*v)).collect();
            writeln!(s, "{}", bias.join(" ")).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = TextLines::new("<mlp>", text);
        Self::read_from(&mut lines)
    }

    /// Reads one `MLPv1` block from a line cursor, leaving the cursor on the
    /// line after the block. Used for files that embed several networks.
    pub fn read_from(lines: &mut TextLines<'_>) -> Result<Self> {
        let (no, header) = lines.next_line("MLPv1 header")?;
        let mut tok = header.split_whitespace();
        if tok.next() != Some("MLPv1") {
            return Err(lines.error(no, "expected `MLPv1 <n_layers>`"));
        }
        let n_layers: usize = parse_token(lines, no, tok.next(), "layer count")?;
        if n_layers == 0 {
            return Err(lines.error(no, "network must have at least one layer"));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let (no, line) = lines.next_line("layer header")?;
            let mut tok = line.split_whitespace();
            if tok.next() != Some("layer") {
                return Err(lines.error(no, "expected `layer <in> <out> <activation>`"));
            }
            let in_dim: usize = parse_token(lines, no, tok.next(), "input width")?;
            let out_dim: usize = parse_token(lines, no, tok.next(), "output width")?;
            let activation: Activation = tok
                .next()
                .ok_or_else(|| lines.error(no, "missing activation"))?
                .parse()
                .map_err(|e: Error| lines.error(no, e.to_string()))?;
            let mut weights = Matrix::zeros(out_dim, in_dim);
            for r in 0..out_dim {
                let row = lines.read_floats(in_dim, "weight row")?;
                for (c, v) in row.into_iter().enumerate() {
                    weights[(r, c)] = v;
                }
            }
            let bias = Vector::from_vec(lines.read_floats(out_dim, "bias")?);
            layers.push(DenseLayer {
                weights,
                bias,
                activation,
            });
        }
        Mlp::from_layers(layers)
    }
}

/// Shortest exact textual form with 17 significant digits.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_token<T: FromStr>(lines: &TextLines<'_>, no: usize, tok: Option<&str>, what: &str) -> Result<T> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| lines.error(no, format!("missing or invalid {what}")))
}

/// Line cursor over a text checkpoint that reports 1-based line numbers.
pub struct TextLines<'a> {
    source: String,
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> TextLines<'a> {
    pub fn new(source: impl Into<String>, text: &'a str) -> Self {
        TextLines {
            source: source.into(),
            inner: text.lines().enumerate(),
            last: 0,
        }
    }

    pub fn error(&self, line: usize, message: impl Into<String>) -> Error {
        Error::parse(&self.source, line, message)
    }

    /// Next non-comment line with its 1-based number. Lines starting with
    /// `#` carry provenance and are skipped.
    pub fn next_line(&mut self, expecting: &str) -> Result<(usize, &'a str)> {
        loop {
            match self.inner.next() {
                Some((i, l)) => {
                    self.last = i + 1;
                    if !l.starts_with('#') {
                        return Ok((i + 1, l));
                    }
                }
                None => return Err(self.error(self.last + 1, format!("unexpected end of file, expected {expecting}"))),
            }
        }
    }

    pub fn read_floats(&mut self, expected: usize, what: &str) -> Result<Vec<f64>> {
        let (no, line) = self.next_line(what)?;
        let vals: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
        let vals = vals.map_err(|_| self.error(no, format!("non-numeric value in {what}")))?;
        if vals.len() != expected {
            return Err(self.error(no, format!("{what}: expected {expected} values, found {}", vals.len())));
        }
        Ok(vals)
    }
}

/// Mean binary cross-entropy and its derivative with respect to each
/// prediction. Predictions are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` first.
pub fn bce_loss(predictions: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    if predictions.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let n = predictions.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(predictions.len());
    for (&p, &t) in predictions.iter().zip(targets) {
        let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        loss -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        grad.push((-t / p + (1.0 - t) / (1.0 - p)) / n);
    }
    Ok(((loss / n).max(0.0), grad))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moment accumulators for one network.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: AdamConfig,
    step: u64,
    first: Gradients,
    second: Gradients,
}

impl OptimizerState {
    pub fn new(mlp: &Mlp, config: AdamConfig) -> Result<Self> {
        if !(config.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        for b in [config.beta1, config.beta2] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("moment decay {b} outside (0,1)")));
            }
        }
        Ok(OptimizerState {
            config,
            step: 0,
            first: Gradients::zeros_like(mlp),
            second: Gradients::zeros_like(mlp),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `mlp` in place.
    pub fn step(&mut self, mlp: &mut Mlp, grads: &Gradients) -> Result<()> {
        if !grads.congruent_with(mlp) || !self.first.congruent_with(mlp) {
            return Err(Error::Shape(
                "gradients or optimizer state do not match the network".into(),
            ));
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let correct1 = 1.0 - beta1.powi(t);
        let correct2 = 1.0 - beta2.powi(t);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / correct1;
                let v_hat = v[i] / correct2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        };
        for (k, layer) in mlp.layers.iter_mut().enumerate() {
            let (m, v) = (&mut self.first.layers[k], &mut self.second.layers[k]);
            let g = &grads.layers[k];
            update(
                layer.weights.as_mut_slice(),
                g.weights.as_slice(),
                m.weights.as_mut_slice(),
                v.weights.as_mut_slice(),
            );
            update(
                layer.bias.as_mut_slice(),
                g.bias.as_slice(),
                m.bias.as_mut_slice(),
                v.bias.as_mut_slice(),
            );
        }
        Ok(())
    }
}
