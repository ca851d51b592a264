//! Code-conditioned GAN: generator `G(z, c)` and discriminator `D(x, c)`,
//! trained by alternating one discriminator update and one generator update
//! per minibatch, with the checkpoint of lowest cumulative validation KL kept.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::density::{CodeGroup, EvalGrid, KlReport, ValidationScorer, DEFAULT_BANDWIDTH};
use crate::error::{Error, Result};
use crate::nnet::{bce_loss, fmt_f64, Activation, AdamConfig, Matrix, Mlp, OptimizerState, TextLines};

const TRAIN_STREAM: u64 = 0;
const EVAL_STREAM: u64 = 1;
const GENERATOR_INIT_STREAM: u64 = 2;
const DISCRIMINATOR_INIT_STREAM: u64 = 3;

/// Feature vectors paired row-by-row with their code vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionedSet {
    pub features: Matrix,
    pub codes: Matrix,
}

impl ConditionedSet {
    pub fn new(features: Matrix, codes: Matrix) -> Result<Self> {
        if features.nrows() != codes.nrows() {
            return Err(Error::Shape(format!(
                "{} feature rows vs {} code rows",
                features.nrows(),
                codes.nrows()
            )));
        }
        Ok(ConditionedSet { features, codes })
    }

    pub fn from_groups(groups: &[CodeGroup]) -> Result<Self> {
        let first = groups.first().ok_or_else(|| Error::EmptyDataset("no groups".into()))?;
        let (f, c) = (first.points.ncols(), first.code.len());
        let n: usize = groups.iter().map(|g| g.points.nrows()).sum();
        let mut features = Matrix::zeros(n, f);
        let mut codes = Matrix::zeros(n, c);
        let mut row = 0;
        for g in groups {
            if g.points.ncols() != f || g.code.len() != c {
                return Err(Error::Shape("groups disagree on feature or code dimension".into()));
            }
            for r in 0..g.points.nrows() {
                features.row_mut(row).copy_from(&g.points.row(r));
                for (j, v) in g.code.iter().enumerate() {
                    codes[(row, j)] = *v;
                }
                row += 1;
            }
        }
        Ok(ConditionedSet { features, codes })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn code_dim(&self) -> usize {
        self.codes.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        ConditionedSet {
            features: self.features.select_rows(rows),
            codes: self.codes.select_rows(rows),
        }
    }

    /// Rows grouped by exact code value, in order of first appearance.
    pub fn groups(&self) -> Vec<CodeGroup> {
        let mut keys: Vec<Vec<f64>> = Vec::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        for r in 0..self.len() {
            let code: Vec<f64> = self.codes.row(r).iter().copied().collect();
            match keys.iter().position(|k| *k == code) {
                Some(i) => members[i].push(r),
                None => {
                    keys.push(code);
                    members.push(vec![r]);
                }
            }
        }
        keys.into_iter()
            .zip(members)
            .map(|(code, rows)| CodeGroup {
                code,
                points: self.features.select_rows(&rows),
            })
            .collect()
    }

    pub fn group(&self, code: &[f64]) -> Option<CodeGroup> {
        self.groups().into_iter().find(|g| g.code == code)
    }
}

/// `[a | b]` column concatenation.
fn hstack(a: &Matrix, b: &Matrix) -> Matrix {
    let (n, ca) = a.shape();
    Matrix::from_fn(
        n,
        ca + b.ncols(),
        |r, c| if c < ca { a[(r, c)] } else { b[(r, c - ca)] },
    )
}

fn repeat_code(code: &[f64], n: usize) -> Matrix {
    Matrix::from_fn(n, code.len(), |_, c| code[c])
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanPair {
    pub generator: Mlp,
    pub discriminator: Mlp,
    noise_dim: usize,
    code_dim: usize,
    feature_dim: usize,
}

impl GanPair {
    /// One tanh hidden layer of `hidden_width` in both networks; tanh output
    /// for the generator and a single sigmoid output for the discriminator.
    pub fn new(noise_dim: usize, code_dim: usize, feature_dim: usize, hidden_width: usize, seed: u64) -> Result<Self> {
        let mut g_rng = ChaCha8Rng::seed_from_u64(seed);
        g_rng.set_stream(GENERATOR_INIT_STREAM);
        let mut d_rng = ChaCha8Rng::seed_from_u64(seed);
        d_rng.set_stream(DISCRIMINATOR_INIT_STREAM);
        let generator = Mlp::with_rng(
            &[noise_dim + code_dim, hidden_width, feature_dim],
            &[Activation::Tanh, Activation::Tanh],
            &mut g_rng,
        )?;
        let discriminator = Mlp::with_rng(
            &[feature_dim + code_dim, hidden_width, 1],
            &[Activation::Tanh, Activation::Sigmoid],
            &mut d_rng,
        )?;
        Self::from_networks(generator, discriminator, noise_dim, code_dim)
    }

    pub fn from_networks(generator: Mlp, discriminator: Mlp, noise_dim: usize, code_dim: usize) -> Result<Self> {
        if noise_dim == 0 {
            return Err(Error::Config("noise dimension must be positive".into()));
        }
        if generator.input_dim() != noise_dim + code_dim {
            return Err(Error::Shape(format!(
                "generator input {} != noise {noise_dim} + code {code_dim}",
                generator.input_dim()
            )));
        }
        let feature_dim = generator.output_dim();
        if discriminator.input_dim() != feature_dim + code_dim || discriminator.output_dim() != 1 {
            return Err(Error::Shape(
                "discriminator must map feature + code to one output".into(),
            ));
        }
        Ok(GanPair {
            generator,
            discriminator,
            noise_dim,
            code_dim,
            feature_dim,
        })
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn code_dim(&self) -> usize {
        self.code_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn hidden_width(&self) -> usize {
        self.generator.layers()[0].out_dim()
    }

    fn check_codes(&self, codes: &Matrix) -> Result<()> {
        if codes.nrows() == 0 {
            return Err(Error::Input("empty batch".into()));
        }
        if codes.ncols() != self.code_dim {
            return Err(Error::Shape(format!(
                "model expects {}-dimensional codes, got {}",
                self.code_dim,
                codes.ncols()
            )));
        }
        Ok(())
    }
}

/// Adam states for both networks.
#[derive(Clone, Debug)]
pub struct GanOptimizers {
    pub generator: OptimizerState,
    pub discriminator: OptimizerState,
}

impl GanOptimizers {
    pub fn new(pair: &GanPair, config: AdamConfig) -> Result<Self> {
        Ok(GanOptimizers {
            generator: OptimizerState::new(&pair.generator, config)?,
            discriminator: OptimizerState::new(&pair.discriminator, config)?,
        })
    }
}

/// `n × dim` matrix of independent standard normal draws.
pub fn sample_noise<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Result<Matrix> {
    if n == 0 || dim == 0 {
        return Err(Error::Input(format!("cannot sample a {n}×{dim} noise batch")));
    }
    Ok(Matrix::from_fn(n, dim, |_, _| rng.sample(StandardNormal)))
}

/// Generator outputs for the given per-row codes.
fn generate_for_codes<R: Rng + ?Sized>(pair: &GanPair, codes: &Matrix, rng: &mut R) -> Result<Matrix> {
    pair.check_codes(codes)?;
    let z = sample_noise(codes.nrows(), pair.noise_dim, rng)?;
    pair.generator.predict(&hstack(&z, codes))
}

/// Updates only the discriminator: real rows labelled 1, an equal number of
/// generated rows (same codes) labelled 0. Returns the BCE loss.
pub fn discriminator_step<R: Rng + ?Sized>(
    pair: &mut GanPair,
    real: &ConditionedSet,
    rng: &mut R,
    opt: &mut GanOptimizers,
) -> Result<f64> {
    if real.is_empty() {
        return Err(Error::Input("empty real batch".into()));
    }
    if real.feature_dim() != pair.feature_dim {
        return Err(Error::Shape("real features do not match the model".into()));
    }
    let n = real.len();
    let fake = generate_for_codes(pair, &real.codes, rng)?;
    let f = pair.feature_dim;
    let c = pair.code_dim;
    let inputs = Matrix::from_fn(2 * n, f + c, |r, j| {
        let (src, row) = if r < n { (&real.features, r) } else { (&fake, r - n) };
        if j < f {
            src[(row, j)]
        } else {
            real.codes[(row % n, j - f)]
        }
    });
    let targets: Vec<f64> = (0..2 * n).map(|r| if r < n { 1.0 } else { 0.0 }).collect();
    let (pred, cache) = pair.discriminator.forward(&inputs)?;
    let (loss, dpred) = bce_loss(pred.as_slice(), &targets)?;
    let grads = pair
        .discriminator
        .backward(&cache, &Matrix::from_vec(2 * n, 1, dpred))?;
    opt.discriminator.step(&mut pair.discriminator, &grads)?;
    Ok(loss)
}

/// Updates only the generator so that the frozen discriminator labels its
/// samples as real. Returns the BCE loss against label 1.
pub fn generator_step<R: Rng + ?Sized>(
    pair: &mut GanPair,
    codes: &Matrix,
    rng: &mut R,
    opt: &mut GanOptimizers,
) -> Result<f64> {
    pair.check_codes(codes)?;
    let n = codes.nrows();
    let z = sample_noise(n, pair.noise_dim, rng)?;
    let (fake, g_cache) = pair.generator.forward(&hstack(&z, codes))?;
    let (pred, d_cache) = pair.discriminator.forward(&hstack(&fake, codes))?;
    let (loss, dpred) = bce_loss(pred.as_slice(), &vec![1.0; n])?;
    let d_input = pair
        .discriminator
        .backward_through_input(&d_cache, &Matrix::from_vec(n, 1, dpred))?;
    let d_fake = d_input.columns(0, pair.feature_dim).into_owned();
    let grads = pair.generator.backward(&g_cache, &d_fake)?;
    opt.generator.step(&mut pair.generator, &grads)?;
    Ok(loss)
}

/// `n` generated feature vectors for a single code.
pub fn generate<R: Rng + ?Sized>(pair: &GanPair, code: &[f64], n: usize, rng: &mut R) -> Result<Matrix> {
    if code.len() != pair.code_dim {
        return Err(Error::Shape(format!(
            "model expects {}-dimensional codes, got {}",
            pair.code_dim,
            code.len()
        )));
    }
    generate_for_codes(pair, &repeat_code(code, n), rng)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub noise_dim: usize,
    pub hidden_width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub validation_interval: usize,
    pub seed: u64,
    pub kde_bandwidth: f64,
    /// `None` uses [`EvalGrid::default_for_dim`].
    pub grid: Option<EvalGrid>,
    /// Samples generated per validation code; `None` matches the real count.
    pub n_generate: Option<usize>,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            noise_dim: 2,
            hidden_width: 64,
            epochs: 300,
            batch_size: 64,
            validation_interval: 10,
            seed: 0,
            kde_bandwidth: DEFAULT_BANDWIDTH,
            grid: None,
            n_generate: None,
            // At 1e-3 the adversarial pair oscillates at desk-scale budgets.
            adam: AdamConfig {
                learning_rate: 5e-4,
                ..AdamConfig::default()
            },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("noise_dim", self.noise_dim),
            ("hidden_width", self.hidden_width),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("validation_interval", self.validation_interval),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.kde_bandwidth > 0.0) {
            return Err(Error::Config("kde_bandwidth must be positive".into()));
        }
        Ok(())
    }

    pub fn grid_for(&self, dim: usize) -> Result<EvalGrid> {
        match &self.grid {
            Some(g) if g.dim() != dim => Err(Error::Config(format!(
                "evaluation grid has {} axes but features have {dim}",
                g.dim()
            ))),
            Some(g) => Ok(g.clone()),
            None => EvalGrid::default_for_dim(dim),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub pair: GanPair,
    pub epoch: usize,
    pub val_kl: f64,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "CGANv1 noise_dim={} code_dim={} feature_dim={} epoch={} val_kl={}",
            self.pair.noise_dim,
            self.pair.code_dim,
            self.pair.feature_dim,
            self.epoch,
            fmt_f64(self.val_kl)
        )
        .unwrap();
        s.push_str(&self.pair.generator.to_text());
        s.push_str(&self.pair.discriminator.to_text());
        s
    }

    pub fn from_text(source: &str, text: &str) -> Result<Self> {
        let mut lines = TextLines::new(source, text);
        let (no, header) = lines.next_line("CGANv1 header")?;
        let mut tok = header.split_whitespace();
        if tok.next() != Some("CGANv1") {
            return Err(lines.error(no, "expected `CGANv1` header"));
        }
        let mut fields = std::collections::HashMap::new();
        for t in tok {
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| lines.error(no, format!("malformed header field `{t}`")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| lines.error(no, format!("header is missing `{k}`")))
        };
        let int = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| lines.error(no, format!("`{k}` is not an integer")))
        };
        let noise_dim = int("noise_dim")?;
        let code_dim = int("code_dim")?;
        let feature_dim = int("feature_dim")?;
        let epoch = int("epoch")?;
        let val_kl: f64 = get("val_kl")?
            .parse()
            .map_err(|_| lines.error(no, "`val_kl` is not a number"))?;
        let generator = Mlp::read_from(&mut lines)?;
        let discriminator = Mlp::read_from(&mut lines)?;
        let pair = GanPair::from_networks(generator, discriminator, noise_dim, code_dim)?;
        if pair.feature_dim != feature_dim {
            return Err(lines.error(no, "feature_dim disagrees with the generator"));
        }
        Ok(Checkpoint { pair, epoch, val_kl })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub epoch: usize,
    pub report: KlReport,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub history: Vec<Evaluation>,
    /// Cumulative validation KL of the untrained pair.
    pub initial_kl: f64,
    /// Pair after the last epoch.
    pub last: GanPair,
}

fn check_splits(train: &ConditionedSet, validation: &ConditionedSet) -> Result<(Vec<CodeGroup>, Vec<CodeGroup>)> {
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if validation.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    if train.feature_dim() != validation.feature_dim() || train.code_dim() != validation.code_dim() {
        return Err(Error::Config("training and validation dimensions differ".into()));
    }
    let train_groups = train.groups();
    if train_groups.len() < 2 {
        return Err(Error::Config(
            "training set must cover at least two distinct codes".into(),
        ));
    }
    let val_groups = validation.groups();
    if let Some(g) = val_groups
        .iter()
        .find(|v| train_groups.iter().any(|t| t.code == v.code))
    {
        return Err(Error::Config(format!(
            "validation code {:?} also appears in training",
            g.code
        )));
    }
    Ok((train_groups, val_groups))
}

/// The generator noise source used for every evaluation under `seed`;
/// separate from the training stream.
pub fn evaluation_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(EVAL_STREAM);
    rng
}

/// Cumulative validation KL of `pair`, using a fresh evaluation stream so
/// every call sees the same noise.
pub fn validation_report(pair: &GanPair, scorer: &ValidationScorer, seed: u64) -> Result<KlReport> {
    let mut rng = evaluation_rng(seed);
    scorer.score(|code, n| generate(pair, code, n, &mut rng))
}

/// Shuffled minibatches, one discriminator then one generator update per
/// batch. Validation runs every `validation_interval` epochs and after the
/// final epoch.
pub fn train(train: &ConditionedSet, validation: &ConditionedSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (_, val_groups) = check_splits(train, validation)?;
    let grid = cfg.grid_for(train.feature_dim())?;
    let scorer = ValidationScorer::new(&val_groups, grid, cfg.kde_bandwidth, cfg.n_generate)?;

    let mut pair = GanPair::new(
        cfg.noise_dim,
        train.code_dim(),
        train.feature_dim(),
        cfg.hidden_width,
        cfg.seed,
    )?;
    let mut opt = GanOptimizers::new(&pair, cfg.adam)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(TRAIN_STREAM);

    let initial_kl = validation_report(&pair, &scorer, cfg.seed)?.cumulative;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<Checkpoint> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for rows in order.chunks(cfg.batch_size) {
            let batch = train.select(rows);
            discriminator_step(&mut pair, &batch, &mut rng, &mut opt)?;
            generator_step(&mut pair, &batch.codes, &mut rng, &mut opt)?;
        }
        if epoch % cfg.validation_interval == 0 || epoch == cfg.epochs {
            let report = validation_report(&pair, &scorer, cfg.seed)?;
            if best.as_ref().is_none_or(|b| report.cumulative < b.val_kl) {
                best = Some(Checkpoint {
                    pair: pair.clone(),
                    epoch,
                    val_kl: report.cumulative,
                });
            }
            history.push(Evaluation { epoch, report });
        }
    }
    Ok(TrainOutcome {
        best: best.expect("at least one evaluation"),
        history,
        initial_kl,
        last: pair,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_set(n_per_code: usize, codes: &[f64], seed: u64) -> ConditionedSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let groups: Vec<CodeGroup> = codes
            .iter()
            .map(|&c| CodeGroup {
                code: vec![c],
                points: Matrix::from_fn(n_per_code, 2, |_, j| {
                    let base = if j == 0 { 0.5 * c } else { -0.3 * c };
                    base + 0.05 * rng.sample::<f64, _>(StandardNormal)
                }),
            })
            .collect();
        ConditionedSet::from_groups(&groups).unwrap()
    }

    #[test]
    fn noise_statistics_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = sample_noise(1000, 2, &mut rng).unwrap();
        for col in z.column_iter() {
            assert!(col.mean().abs() < 0.1);
            assert!((col.variance().sqrt() - 1.0).abs() < 0.1);
        }
        let a = sample_noise(5, 3, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = sample_noise(5, 3, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(sample_noise(0, 2, &mut rng), Err(Error::Input(_))));
    }

    #[test]
    fn pair_layout_for_one_dimensional_code() {
        let pair = GanPair::new(2, 1, 2, 16, 0).unwrap();
        assert_eq!(pair.generator.input_dim(), 3);
        assert_eq!(pair.generator.output_dim(), 2);
        assert_eq!(pair.discriminator.input_dim(), 3);
        assert_eq!(pair.discriminator.output_dim(), 1);
        assert_eq!(pair.discriminator.layers()[0].out_dim(), pair.hidden_width());
    }

    #[test]
    fn discriminator_step_freezes_generator() {
        let data = toy_set(8, &[-1.0, 1.0], 2);
        let mut pair = GanPair::new(2, 1, 2, 8, 3).unwrap();
        let mut opt = GanOptimizers::new(&pair, AdamConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (g, d) = (pair.generator.checksum(), pair.discriminator.checksum());
        discriminator_step(&mut pair, &data, &mut rng, &mut opt).unwrap();
        assert_eq!(pair.generator.checksum(), g);
        assert_ne!(pair.discriminator.checksum(), d);
        // a single row is a legal batch
        discriminator_step(&mut pair, &data.select(&[0]), &mut rng, &mut opt).unwrap();
    }

    #[test]
    fn generator_step_freezes_discriminator() {
        let data = toy_set(8, &[-1.0, 1.0], 2);
        let mut pair = GanPair::new(2, 1, 2, 8, 3).unwrap();
        let mut opt = GanOptimizers::new(&pair, AdamConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (g, d) = (pair.generator.checksum(), pair.discriminator.checksum());
        generator_step(&mut pair, &data.codes, &mut rng, &mut opt).unwrap();
        assert_eq!(pair.discriminator.checksum(), d);
        assert_ne!(pair.generator.checksum(), g);
        assert!(matches!(
            generator_step(&mut pair, &Matrix::zeros(3, 2), &mut rng, &mut opt),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn discriminator_learns_separable_clusters() {
        // real data far from where the untrained generator puts its mass
        let real = ConditionedSet::new(
            Matrix::from_fn(32, 2, |r, _| 0.9 + 0.01 * (r % 5) as f64),
            Matrix::from_element(32, 1, 0.0),
        )
        .unwrap();
        let mut pair = GanPair::new(2, 1, 2, 16, 5).unwrap();
        for l in pair.generator.layers_mut() {
            l.weights *= 0.01;
        }
        let cfg = AdamConfig {
            learning_rate: 1e-2,
            ..AdamConfig::default()
        };
        let mut opt = GanOptimizers::new(&pair, cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let losses: Vec<f64> = (0..50)
            .map(|_| discriminator_step(&mut pair, &real, &mut rng, &mut opt).unwrap())
            .collect();
        assert!(losses[49] < 0.5 * losses[0], "{} -> {}", losses[0], losses[49]);
    }

    #[test]
    fn generator_moves_toward_favoured_half_space() {
        // a hand-built discriminator that scores x₀ > 0 as real
        let mut pair = GanPair::new(2, 1, 1, 8, 7).unwrap();
        let d = &mut pair.discriminator;
        d.layers_mut()[0].weights.fill(0.0);
        d.layers_mut()[0].weights[(0, 0)] = 1.0;
        d.layers_mut()[1].weights.fill(0.0);
        d.layers_mut()[1].weights[(0, 0)] = 4.0;
        let d_before = pair.discriminator.checksum();
        let codes = Matrix::from_element(64, 1, 0.2);
        let mut opt = GanOptimizers::new(&pair, AdamConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mean = |p: &GanPair, rng: &mut ChaCha8Rng| generate(p, &[0.2], 500, rng).unwrap().mean();
        let start = mean(&pair, &mut ChaCha8Rng::seed_from_u64(9));
        for _ in 0..200 {
            generator_step(&mut pair, &codes, &mut rng, &mut opt).unwrap();
        }
        let end = mean(&pair, &mut ChaCha8Rng::seed_from_u64(9));
        assert!(end > start + 0.3, "{start} -> {end}");
        assert_eq!(pair.discriminator.checksum(), d_before);
    }

    #[test]
    fn generated_samples_are_bounded_and_reproducible() {
        let pair = GanPair::new(2, 1, 2, 32, 1).unwrap();
        let a = generate(&pair, &[0.3], 200, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let b = generate(&pair, &[0.3], 200, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| *v > -1.0 && *v < 1.0));
        assert!(matches!(
            generate(&pair, &[0.3, 0.1], 5, &mut ChaCha8Rng::seed_from_u64(2)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_epochs_of_steps_leave_init_untouched() {
        let cfg = TrainConfig::default();
        let pair = GanPair::new(cfg.noise_dim, 1, 2, cfg.hidden_width, 11).unwrap();
        assert_eq!(GanPair::new(cfg.noise_dim, 1, 2, cfg.hidden_width, 11).unwrap(), pair);
    }

    #[test]
    fn train_rejects_bad_splits() {
        let tr = toy_set(10, &[-1.0, 1.0], 1);
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let overlap = toy_set(10, &[1.0], 2);
        assert!(matches!(train(&tr, &overlap, &cfg), Err(Error::Config(_))));
        let single = toy_set(10, &[-1.0], 3);
        assert!(matches!(
            train(&single, &toy_set(5, &[0.0], 4), &cfg),
            Err(Error::Config(_))
        ));
        let empty = ConditionedSet::new(Matrix::zeros(0, 2), Matrix::zeros(0, 1)).unwrap();
        assert!(matches!(train(&empty, &overlap, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn long_interval_gives_single_final_evaluation() {
        let tr = toy_set(20, &[-1.0, 1.0], 1);
        let val = toy_set(20, &[0.0], 2);
        let cfg = TrainConfig {
            hidden_width: 8,
            epochs: 3,
            validation_interval: 10,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let out = train(&tr, &val, &cfg).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.history[0].epoch, 3);
        assert_eq!(out.best.epoch, 3);
    }

    #[test]
    fn training_is_deterministic_and_selects_minimum() {
        let tr = toy_set(40, &[-1.0, -0.5, 0.5, 1.0], 1);
        let val = toy_set(40, &[0.0], 2);
        let cfg = TrainConfig {
            hidden_width: 16,
            epochs: 40,
            validation_interval: 5,
            batch_size: 32,
            seed: 3,
            ..TrainConfig::default()
        };
        let a = train(&tr, &val, &cfg).unwrap();
        let b = train(&tr, &val, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.best, b.best);
        let min = a
            .history
            .iter()
            .map(|e| e.report.cumulative)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(a.best.val_kl, min);
        assert_eq!(a.history.len(), 8);
    }

    #[test]
    fn checkpoint_text_round_trips() {
        let ck = Checkpoint {
            pair: GanPair::new(2, 1, 3, 5, 9).unwrap(),
            epoch: 150,
            val_kl: 0.123456789,
        };
        let text = ck.to_text();
        assert!(text.starts_with("CGANv1 noise_dim=2 code_dim=1 feature_dim=3 epoch=150 val_kl="));
        assert_eq!(Checkpoint::from_text("ck", &text).unwrap(), ck);
        let broken = text.replacen("epoch=150", "epoch=x", 1);
        assert!(matches!(
            Checkpoint::from_text("ck", &broken),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn groups_preserve_first_appearance_order() {
        let set = ConditionedSet::new(
            Matrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]),
            Matrix::from_column_slice(4, 1, &[0.5, -0.5, 0.5, -0.5]),
        )
        .unwrap();
        let g = set.groups();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].code, vec![0.5]);
        assert_eq!(g[0].points.as_slice(), &[1.0, 3.0]);
        assert_eq!(ConditionedSet::from_groups(&g).unwrap().len(), 4);
    }
}
