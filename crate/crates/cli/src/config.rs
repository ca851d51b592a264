//! Flat `key = value` run configuration.
//!
//! Keys carry a section prefix (`train.`, `toy.`, `sim.`, `sweep.`) except
//! for the top-level `experiment`, `seed` and `out`. Blank lines and `#`
//! comments are ignored; unknown or repeated keys are errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use mcgan_core::cgan::TrainConfig;
use mcgan_core::datasets::ToyConfig;
use mcgan_core::density::EvalGrid;
use mcgan_core::dynsim::{default_temperatures, FrequencyGrid, SimConfig};
use mcgan_core::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Toy,
    Simulation,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Toy => "toy",
            Experiment::Simulation => "simulation",
        }
    }

    /// File-name prefix of this experiment's datasets.
    pub fn prefix(self) -> &'static str {
        match self {
            Experiment::Toy => "toy",
            Experiment::Simulation => "sim",
        }
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "toy" => Ok(Experiment::Toy),
            "simulation" | "sim" => Ok(Experiment::Simulation),
            _ => Err("expected `toy` or `simulation`".into()),
        }
    }
}

/// Simulation data settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SimSettings {
    pub n_per_temperature: usize,
    pub temperatures: Vec<f64>,
    pub humidity_min: f64,
    pub humidity_max: f64,
    pub noise_fraction: f64,
    pub freq_min_hz: f64,
    pub freq_max_hz: f64,
    pub n_freq: usize,
    pub force_dof: usize,
    pub validation_temperature: f64,
    pub test_temperature: f64,
    pub n_components: usize,
}

impl Default for SimSettings {
    fn default() -> Self {
        let d = SimConfig::default();
        let hz = d.grid.hz();
        SimSettings {
            n_per_temperature: d.n_per_temperature,
            temperatures: default_temperatures(),
            humidity_min: d.humidity_range.0,
            humidity_max: d.humidity_range.1,
            noise_fraction: d.noise_fraction,
            freq_min_hz: hz[0],
            freq_max_hz: hz[hz.len() - 1],
            n_freq: hz.len(),
            force_dof: d.force_dof,
            validation_temperature: 24.0,
            test_temperature: 34.0,
            n_components: 3,
        }
    }
}

impl SimSettings {
    pub fn to_sim_config(&self, seed: u64) -> Result<SimConfig> {
        Ok(SimConfig {
            temperatures: self.temperatures.clone(),
            n_per_temperature: self.n_per_temperature,
            humidity_range: (self.humidity_min, self.humidity_max),
            grid: FrequencyGrid::linear_hz(self.freq_min_hz, self.freq_max_hz, self.n_freq)?,
            noise_fraction: self.noise_fraction,
            force_dof: self.force_dof,
            seed,
            ..SimConfig::default()
        })
    }
}

/// Hidden widths × random restarts. Discriminator width mirrors the generator's.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub widths: Vec<usize>,
    pub restarts: usize,
    pub workers: usize,
}

impl SweepSpec {
    pub fn desk() -> Self {
        SweepSpec {
            widths: vec![50, 100, 200, 500],
            restarts: 3,
            workers: 1,
        }
    }

    /// 10, 20, …, 800 with ten restarts each.
    pub fn paper() -> Self {
        SweepSpec {
            widths: (1..=80).map(|i| 10 * i).collect(),
            restarts: 10,
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config(
                "sweep.widths must be a non-empty list of positive widths".into(),
            ));
        }
        if self.widths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("sweep.widths must be strictly ascending".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Config("sweep.restarts must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("sweep.workers must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub train: TrainConfig,
    /// Points per axis of the evaluation grid; 0 picks the per-dimension default.
    pub grid_resolution: usize,
    pub grid_bound: f64,
    pub toy: ToyConfig,
    pub sim: SimSettings,
    pub sweep: SweepSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: Experiment::Toy,
            seed: 0,
            out: None,
            train: TrainConfig::default(),
            grid_resolution: 0,
            grid_bound: 1.2,
            toy: ToyConfig::default(),
            sim: SimSettings::default(),
            sweep: SweepSpec::desk(),
        }
    }
}

fn parse_value<T: FromStr>(raw: &str) -> std::result::Result<T, String> {
    raw.parse().map_err(|_| format!("`{raw}` is not a valid value"))
}

fn parse_list<T: FromStr>(raw: &str) -> std::result::Result<Vec<T>, String> {
    raw.split(',').map(|s| parse_value(s.trim())).collect()
}

fn parse_bool(raw: &str) -> std::result::Result<bool, String> {
    match raw {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("`{raw}` is not `true` or `false`")),
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn parse(source: &str, text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        let mut paper_sweep = false;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fail = |msg: String| Error::Config(format!("{source}:{}: {msg}", i + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| fail(format!("expected `key = value`, found `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(fail(format!("`{key}` is set twice")));
            }
            seen.push(key.to_string());
            if key == "sweep.paper_scale" {
                paper_sweep = parse_bool(value).map_err(|m| fail(format!("`{key}`: {m}")))?;
                continue;
            }
            cfg.set(key, value).map_err(|m| fail(format!("`{key}`: {m}")))?;
        }
        if paper_sweep {
            cfg.use_paper_sweep(&seen);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&path.display().to_string(), &text)
    }

    /// Switches to the paper-scale sweep, keeping explicitly configured keys.
    pub fn use_paper_sweep(&mut self, explicit: &[String]) {
        let paper = SweepSpec::paper();
        if !explicit.iter().any(|k| k == "sweep.widths") {
            self.sweep.widths = paper.widths;
        }
        if !explicit.iter().any(|k| k == "sweep.restarts") {
            self.sweep.restarts = paper.restarts;
        }
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let t = &mut self.train;
        match key {
            "experiment" => self.experiment = v.parse()?,
            "seed" => self.seed = parse_value(v)?,
            "out" => self.out = Some(PathBuf::from(v)),
            "train.noise_dim" => t.noise_dim = parse_value(v)?,
            "train.hidden_width" => t.hidden_width = parse_value(v)?,
            "train.epochs" => t.epochs = parse_value(v)?,
            "train.batch_size" => t.batch_size = parse_value(v)?,
            "train.validation_interval" => t.validation_interval = parse_value(v)?,
            "train.kde_bandwidth" => t.kde_bandwidth = parse_value(v)?,
            "train.n_generate" => t.n_generate = Some(parse_value(v)?).filter(|n| *n > 0),
            "train.learning_rate" => t.adam.learning_rate = parse_value(v)?,
            "train.beta1" => t.adam.beta1 = parse_value(v)?,
            "train.beta2" => t.adam.beta2 = parse_value(v)?,
            "train.epsilon" => t.adam.epsilon = parse_value(v)?,
            "train.grid_resolution" => self.grid_resolution = parse_value(v)?,
            "train.grid_bound" => self.grid_bound = parse_value(v)?,
            "toy.n_points" => self.toy.n_points = parse_value(v)?,
            "toy.y_std" => self.toy.y_std = parse_value(v)?,
            "toy.angle_min" => self.toy.angle_range.0 = parse_value(v)?,
            "toy.angle_max" => self.toy.angle_range.1 = parse_value(v)?,
            "toy.n_train_angles" => self.toy.n_train_angles = parse_value(v)?,
            "toy.n_validation_angles" => self.toy.n_validation_angles = parse_value(v)?,
            "toy.n_test_angles" => self.toy.n_test_angles = parse_value(v)?,
            "sim.n_per_temperature" => self.sim.n_per_temperature = parse_value(v)?,
            "sim.temperatures" => self.sim.temperatures = parse_list(v)?,
            "sim.humidity_min" => self.sim.humidity_min = parse_value(v)?,
            "sim.humidity_max" => self.sim.humidity_max = parse_value(v)?,
            "sim.noise_fraction" => self.sim.noise_fraction = parse_value(v)?,
            "sim.freq_min_hz" => self.sim.freq_min_hz = parse_value(v)?,
            "sim.freq_max_hz" => self.sim.freq_max_hz = parse_value(v)?,
            "sim.n_freq" => self.sim.n_freq = parse_value(v)?,
            "sim.force_dof" => self.sim.force_dof = parse_value(v)?,
            "sim.validation_temperature" => self.sim.validation_temperature = parse_value(v)?,
            "sim.test_temperature" => self.sim.test_temperature = parse_value(v)?,
            "sim.n_components" => self.sim.n_components = parse_value(v)?,
            "sweep.widths" => self.sweep.widths = parse_list(v)?,
            "sweep.restarts" => self.sweep.restarts = parse_value(v)?,
            "sweep.workers" => self.sweep.workers = parse_value(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.sweep.validate()?;
        if !(self.grid_bound > 0.0) {
            return Err(Error::Config("train.grid_bound must be positive".into()));
        }
        if self.grid_resolution == 1 {
            return Err(Error::Config(
                "train.grid_resolution needs at least 2 points per axis".into(),
            ));
        }
        if !(self.toy.angle_range.1 > self.toy.angle_range.0) {
            return Err(Error::Config("toy.angle_max must exceed toy.angle_min".into()));
        }
        if self.sim.n_components == 0 {
            return Err(Error::Config("sim.n_components must be positive".into()));
        }
        Ok(())
    }

    /// Every setting in a fixed order, one `key = value` per line. Hashing
    /// this text identifies a run.
    pub fn canonical(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        put("experiment", self.experiment.name().into());
        put("seed", self.seed.to_string());
        put("train.noise_dim", t.noise_dim.to_string());
        put("train.hidden_width", t.hidden_width.to_string());
        put("train.epochs", t.epochs.to_string());
        put("train.batch_size", t.batch_size.to_string());
        put("train.validation_interval", t.validation_interval.to_string());
        put("train.kde_bandwidth", t.kde_bandwidth.to_string());
        put("train.n_generate", t.n_generate.unwrap_or(0).to_string());
        put("train.learning_rate", t.adam.learning_rate.to_string());
        put("train.beta1", t.adam.beta1.to_string());
        put("train.beta2", t.adam.beta2.to_string());
        put("train.epsilon", t.adam.epsilon.to_string());
        put("train.grid_resolution", self.grid_resolution.to_string());
        put("train.grid_bound", self.grid_bound.to_string());
        put("toy.n_points", self.toy.n_points.to_string());
        put("toy.y_std", self.toy.y_std.to_string());
        put("toy.angle_min", self.toy.angle_range.0.to_string());
        put("toy.angle_max", self.toy.angle_range.1.to_string());
        put("toy.n_train_angles", self.toy.n_train_angles.to_string());
        put("toy.n_validation_angles", self.toy.n_validation_angles.to_string());
        put("toy.n_test_angles", self.toy.n_test_angles.to_string());
        let m = &self.sim;
        put("sim.n_per_temperature", m.n_per_temperature.to_string());
        put("sim.temperatures", join(&m.temperatures));
        put("sim.humidity_min", m.humidity_min.to_string());
        put("sim.humidity_max", m.humidity_max.to_string());
        put("sim.noise_fraction", m.noise_fraction.to_string());
        put("sim.freq_min_hz", m.freq_min_hz.to_string());
        put("sim.freq_max_hz", m.freq_max_hz.to_string());
        put("sim.n_freq", m.n_freq.to_string());
        put("sim.force_dof", m.force_dof.to_string());
        put("sim.validation_temperature", m.validation_temperature.to_string());
        put("sim.test_temperature", m.test_temperature.to_string());
        put("sim.n_components", m.n_components.to_string());
        put("sweep.widths", join(&self.sweep.widths));
        put("sweep.restarts", self.sweep.restarts.to_string());
        s
    }

    /// SHA-256 of [`RunConfig::canonical`], hex encoded. The output
    /// directory and worker count do not affect results and are excluded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            write!(s, "{b:02x}").unwrap();
            s
        })
    }

    /// Training settings with the seed and evaluation grid resolved for
    /// `feature_dim`-dimensional features.
    pub fn train_config(&self, feature_dim: usize) -> Result<TrainConfig> {
        let mut t = self.train.clone();
        t.seed = self.seed;
        t.grid = Some(self.grid(feature_dim)?);
        Ok(t)
    }

    pub fn grid(&self, dim: usize) -> Result<EvalGrid> {
        let default = EvalGrid::default_for_dim(dim)?;
        let res = if self.grid_resolution == 0 {
            default.resolution()[0]
        } else {
            self.grid_resolution
        };
        EvalGrid::uniform(dim, -self.grid_bound, self.grid_bound, res)
    }

    pub fn toy_config(&self) -> ToyConfig {
        ToyConfig {
            seed: self.seed,
            ..self.toy.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_text() {
        let cfg = RunConfig::parse("c", "# nothing\n\n").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn keys_are_applied() {
        let text = "experiment = simulation\nseed = 9\ntrain.epochs = 12\nsim.temperatures = 20, 30, 40\nsweep.widths = 5,10\n";
        let cfg = RunConfig::parse("c", text).unwrap();
        assert_eq!(cfg.experiment, Experiment::Simulation);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.epochs, 12);
        assert_eq!(cfg.sim.temperatures, vec![20.0, 30.0, 40.0]);
        assert_eq!(cfg.sweep.widths, vec![5, 10]);
    }

    #[test]
    fn unknown_repeated_and_malformed_keys_fail_with_line_numbers() {
        for (text, needle) in [
            ("train.epoch = 3\n", "c:1: `train.epoch`: unknown key"),
            ("seed = 1\nseed = 2\n", "c:2: `seed` is set twice"),
            ("\nseed\n", "c:2: expected `key = value`"),
            ("train.epochs = many\n", "c:1: `train.epochs`"),
        ] {
            match RunConfig::parse("c", text) {
                Err(Error::Config(msg)) => assert!(msg.starts_with(needle), "{msg}"),
                other => panic!("{other:?}"),
            }
        }
        assert!(matches!(
            RunConfig::parse("c", "train.epochs = 0\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::parse("c", "sweep.widths = 50,20\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn paper_scale_sweep_respects_explicit_keys() {
        let cfg = RunConfig::parse("c", "sweep.paper_scale = true\n").unwrap();
        assert_eq!(cfg.sweep.widths.len(), 80);
        assert_eq!(cfg.sweep.widths[79], 800);
        assert_eq!(cfg.sweep.restarts, 10);
        let cfg = RunConfig::parse("c", "sweep.paper_scale = true\nsweep.restarts = 2\n").unwrap();
        assert_eq!(cfg.sweep.restarts, 2);
    }

    #[test]
    fn canonical_text_round_trips_and_hash_tracks_it() {
        let mut cfg = RunConfig {
            seed: 4,
            ..RunConfig::default()
        };
        cfg.sim.temperatures = vec![20.0, 25.5, 40.0];
        let again = RunConfig::parse("c", &cfg.canonical()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
        cfg.train.epochs += 1;
        assert_ne!(again.hash(), cfg.hash());
    }
}
