//! One function per subcommand. Each returns the human-readable summary
//! lines printed on success.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mcgan_core::cgan::{self, Checkpoint, TrainOutcome};
use mcgan_core::datasets::{
    conditioned_from_table, magnitude_matrix, make_toy_splits, prepare_sim, projected_columns, sim_columns, sim_table,
    table_from_conditioned, toy_columns, CodeScale, Table,
};
use mcgan_core::density::{kl_between, KlEntry, ValidationScorer};
use mcgan_core::dynsim::{build_dataset, first_peak, TransmissibilityFeature};
use mcgan_core::features::{NormalizationModel, PcaModel, TransmissibilityPipeline};
use mcgan_core::nnet::Matrix;
use mcgan_core::{ConditionedSet, Error, KlReport, Result};

use crate::artifacts::{code_label, read_text, ArtifactWriter};
use crate::config::{Experiment, RunConfig};

pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const HISTORY_FILE: &str = "kl_history.csv";
pub const LEADERBOARD_FILE: &str = "leaderboard.csv";
pub const SWEEP_BEST_FILE: &str = "sweep_best_checkpoint.txt";
pub const KL_REPORT_FILE: &str = "kl_report.csv";
pub const MANIFOLD_FILE: &str = "manifold.csv";
pub const CURVES_FILE: &str = "transmissibility_mean.csv";
pub const PEAKS_FILE: &str = "first_peaks.csv";
pub const PCA_FILE: &str = "pca.txt";
pub const NORMALIZER_FILE: &str = "normalizer.txt";

/// Which held-out split a command reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            _ => Err("expected train, validation or test".into()),
        }
    }
}

pub fn split_file(experiment: Experiment, split: Split) -> String {
    format!("{}_{}.csv", experiment.prefix(), split.name())
}

/// Physical code range that maps onto `[-1, 1]`.
pub fn code_scale(cfg: &RunConfig) -> Result<CodeScale> {
    match cfg.experiment {
        Experiment::Toy => CodeScale::new(cfg.toy.angle_range.0, cfg.toy.angle_range.1),
        Experiment::Simulation => {
            let t = &cfg.sim.temperatures;
            let lo = t.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            CodeScale::new(lo, hi)
        }
    }
}

/// Column names of the model-facing tables.
pub fn model_columns(cfg: &RunConfig) -> Vec<String> {
    match cfg.experiment {
        Experiment::Toy => toy_columns(),
        Experiment::Simulation => projected_columns(cfg.sim.n_components),
    }
}

fn require(cfg: &RunConfig, experiment: Experiment, command: &str) -> Result<()> {
    if cfg.experiment != experiment {
        return Err(Error::Config(format!(
            "`{command}` needs `experiment = {}`, the config says `{}`",
            experiment.name(),
            cfg.experiment.name()
        )));
    }
    Ok(())
}

pub fn load_split(cfg: &RunConfig, data: &Path, split: Split) -> Result<ConditionedSet> {
    load_set(cfg, &data.join(split_file(cfg.experiment, split)))
}

pub fn load_set(cfg: &RunConfig, path: &Path) -> Result<ConditionedSet> {
    let table = Table::read(path)?;
    table.expect_columns(&path.display().to_string(), &model_columns(cfg))?;
    conditioned_from_table(&table, &code_scale(cfg)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_text(&path.display().to_string(), &read_text(path)?)
}

pub fn toy_gen(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    require(cfg, Experiment::Toy, "toy-gen")?;
    let data = make_toy_splits(&cfg.toy_config())?;
    let mut w = ArtifactWriter::new(out, "toy-gen", cfg)?;
    w.write(&split_file(cfg.experiment, Split::Train), &data.tables.train.to_csv())?;
    w.write(
        &split_file(cfg.experiment, Split::Validation),
        &data.tables.validation.to_csv(),
    )?;
    w.write(&split_file(cfg.experiment, Split::Test), &data.tables.test.to_csv())?;
    w.write("toy_splits.txt", &data.spec.to_manifest())?;
    w.finish(cfg)?;
    Ok(vec![format!(
        "toy data: {} training, {} validation, {} test angles × {} points in {}",
        data.spec.train.len(),
        data.spec.validation.len(),
        data.spec.test.len(),
        cfg.toy.n_points,
        out.display()
    )])
}

/// Mean raw curve per temperature, in input order.
fn mean_curves(features: &[TransmissibilityFeature]) -> Result<Table> {
    let mut temps: Vec<f64> = Vec::new();
    for f in features {
        if !temps.contains(&f.temperature) {
            temps.push(f.temperature);
        }
    }
    let width = features[0].values.len();
    let mut rows = Matrix::zeros(temps.len(), width + 1);
    for (r, &t) in temps.iter().enumerate() {
        let group: Vec<&TransmissibilityFeature> = features.iter().filter(|f| f.temperature == t).collect();
        rows[(r, 0)] = t;
        for c in 0..width {
            rows[(r, c + 1)] = group.iter().map(|f| f.values[c]).sum::<f64>() / group.len() as f64;
        }
    }
    let mut columns = vec!["temperature".to_string()];
    columns.extend(sim_columns(width).into_iter().skip(2));
    Table::new(columns, rows)
}

pub fn sim_gen(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    require(cfg, Experiment::Simulation, "sim-gen")?;
    let sim = &cfg.sim;
    let features = build_dataset(&sim.to_sim_config(cfg.seed)?)?;
    let data = prepare_sim(
        &features,
        sim.validation_temperature,
        sim.test_temperature,
        sim.n_components,
    )?;
    if data.scale != code_scale(cfg)? {
        return Err(Error::Config(
            "validation/test temperatures must lie inside the simulated range".into(),
        ));
    }
    let columns = projected_columns(sim.n_components);
    let projected = data.pipeline.transform(&magnitude_matrix(&features)?)?;
    let all = ConditionedSet::new(
        projected,
        Matrix::from_fn(features.len(), 1, |r, _| data.scale.to_code(features[r].temperature)),
    )?;

    let mut w = ArtifactWriter::new(out, "sim-gen", cfg)?;
    w.write("sim_raw.csv", &sim_table(&features)?.to_csv())?;
    w.write("sim_mean_curves.csv", &mean_curves(&features)?.to_csv())?;
    w.write(
        "sim_projected.csv",
        &table_from_conditioned(columns.clone(), &all, &data.scale)?.to_csv(),
    )?;
    for (split, set) in [
        (Split::Train, &data.sets.train),
        (Split::Validation, &data.sets.validation),
        (Split::Test, &data.sets.test),
    ] {
        let table = table_from_conditioned(columns.clone(), set, &data.scale)?;
        w.write(&split_file(cfg.experiment, split), &table.to_csv())?;
    }
    w.write("sim_splits.txt", &data.spec.to_manifest())?;
    w.write(PCA_FILE, &data.pipeline.pca.to_text())?;
    w.write(NORMALIZER_FILE, &data.pipeline.normalizer.to_text())?;
    w.finish(cfg)?;
    let explained: f64 = data.pipeline.pca.eigenvalues.iter().take(sim.n_components).sum::<f64>()
        / data.pipeline.pca.eigenvalues.iter().sum::<f64>();
    Ok(vec![
        format!(
            "simulated {} records over {} temperatures ({} values each) in {}",
            features.len(),
            sim.temperatures.len(),
            features[0].values.len(),
            out.display()
        ),
        format!(
            "PCA keeps {} components, {:.1}% of log-magnitude variance",
            sim.n_components,
            100.0 * explained
        ),
    ])
}

pub fn load_pipeline(data: &Path) -> Result<TransmissibilityPipeline> {
    let pca_path = data.join(PCA_FILE);
    let norm_path = data.join(NORMALIZER_FILE);
    Ok(TransmissibilityPipeline {
        pca: PcaModel::from_text(&pca_path.display().to_string(), &read_text(&pca_path)?)?,
        normalizer: NormalizationModel::from_text(&norm_path.display().to_string(), &read_text(&norm_path)?)?,
    })
}

fn history_csv(outcome: &TrainOutcome, scale: &CodeScale) -> String {
    let mut s = String::from("epoch,cumulative_kl");
    if let Some(first) = outcome.history.first() {
        for e in &first.report.entries {
            write!(s, ",kl_{}", code_label(scale.to_physical(e.code[0]))).unwrap();
        }
    }
    s.push('\n');
    for ev in &outcome.history {
        write!(s, "{},{:.16e}", ev.epoch, ev.report.cumulative).unwrap();
        for e in &ev.report.entries {
            write!(s, ",{:.16e}", e.kl).unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<Vec<String>> {
    let train = load_split(cfg, data, Split::Train)?;
    let validation = load_split(cfg, data, Split::Validation)?;
    let outcome = cgan::train(&train, &validation, &cfg.train_config(train.feature_dim())?)?;
    let scale = code_scale(cfg)?;
    let mut w = ArtifactWriter::new(out, "train", cfg)?;
    w.write(CHECKPOINT_FILE, &outcome.best.to_text())?;
    w.write(HISTORY_FILE, &history_csv(&outcome, &scale))?;
    w.finish(cfg)?;
    Ok(vec![format!(
        "best cumulative validation KL {:.4} at epoch {} (untrained {:.4}, {} evaluations)",
        outcome.best.val_kl,
        outcome.best.epoch,
        outcome.initial_kl,
        outcome.history.len()
    )])
}

/// Cumulative KL of `pair` on every code group of `set`, with the same
/// grid, bandwidth and noise stream as validation.
pub fn heldout_report(cfg: &RunConfig, pair: &mcgan_core::GanPair, set: &ConditionedSet) -> Result<KlReport> {
    let t = cfg.train_config(set.feature_dim())?;
    let scorer = ValidationScorer::new(
        &set.groups(),
        t.grid_for(set.feature_dim())?,
        t.kde_bandwidth,
        t.n_generate,
    )?;
    cgan::validation_report(pair, &scorer, cfg.seed)
}

/// One row of the sweep leaderboard.
#[derive(Clone, Debug)]
pub struct SweepRun {
    pub hidden_width: usize,
    pub restart: usize,
    pub seed: u64,
    pub outcome: std::result::Result<(Checkpoint, f64), String>,
}

impl SweepRun {
    pub fn val_kl(&self) -> f64 {
        self.outcome.as_ref().map(|(c, _)| c.val_kl).unwrap_or(f64::NAN)
    }

    pub fn test_kl(&self) -> f64 {
        self.outcome.as_ref().map(|(_, t)| *t).unwrap_or(f64::NAN)
    }
}

fn sweep_one(cfg: &RunConfig, sets: &[ConditionedSet; 3], width: usize, restart: usize) -> SweepRun {
    let seed = cfg.seed.wrapping_add(restart as u64);
    let mut run_cfg = cfg.clone();
    run_cfg.seed = seed;
    run_cfg.train.hidden_width = width;
    let outcome = (|| {
        let train_cfg = run_cfg.train_config(sets[0].feature_dim())?;
        let outcome = cgan::train(&sets[0], &sets[1], &train_cfg)?;
        let test = heldout_report(&run_cfg, &outcome.best.pair, &sets[2])?;
        Ok::<_, Error>((outcome.best, test.cumulative))
    })()
    .map_err(|e| e.to_string());
    SweepRun {
        hidden_width: width,
        restart,
        seed,
        outcome,
    }
}

/// Trains every (width, restart) pair; results come back in grid order
/// regardless of worker count.
pub fn run_sweep(cfg: &RunConfig, data: &Path) -> Result<Vec<SweepRun>> {
    let sets = [
        load_split(cfg, data, Split::Train)?,
        load_split(cfg, data, Split::Validation)?,
        load_split(cfg, data, Split::Test)?,
    ];
    let jobs: Vec<(usize, usize)> = cfg
        .sweep
        .widths
        .iter()
        .flat_map(|&w| (0..cfg.sweep.restarts).map(move |r| (w, r)))
        .collect();
    let workers = cfg.sweep.workers.min(jobs.len()).max(1);
    let mut runs: Vec<Option<SweepRun>> = vec![None; jobs.len()];
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|k| {
                let (jobs, sets) = (&jobs, &sets);
                scope.spawn(move || {
                    (k..jobs.len())
                        .step_by(workers)
                        .map(|i| (i, sweep_one(cfg, sets, jobs[i].0, jobs[i].1)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, run) in h.join().expect("sweep worker panicked") {
                runs[i] = Some(run);
            }
        }
    });
    Ok(runs.into_iter().map(|r| r.expect("every job ran")).collect())
}

/// Successful runs by ascending validation KL, failures last in grid order.
pub fn rank(runs: &[SweepRun]) -> Vec<&SweepRun> {
    let mut ranked: Vec<&SweepRun> = runs.iter().collect();
    ranked.sort_by(|a, b| match (a.outcome.is_ok(), b.outcome.is_ok()) {
        (true, true) => a.val_kl().total_cmp(&b.val_kl()),
        (true, false) => std::cmp::Ordering::Less,
        (false, true) => std::cmp::Ordering::Greater,
        (false, false) => std::cmp::Ordering::Equal,
    });
    ranked
}

pub fn leaderboard_csv(ranked: &[&SweepRun]) -> String {
    let mut s = String::from("rank,hidden_width,restart,seed,best_epoch,val_kl,test_kl,status\n");
    for (i, r) in ranked.iter().enumerate() {
        match &r.outcome {
            Ok((c, test)) => writeln!(
                s,
                "{},{},{},{},{},{:.16e},{:.16e},ok",
                i + 1,
                r.hidden_width,
                r.restart,
                r.seed,
                c.epoch,
                c.val_kl,
                test
            ),
            Err(msg) => writeln!(
                s,
                "{},{},{},{},,,,failed: {}",
                i + 1,
                r.hidden_width,
                r.restart,
                r.seed,
                msg.replace([',', '\n', '"'], " ")
            ),
        }
        .unwrap();
    }
    s
}

pub fn sweep(cfg: &RunConfig, data: &Path, out: &Path) -> Result<Vec<String>> {
    let runs = run_sweep(cfg, data)?;
    let ranked = rank(&runs);
    let mut w = ArtifactWriter::new(out, "sweep", cfg)?;
    w.write(LEADERBOARD_FILE, &leaderboard_csv(&ranked))?;
    let mut lines = Vec::new();
    match ranked.first().and_then(|r| r.outcome.as_ref().ok().map(|o| (r, o))) {
        Some((r, (best, test))) => {
            w.write(SWEEP_BEST_FILE, &best.to_text())?;
            lines.push(format!(
                "selected width {} (restart {}): validation KL {:.4}, test KL {:.4}",
                r.hidden_width, r.restart, best.val_kl, test
            ));
        }
        None => {
            w.finish(cfg)?;
            return Err(Error::Numeric("every sweep run failed; see the leaderboard".into()));
        }
    }
    w.finish(cfg)?;
    let failed = runs.iter().filter(|r| r.outcome.is_err()).count();
    lines.push(format!("{} runs, {failed} failed", runs.len()));
    Ok(lines)
}

pub struct EvaluateArgs {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    /// Physical codes; empty evaluates every code in the dataset.
    pub codes: Vec<f64>,
    /// Score the real points against themselves instead of the generator.
    pub replay: bool,
}

pub fn evaluate(cfg: &RunConfig, args: &EvaluateArgs, out: &Path) -> Result<Vec<String>> {
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let set = load_set(cfg, &args.dataset)?;
    let scale = code_scale(cfg)?;
    let groups = set.groups();
    let physical: Vec<f64> = groups.iter().map(|g| scale.to_physical(g.code[0])).collect();
    let selected: Vec<usize> = if args.codes.is_empty() {
        (0..groups.len()).collect()
    } else {
        args.codes
            .iter()
            .map(|&c| {
                physical
                    .iter()
                    .position(|&p| (p - c).abs() <= 1e-9 * c.abs().max(1.0) || code_label(p) == code_label(c))
                    .ok_or_else(|| {
                        let have: Vec<String> = physical.iter().map(|p| code_label(*p)).collect();
                        Error::Lookup(format!(
                            "code {c} is not in {}; available: {}",
                            args.dataset.display(),
                            have.join(", ")
                        ))
                    })
            })
            .collect::<Result<_>>()?
    };
    let t = cfg.train_config(set.feature_dim())?;
    let grid = t.grid_for(set.feature_dim())?;
    let columns = model_columns(cfg);
    let mut rng = cgan::evaluation_rng(cfg.seed);
    let mut w = ArtifactWriter::new(out, "evaluate", cfg)?;
    let mut entries = Vec::new();
    for &i in &selected {
        let g = &groups[i];
        let generated = if args.replay {
            g.points.clone()
        } else {
            cgan::generate(&checkpoint.pair, &g.code, g.points.nrows(), &mut rng)?
        };
        let kl = kl_between(&g.points, &generated, t.kde_bandwidth, &grid)?;
        let label = code_label(physical[i]);
        for (kind, pts) in [("real", &g.points), ("generated", &generated)] {
            let table = table_from_conditioned(columns.clone(), &single_code(pts, g.code[0])?, &scale)?;
            w.write(&format!("points/{kind}_{label}.csv"), &table.to_csv())?;
        }
        entries.push(KlEntry {
            code: vec![physical[i]],
            kl,
        });
    }
    let report = KlReport::from_entries(entries);
    w.write(KL_REPORT_FILE, &report.to_csv())?;
    w.finish(cfg)?;
    let mut lines: Vec<String> = report
        .entries
        .iter()
        .map(|e| format!("code {}: KL {:.4}", code_label(e.code[0]), e.kl))
        .collect();
    lines.push(format!("total KL {:.4}", report.cumulative));
    Ok(lines)
}

fn single_code(points: &Matrix, code: f64) -> Result<ConditionedSet> {
    ConditionedSet::new(points.clone(), Matrix::from_element(points.nrows(), 1, code))
}

pub struct GenerateArgs {
    pub checkpoint: PathBuf,
    /// Directory holding the training split and, for simulations, the
    /// PCA and normalizer files.
    pub data: PathBuf,
    pub code_min: Option<f64>,
    pub code_max: Option<f64>,
    pub n_codes: usize,
    pub n_samples: usize,
}

/// Codes spaced evenly over `[lo, hi]`, inclusive.
pub fn code_sweep(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

pub fn generate(cfg: &RunConfig, args: &GenerateArgs, out: &Path) -> Result<(Vec<String>, Vec<String>)> {
    if args.n_codes == 0 || args.n_samples == 0 {
        return Err(Error::Config("n_codes and n_samples must be positive".into()));
    }
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let scale = code_scale(cfg)?;
    let train = load_split(cfg, &args.data, Split::Train)?;
    let trained: Vec<f64> = train.groups().iter().map(|g| scale.to_physical(g.code[0])).collect();
    let t_lo = trained.iter().copied().fold(f64::INFINITY, f64::min);
    let t_hi = trained.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = args.code_min.unwrap_or(t_lo);
    let hi = args.code_max.unwrap_or(t_hi);
    if !(hi >= lo) {
        return Err(Error::Config(format!("code range [{lo}, {hi}] is inverted")));
    }
    let mut warnings = Vec::new();
    if lo < t_lo - 1e-9 || hi > t_hi + 1e-9 {
        warnings.push(format!(
            "code range [{lo}, {hi}] leaves the trained range [{t_lo}, {t_hi}]; samples outside it are extrapolated"
        ));
    }
    let codes = code_sweep(lo, hi, args.n_codes);
    let mut rng = cgan::evaluation_rng(cfg.seed);
    let d = checkpoint.pair.feature_dim();
    let mut all = Matrix::zeros(codes.len() * args.n_samples, d);
    let mut code_col = Matrix::zeros(codes.len() * args.n_samples, 1);
    for (k, &c) in codes.iter().enumerate() {
        let pts = cgan::generate(&checkpoint.pair, &[scale.to_code(c)], args.n_samples, &mut rng)?;
        all.rows_mut(k * args.n_samples, args.n_samples).copy_from(&pts);
        code_col
            .rows_mut(k * args.n_samples, args.n_samples)
            .fill(scale.to_code(c));
    }
    let set = ConditionedSet::new(all, code_col)?;
    let mut w = ArtifactWriter::new(out, "generate", cfg)?;
    w.write(
        MANIFOLD_FILE,
        &table_from_conditioned(model_columns(cfg), &set, &scale)?.to_csv(),
    )?;
    let mut lines = vec![format!(
        "generated {} samples at each of {} codes in [{lo}, {hi}]",
        args.n_samples,
        codes.len()
    )];
    if cfg.experiment == Experiment::Simulation {
        let pipeline = load_pipeline(&args.data)?;
        let grid = cfg.sim.to_sim_config(cfg.seed)?.grid;
        let hz = grid.hz();
        let curves = pipeline.inverse(&set.features)?;
        let width = curves.ncols();
        if width != 2 * hz.len() {
            return Err(Error::Shape(format!(
                "PCA model reconstructs {width} values, the frequency grid implies {}",
                2 * hz.len()
            )));
        }
        let mut means = Matrix::zeros(codes.len(), width + 1);
        let mut peaks = String::from("temperature,first_peak_t21_hz,first_peak_t32_hz\n");
        for (k, &c) in codes.iter().enumerate() {
            let block = curves.rows(k * args.n_samples, args.n_samples);
            let mean: Vec<f64> = block.column_iter().map(|col| col.mean()).collect();
            means[(k, 0)] = c;
            for (j, v) in mean.iter().enumerate() {
                means[(k, j + 1)] = *v;
            }
            let peak = |v: &[f64]| first_peak(v, &hz).map_or("nan".to_string(), |f| format!("{f:.16e}"));
            writeln!(
                peaks,
                "{:.16e},{},{}",
                c,
                peak(&mean[..hz.len()]),
                peak(&mean[hz.len()..])
            )
            .unwrap();
        }
        let mut columns = vec!["temperature".to_string()];
        columns.extend(sim_columns(width).into_iter().skip(2));
        w.write(CURVES_FILE, &Table::new(columns, means)?.to_csv())?;
        w.write(PEAKS_FILE, &peaks)?;
        lines.push("wrote mean reconstructed transmissibilities and their first peaks".into());
    }
    w.finish(cfg)?;
    Ok((lines, warnings))
}
