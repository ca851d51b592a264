//! Rotated-line benchmark data, code-based train/validation/test splits,
//! and the CSV tables every dataset is persisted as.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cgan::ConditionedSet;
use crate::density::CodeGroup;
use crate::dynsim::TransmissibilityFeature;
use crate::error::{Error, Result};
use crate::features::TransmissibilityPipeline;
use crate::nnet::{fmt_f64, Matrix};

use std::f64::consts::{FRAC_PI_2, PI};

/// Affine map from a physical parameter interval onto code space `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CodeScale {
    pub lower: f64,
    pub upper: f64,
}

impl CodeScale {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(upper > lower) || !lower.is_finite() || !upper.is_finite() {
            return Err(Error::Config(format!("code range [{lower}, {upper}] is empty")));
        }
        Ok(CodeScale { lower, upper })
    }

    /// Rotation angles of the toy benchmark, `[-π/2, 2π/5]`.
    pub fn toy() -> Self {
        CodeScale {
            lower: -FRAC_PI_2,
            upper: 2.0 * PI / 5.0,
        }
    }

    /// Temperatures, `[20, 40]` °C.
    pub fn temperature() -> Self {
        CodeScale {
            lower: 20.0,
            upper: 40.0,
        }
    }

    pub fn to_code(&self, physical: f64) -> f64 {
        2.0 * (physical - self.lower) / (self.upper - self.lower) - 1.0
    }

    pub fn to_physical(&self, code: f64) -> f64 {
        (code + 1.0) * 0.5 * (self.upper - self.lower) + self.lower
    }

    pub fn contains(&self, physical: f64) -> bool {
        (self.lower..=self.upper).contains(&physical)
    }
}

/// Header plus numeric rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Matrix,
}

impl Table {
    pub fn new(columns: Vec<String>, rows: Matrix) -> Result<Self> {
        if columns.len() != rows.ncols() {
            return Err(Error::Shape(format!(
                "{} column names for {} columns",
                columns.len(),
                rows.ncols()
            )));
        }
        Ok(Table { columns, rows })
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for row in self.rows.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn from_csv(source: &str, text: &str) -> Result<Self> {
        if text.lines().all(|l| l.trim().is_empty() || l.starts_with('#')) {
            return Err(Error::EmptyDataset(format!("{source} is empty")));
        }
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let columns: Vec<String> = reader
            .headers()
            .map_err(|e| Error::parse(source, 1, e.to_string()))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        if columns.iter().any(String::is_empty) {
            return Err(Error::parse(source, 1, "blank column name in header"));
        }
        let mut values = Vec::new();
        let mut n = 0;
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                Error::parse(source, line, e.to_string())
            })?;
            let line = record.position().map(|p| p.line() as usize).unwrap_or(n + 2);
            if record.len() != columns.len() {
                return Err(Error::parse(
                    source,
                    line,
                    format!("expected {} fields, found {}", columns.len(), record.len()),
                ));
            }
            for (field, name) in record.iter().zip(&columns) {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(source, line, format!("column `{name}`: `{field}` is not a number")))?;
                values.push(v);
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyDataset(format!("{source} has a header but no rows")));
        }
        Ok(Table {
            rows: Matrix::from_row_slice(n, columns.len(), &values),
            columns,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&path.display().to_string(), &text)
    }

    /// Fails with a header parse error unless the columns are exactly `expected`.
    pub fn expect_columns(&self, source: &str, expected: &[String]) -> Result<()> {
        if self.columns != expected {
            return Err(Error::parse(
                source,
                1,
                format!("unexpected header; expected `{}`", expected.join(",")),
            ));
        }
        Ok(())
    }
}

/// Toy CSV header.
pub fn toy_columns() -> Vec<String> {
    ["angle", "x", "y"].iter().map(|s| s.to_string()).collect()
}

/// Raw simulation CSV header: `temperature,humidity,f_0001,…`.
pub fn sim_columns(n_values: usize) -> Vec<String> {
    let mut cols = vec!["temperature".to_string(), "humidity".to_string()];
    cols.extend((1..=n_values).map(|i| format!("f_{i:04}")));
    cols
}

/// Model-facing simulation CSV header: `temperature,pc_1,…`. Humidity is
/// deliberately absent.
pub fn projected_columns(n_components: usize) -> Vec<String> {
    let mut cols = vec!["temperature".to_string()];
    cols.extend((1..=n_components).map(|i| format!("pc_{i}")));
    cols
}

pub fn sim_table(features: &[TransmissibilityFeature]) -> Result<Table> {
    let first = features
        .first()
        .ok_or_else(|| Error::EmptyDataset("no simulation records".into()))?;
    let width = first.values.len();
    if features.iter().any(|f| f.values.len() != width) {
        return Err(Error::Shape("simulation records differ in length".into()));
    }
    let rows = Matrix::from_fn(features.len(), width + 2, |r, c| match c {
        0 => features[r].temperature,
        1 => features[r].humidity,
        _ => features[r].values[c - 2],
    });
    Table::new(sim_columns(width), rows)
}

pub fn features_from_sim_table(table: &Table) -> Result<Vec<TransmissibilityFeature>> {
    if table.columns.len() < 3 || table.columns[0] != "temperature" || table.columns[1] != "humidity" {
        return Err(Error::Input(
            "simulation table must start with temperature,humidity".into(),
        ));
    }
    Ok(table
        .rows
        .row_iter()
        .map(|r| TransmissibilityFeature {
            temperature: r[0],
            humidity: r[1],
            values: r.iter().skip(2).copied().collect(),
        })
        .collect())
}

/// A table whose first column is the physical code and the rest are
/// features, converted to code space with `scale`.
pub fn conditioned_from_table(table: &Table, scale: &CodeScale) -> Result<ConditionedSet> {
    if table.rows.ncols() < 2 {
        return Err(Error::Input(
            "table needs a code column and at least one feature".into(),
        ));
    }
    let n = table.rows.nrows();
    let features = table.rows.columns(1, table.rows.ncols() - 1).into_owned();
    let codes = Matrix::from_fn(n, 1, |r, _| scale.to_code(table.rows[(r, 0)]));
    ConditionedSet::new(features, codes)
}

pub fn table_from_conditioned(columns: Vec<String>, set: &ConditionedSet, scale: &CodeScale) -> Result<Table> {
    if set.code_dim() != 1 {
        return Err(Error::Shape("tables carry exactly one code column".into()));
    }
    let rows = Matrix::from_fn(set.len(), set.feature_dim() + 1, |r, c| {
        if c == 0 {
            scale.to_physical(set.codes[(r, 0)])
        } else {
            set.features[(r, c - 1)]
        }
    });
    Table::new(columns, rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyConfig {
    pub n_points: usize,
    pub y_std: f64,
    /// Interval spanned by the training angles (radians).
    pub angle_range: (f64, f64),
    pub n_train_angles: usize,
    pub n_validation_angles: usize,
    pub n_test_angles: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            n_points: 500,
            y_std: 0.03,
            angle_range: (-FRAC_PI_2, 2.0 * PI / 5.0),
            n_train_angles: 11,
            n_validation_angles: 5,
            n_test_angles: 5,
            seed: 0,
        }
    }
}

/// `x ~ U[-1, 1]`, `y ~ N(0, y_std²)`.
pub fn base_line<R: Rng + ?Sized>(n: usize, y_std: f64, rng: &mut R) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::Input("base line needs at least one point".into()));
    }
    if !(y_std >= 0.0) {
        return Err(Error::Config("y_std must be non-negative".into()));
    }
    let mut m = Matrix::zeros(n, 2);
    for r in 0..n {
        m[(r, 0)] = rng.random_range(-1.0..=1.0);
        m[(r, 1)] = y_std * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(m)
}

/// Rotates every row of an `n × 2` matrix by `theta` about the origin.
pub fn rotate(points: &Matrix, theta: f64) -> Matrix {
    let (s, c) = theta.sin_cos();
    Matrix::from_fn(points.nrows(), 2, |r, j| {
        let (x, y) = (points[(r, 0)], points[(r, 1)]);
        if j == 0 {
            c * x - s * y
        } else {
            s * x + c * y
        }
    })
}

/// Physical code values of each split.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
    pub test: Vec<f64>,
}

impl SplitSpec {
    /// Pairwise disjoint, and validation/test strictly inside the training range.
    pub fn validate(&self) -> Result<()> {
        if self.train.len() < 2 {
            return Err(Error::Config("training split needs at least two codes".into()));
        }
        let lo = self.train.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.train.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (name, held) in [("validation", &self.validation), ("test", &self.test)] {
            if let Some(v) = held.iter().find(|v| self.train.contains(v)) {
                return Err(Error::Config(format!("{name} code {v} overlaps the training split")));
            }
            if let Some(v) = held.iter().find(|v| !(**v > lo && **v < hi)) {
                return Err(Error::Config(format!("{name} code {v} is outside the training range")));
            }
        }
        if let Some(v) = self.validation.iter().find(|v| self.test.contains(v)) {
            return Err(Error::Config(format!("code {v} is in both validation and test")));
        }
        Ok(())
    }

    /// `train = a,b,…` style manifest.
    pub fn to_manifest(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        writeln!(s, "train = {}", join(&self.train)).unwrap();
        writeln!(s, "validation = {}", join(&self.validation)).unwrap();
        writeln!(s, "test = {}", join(&self.test)).unwrap();
        s
    }

    pub fn from_manifest(source: &str, text: &str) -> Result<Self> {
        let mut spec = SplitSpec {
            train: vec![],
            validation: vec![],
            test: vec![],
        };
        let mut seen = [false; 3];
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(source, i + 1, "expected `<split> = <codes>`"))?;
            let values = value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::parse(source, i + 1, "non-numeric code"))?;
            let slot = match key.trim() {
                "train" => 0,
                "validation" => 1,
                "test" => 2,
                other => return Err(Error::parse(source, i + 1, format!("unknown split `{other}`"))),
            };
            seen[slot] = true;
            *[&mut spec.train, &mut spec.validation, &mut spec.test][slot] = values;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::parse(
                source,
                text.lines().count(),
                "manifest must list train, validation and test",
            ));
        }
        Ok(spec)
    }
}

/// Training angles equally spaced over the range (endpoints included);
/// validation angles at the midpoints of even-indexed gaps, test angles at
/// the midpoints of odd-indexed gaps.
pub fn toy_split_angles(cfg: &ToyConfig) -> Result<SplitSpec> {
    let (lo, hi) = cfg.angle_range;
    if !(hi > lo) || lo < -FRAC_PI_2 - 1e-12 || hi > FRAC_PI_2 + 1e-12 {
        return Err(Error::Config(format!(
            "angle range [{lo}, {hi}] must be a non-empty interval inside [-π/2, π/2]"
        )));
    }
    if cfg.n_train_angles < 2 || cfg.n_validation_angles == 0 || cfg.n_test_angles == 0 {
        return Err(Error::Config(
            "need ≥ 2 training angles and ≥ 1 validation and test angle".into(),
        ));
    }
    let gaps = cfg.n_train_angles - 1;
    let even: Vec<usize> = (0..gaps).step_by(2).collect();
    let odd: Vec<usize> = (1..gaps).step_by(2).collect();
    if cfg.n_validation_angles > even.len() || cfg.n_test_angles > odd.len() {
        return Err(Error::Config(format!(
            "{} training angles leave room for at most {} validation and {} test angles",
            cfg.n_train_angles,
            even.len(),
            odd.len()
        )));
    }
    let step = (hi - lo) / gaps as f64;
    let train: Vec<f64> = (0..cfg.n_train_angles).map(|i| lo + step * i as f64).collect();
    let midpoint = |g: usize| lo + step * (g as f64 + 0.5);
    // evenly thin a gap list down to `k` entries
    let pick = |gaps: &[usize], k: usize| -> Vec<f64> {
        (0..k)
            .map(|i| gaps[(i * gaps.len()) / k + (gaps.len() / k - 1) / 2])
            .map(midpoint)
            .collect()
    };
    let spec = SplitSpec {
        validation: pick(&even, cfg.n_validation_angles),
        test: pick(&odd, cfg.n_test_angles),
        train,
    };
    spec.validate()?;
    Ok(spec)
}

/// Toy manifolds for one split: a fresh base line per angle, rotated.
fn toy_table(angles: &[f64], cfg: &ToyConfig, stream_offset: u64) -> Result<Table> {
    let n = cfg.n_points;
    let mut rows = Matrix::zeros(angles.len() * n, 3);
    for (k, &theta) in angles.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream_offset + k as u64);
        let pts = rotate(&base_line(n, cfg.y_std, &mut rng)?, theta);
        for r in 0..n {
            rows[(k * n + r, 0)] = theta;
            rows[(k * n + r, 1)] = pts[(r, 0)];
            rows[(k * n + r, 2)] = pts[(r, 1)];
        }
    }
    Table::new(toy_columns(), rows)
}

#[derive(Clone, Debug)]
pub struct Splits<T> {
    pub train: T,
    pub validation: T,
    pub test: T,
}

pub struct ToyData {
    pub spec: SplitSpec,
    pub tables: Splits<Table>,
    /// Maps the configured angle range onto `[-1, 1]`.
    pub scale: CodeScale,
}

impl ToyData {
    pub fn conditioned(&self) -> Result<Splits<ConditionedSet>> {
        let scale = self.scale;
        Ok(Splits {
            train: conditioned_from_table(&self.tables.train, &scale)?,
            validation: conditioned_from_table(&self.tables.validation, &scale)?,
            test: conditioned_from_table(&self.tables.test, &scale)?,
        })
    }
}

pub fn make_toy_splits(cfg: &ToyConfig) -> Result<ToyData> {
    if cfg.n_points == 0 {
        return Err(Error::Config("n_points must be positive".into()));
    }
    let spec = toy_split_angles(cfg)?;
    let tables = Splits {
        train: toy_table(&spec.train, cfg, 0)?,
        validation: toy_table(&spec.validation, cfg, 1000)?,
        test: toy_table(&spec.test, cfg, 2000)?,
    };
    let scale = CodeScale::new(cfg.angle_range.0, cfg.angle_range.1)?;
    Ok(ToyData { spec, tables, scale })
}

/// Splits simulation records by temperature: `validation_temp` and
/// `test_temp` are held out, everything else trains.
pub fn make_sim_splits(
    features: &[TransmissibilityFeature],
    validation_temp: f64,
    test_temp: f64,
) -> Result<(SplitSpec, Splits<Vec<TransmissibilityFeature>>)> {
    let mut temps: Vec<f64> = Vec::new();
    for f in features {
        if !temps.contains(&f.temperature) {
            temps.push(f.temperature);
        }
    }
    temps.sort_by(f64::total_cmp);
    for t in [validation_temp, test_temp] {
        if !temps.contains(&t) {
            return Err(Error::Input(format!("no simulation records at {t} °C")));
        }
    }
    let spec = SplitSpec {
        train: temps
            .iter()
            .copied()
            .filter(|t| *t != validation_temp && *t != test_temp)
            .collect(),
        validation: vec![validation_temp],
        test: vec![test_temp],
    };
    spec.validate()?;
    let pick = |t: f64| {
        features
            .iter()
            .filter(|f| f.temperature == t)
            .cloned()
            .collect::<Vec<_>>()
    };
    let splits = Splits {
        train: features
            .iter()
            .filter(|f| spec.train.contains(&f.temperature))
            .cloned()
            .collect(),
        validation: pick(validation_temp),
        test: pick(test_temp),
    };
    Ok((spec, splits))
}

/// Simulation splits after feature compression. The pipeline is fitted on
/// every record before splitting, so all temperatures share one projection.
#[derive(Clone, Debug)]
pub struct SimData {
    pub spec: SplitSpec,
    pub pipeline: TransmissibilityPipeline,
    pub sets: Splits<ConditionedSet>,
    /// Maps the simulated temperature range onto `[-1, 1]`.
    pub scale: CodeScale,
}

pub fn prepare_sim(
    features: &[TransmissibilityFeature],
    validation_temp: f64,
    test_temp: f64,
    n_components: usize,
) -> Result<SimData> {
    let (spec, raw) = make_sim_splits(features, validation_temp, test_temp)?;
    let pipeline = TransmissibilityPipeline::fit(&magnitude_matrix(features)?, n_components)?;
    let scale = CodeScale::new(spec.train[0], spec.train[spec.train.len() - 1])?;
    let project = |records: &[TransmissibilityFeature]| -> Result<ConditionedSet> {
        let scores = pipeline.transform(&magnitude_matrix(records)?)?;
        let codes = Matrix::from_fn(records.len(), 1, |r, _| scale.to_code(records[r].temperature));
        ConditionedSet::new(scores, codes)
    };
    let sets = Splits {
        train: project(&raw.train)?,
        validation: project(&raw.validation)?,
        test: project(&raw.test)?,
    };
    Ok(SimData {
        spec,
        pipeline,
        sets,
        scale,
    })
}

/// Stacks the magnitude vectors of `records` as rows.
pub fn magnitude_matrix(records: &[TransmissibilityFeature]) -> Result<Matrix> {
    let first = records
        .first()
        .ok_or_else(|| Error::EmptyDataset("no simulation records".into()))?;
    let width = first.values.len();
    if records.iter().any(|f| f.values.len() != width) {
        return Err(Error::Shape("simulation records differ in length".into()));
    }
    Ok(Matrix::from_fn(records.len(), width, |r, c| records[r].values[c]))
}

/// Real points of a split regrouped by physical code.
pub fn groups_by_physical_code(set: &ConditionedSet, scale: &CodeScale) -> Vec<(f64, CodeGroup)> {
    set.groups()
        .into_iter()
        .map(|g| (scale.to_physical(g.code[0]), g))
        .collect()
}
