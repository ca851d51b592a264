//! Gaussian kernel density estimates evaluated on regular grids, and the
//! grid KL divergence used to score generators against held-out codes.
//!
//! For every validation code the real points and the generated points are
//! each smoothed with an isotropic Gaussian KDE, both densities are sampled
//! on the same grid and renormalized to discrete distributions `P` (real)
//! and `Q` (generated), and `KL(P‖Q)` is summed over codes.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::nnet::{fmt_f64, Matrix};

pub const DEFAULT_BANDWIDTH: f64 = 0.2;
/// Floor applied to `Q` before division.
pub const DEFAULT_KL_EPSILON: f64 = 1e-12;

/// Real points sharing one code value.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeGroup {
    pub code: Vec<f64>,
    pub points: Matrix,
}

#[derive(Clone, Debug)]
pub struct KdeModel {
    points: Matrix,
    bandwidth: f64,
}

impl KdeModel {
    pub fn fit(points: Matrix, bandwidth: f64) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::Input("KDE needs at least one point".into()));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Config(format!("bandwidth must be positive, got {bandwidth}")));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("KDE points must be finite".into()));
        }
        Ok(KdeModel { points, bandwidth })
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn points(&self) -> &Matrix {
        &self.points
    }

    fn normalization(&self) -> f64 {
        let h2 = self.bandwidth * self.bandwidth;
        (2.0 * std::f64::consts::PI * h2).powf(-(self.dim() as f64) / 2.0) / self.len() as f64
    }

    /// Density at a single location.
    pub fn density(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim(), "query dimension");
        let inv = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        let s: f64 = self
            .points
            .row_iter()
            .map(|p| {
                let d2: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 * inv).exp()
            })
            .sum();
        s * self.normalization()
    }
}

/// Regular grid over a box; each axis is sampled at `resolution` points
/// from `lower` to `upper` inclusive. Cells are ordered row-major with the
/// first axis slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalGrid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    resolution: Vec<usize>,
}

impl EvalGrid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, resolution: Vec<usize>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() || lower.len() != resolution.len() {
            return Err(Error::Config(
                "grid bounds and resolutions must have equal non-zero length".into(),
            ));
        }
        for a in 0..lower.len() {
            if !(upper[a] > lower[a]) || !lower[a].is_finite() || !upper[a].is_finite() {
                return Err(Error::Config(format!("grid axis {a}: upper must exceed lower")));
            }
            if resolution[a] < 2 {
                return Err(Error::Config(format!("grid axis {a}: resolution must be at least 2")));
            }
        }
        Ok(EvalGrid {
            lower,
            upper,
            resolution,
        })
    }

    /// Same bounds and resolution on every axis.
    pub fn uniform(dim: usize, lower: f64, upper: f64, resolution: usize) -> Result<Self> {
        Self::new(vec![lower; dim], vec![upper; dim], vec![resolution; dim])
    }

    /// The default grid for data in `[-1, 1]^dim`: bounds ±1.2, 40 points
    /// per axis in two dimensions and 20 in three.
    pub fn default_for_dim(dim: usize) -> Result<Self> {
        let res = match dim {
            1 => 200,
            2 => 40,
            3 => 20,
            _ => return Err(Error::Config(format!("grid KL is limited to 3 dimensions, got {dim}"))),
        };
        Self::uniform(dim, -1.2, 1.2, res)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn n_cells(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn axis(&self, a: usize) -> Vec<f64> {
        let n = self.resolution[a];
        let step = (self.upper[a] - self.lower[a]) / (n - 1) as f64;
        (0..n).map(|i| self.lower[a] + step * i as f64).collect()
    }

    pub fn spacing(&self, a: usize) -> f64 {
        (self.upper[a] - self.lower[a]) / (self.resolution[a] - 1) as f64
    }

    /// Coordinates of cell `index` in the row-major ordering.
    pub fn point(&self, mut index: usize) -> Vec<f64> {
        let mut coords = vec![0.0; self.dim()];
        for a in (0..self.dim()).rev() {
            let n = self.resolution[a];
            let i = index % n;
            index /= n;
            coords[a] = self.lower[a] + self.spacing(a) * i as f64;
        }
        coords
    }

    /// Same grid shifted by `offset` on every axis.
    pub fn translated(&self, offset: &[f64]) -> Self {
        EvalGrid {
            lower: self.lower.iter().zip(offset).map(|(l, o)| l + o).collect(),
            upper: self.upper.iter().zip(offset).map(|(u, o)| u + o).collect(),
            resolution: self.resolution.clone(),
        }
    }
}

/// KDE sampled on every cell of a grid.
#[derive(Clone, Debug)]
pub struct GridDensity {
    pub values: Vec<f64>,
}

impl GridDensity {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Renormalized copy summing to one.
    pub fn to_distribution(&self) -> Result<Vec<f64>> {
        let total = self.total();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Coverage(
                "kernel density has no mass on the evaluation grid".into(),
            ));
        }
        Ok(self.values.iter().map(|v| v / total).collect())
    }
}

/// Evaluates the KDE on every grid cell.
///
/// The product kernel factorizes per axis, so the sum over points is
/// assembled from per-axis kernel tables with a row-wise Khatri-Rao
/// expansion and one final matrix product instead of one `exp` per
/// (cell, point) pair.
pub fn eval_on_grid(model: &KdeModel, grid: &EvalGrid) -> Result<GridDensity> {
    let d = model.dim();
    if grid.dim() != d {
        return Err(Error::Shape(format!("grid has {} axes, data has {d}", grid.dim())));
    }
    let n = model.len();
    let inv = 1.0 / (2.0 * model.bandwidth * model.bandwidth);
    // tables[a]: n × res_a, entry (p, i) = exp(-(g_i - x_pa)² / 2h²)
    let tables: Vec<Matrix> = (0..d)
        .map(|a| {
            let axis = grid.axis(a);
            DMatrix::from_fn(n, axis.len(), |p, i| {
                let diff = axis[i] - model.points[(p, a)];
                (-diff * diff * inv).exp()
            })
        })
        .collect();

    let norm = model.normalization();
    let values = if d == 1 {
        tables[0].column_iter().map(|c| c.sum() * norm).collect()
    } else {
        // columns of `acc` index cells of the leading axes
        let mut acc = tables[0].clone();
        for table in &tables[1..d - 1] {
            let (m, r) = (acc.ncols(), table.ncols());
            let mut next = Matrix::zeros(n, m * r);
            for c in 0..m {
                for i in 0..r {
                    next.column_mut(c * r + i)
                        .copy_from(&acc.column(c).component_mul(&table.column(i)));
                }
            }
            acc = next;
        }
        let last = &tables[d - 1];
        let prod = acc.tr_mul(last);
        let (m, r) = prod.shape();
        let mut values = Vec::with_capacity(m * r);
        for c in 0..m {
            for i in 0..r {
                values.push(prod[(c, i)] * norm);
            }
        }
        values
    };
    Ok(GridDensity { values })
}

/// Fits a KDE and returns its normalized grid distribution.
pub fn grid_distribution(points: &Matrix, bandwidth: f64, grid: &EvalGrid) -> Result<Vec<f64>> {
    let model = KdeModel::fit(points.clone(), bandwidth)?;
    eval_on_grid(&model, grid)?.to_distribution()
}

/// `Σ_{P>0} P·ln(P / max(Q, ε))` in nats. Cells where `Q == P` contribute
/// exactly zero, so the floor cannot bias `KL(P‖P)` below zero.
pub fn kl_divergence(p: &[f64], q: &[f64], epsilon: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!(
            "distributions of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(p.iter()
        .zip(q)
        .filter(|(p, q)| **p > 0.0 && p != q)
        .map(|(p, q)| p * (p / q.max(epsilon)).ln())
        .sum())
}

/// KL between the grid KDEs of two point sets, `a` in the `P` slot.
pub fn kl_between(a: &Matrix, b: &Matrix, bandwidth: f64, grid: &EvalGrid) -> Result<f64> {
    let p = grid_distribution(a, bandwidth, grid)?;
    let q = grid_distribution(b, bandwidth, grid)?;
    kl_divergence(&p, &q, DEFAULT_KL_EPSILON)
}

#[derive(Clone, Debug, PartialEq)]
pub struct KlEntry {
    pub code: Vec<f64>,
    pub kl: f64,
}

/// Per-code divergences and their sum over validation codes.
#[derive(Clone, Debug, PartialEq)]
pub struct KlReport {
    pub entries: Vec<KlEntry>,
    pub cumulative: f64,
}

impl KlReport {
    pub fn from_entries(entries: Vec<KlEntry>) -> Self {
        let cumulative = entries.iter().map(|e| e.kl).sum();
        KlReport { entries, cumulative }
    }

    pub fn n_val(&self) -> usize {
        self.entries.len()
    }

    /// Same report with every code passed through `f` (e.g. back to
    /// physical units).
    pub fn map_codes(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Self {
        KlReport {
            entries: self
                .entries
                .iter()
                .map(|e| KlEntry {
                    code: f(&e.code),
                    kl: e.kl,
                })
                .collect(),
            cumulative: self.cumulative,
        }
    }

    /// `code,kl` rows plus a trailing `TOTAL` row. Multi-dimensional codes
    /// are joined with `;`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("code,kl\n");
        for e in &self.entries {
            let code: Vec<String> = e.code.iter().map(|v| fmt_f64(*v)).collect();
            writeln!(s, "{},{}", code.join(";"), fmt_f64(e.kl)).unwrap();
        }
        writeln!(s, "TOTAL,{}", fmt_f64(self.cumulative)).unwrap();
        s
    }
}

/// Validation scoring with the real-data distributions computed once.
#[derive(Clone, Debug)]
pub struct ValidationScorer {
    groups: Vec<(Vec<f64>, Vec<f64>, usize)>,
    grid: EvalGrid,
    bandwidth: f64,
    n_generate: Option<usize>,
}

impl ValidationScorer {
    /// `n_generate = None` generates as many points as each real group has.
    pub fn new(groups: &[CodeGroup], grid: EvalGrid, bandwidth: f64, n_generate: Option<usize>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::EmptyDataset("no validation groups".into()));
        }
        if n_generate == Some(0) {
            return Err(Error::Config("n_generate must be positive".into()));
        }
        let groups = groups
            .iter()
            .map(|g| {
                if g.points.nrows() == 0 {
                    return Err(Error::EmptyDataset(format!("validation group {:?} is empty", g.code)));
                }
                let p = grid_distribution(&g.points, bandwidth, &grid)?;
                Ok((g.code.clone(), p, g.points.nrows()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ValidationScorer {
            groups,
            grid,
            bandwidth,
            n_generate,
        })
    }

    pub fn grid(&self) -> &EvalGrid {
        &self.grid
    }

    /// `generate(code, n)` must return `n` samples for `code`.
    pub fn score<F>(&self, mut generate: F) -> Result<KlReport>
    where
        F: FnMut(&[f64], usize) -> Result<Matrix>,
    {
        let mut entries = Vec::with_capacity(self.groups.len());
        for (code, p, n_real) in &self.groups {
            let generated = generate(code, self.n_generate.unwrap_or(*n_real))?;
            let q = grid_distribution(&generated, self.bandwidth, &self.grid)?;
            entries.push(KlEntry {
                code: code.clone(),
                kl: kl_divergence(p, &q, DEFAULT_KL_EPSILON)?,
            });
        }
        Ok(KlReport::from_entries(entries))
    }
}

/// Cumulative KL of a generator over all validation groups.
pub fn cumulative_validation_kl<F>(
    generate: F,
    groups: &[CodeGroup],
    grid: &EvalGrid,
    bandwidth: f64,
    n_generate: Option<usize>,
) -> Result<KlReport>
where
    F: FnMut(&[f64], usize) -> Result<Matrix>,
{
    ValidationScorer::new(groups, grid.clone(), bandwidth, n_generate)?.score(generate)
}
