//! Min-max normalization onto `[-1, 1]` and principal component analysis.

use std::fmt::Write as _;

use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::nnet::{fmt_f64, Matrix, TextLines, Vector};

/// Per-column affine map of `[min, max]` onto `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationModel {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationModel {
    pub fn fit(data: &Matrix) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Input("cannot fit a normalizer to empty data".into()));
        }
        let min = data.column_iter().map(|c| c.min()).collect();
        let max = data.column_iter().map(|c| c.max()).collect();
        Ok(NormalizationModel { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Columns with zero range; these normalize to 0.
    pub fn constant_columns(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&j| !(self.max[j] > self.min[j])).collect()
    }

    fn check(&self, data: &Matrix) -> Result<()> {
        if data.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "normalizer has {} columns, data has {}",
                self.dim(),
                data.ncols()
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, data: &Matrix) -> Result<Matrix> {
        self.check(data)?;
        Ok(Matrix::from_fn(data.nrows(), data.ncols(), |r, j| {
            let range = self.max[j] - self.min[j];
            if range > 0.0 {
                2.0 * (data[(r, j)] - self.min[j]) / range - 1.0
            } else {
                0.0
            }
        }))
    }

    pub fn denormalize(&self, data: &Matrix) -> Result<Matrix> {
        self.check(data)?;
        Ok(Matrix::from_fn(data.nrows(), data.ncols(), |r, j| {
            let range = self.max[j] - self.min[j];
            if range > 0.0 {
                (data[(r, j)] + 1.0) * 0.5 * range + self.min[j]
            } else {
                self.min[j]
            }
        }))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("NORMv1 {}\n", self.dim());
        writeln!(s, "{}", join(&self.min)).unwrap();
        writeln!(s, "{}", join(&self.max)).unwrap();
        s
    }

    pub fn from_text(source: &str, text: &str) -> Result<Self> {
        let mut lines = TextLines::new(source, text);
        let (no, header) = lines.next_line("NORMv1 header")?;
        let dim = header
            .strip_prefix("NORMv1 ")
            .and_then(|d| d.trim().parse::<usize>().ok())
            .ok_or_else(|| lines.error(no, "expected `NORMv1 <dim>`"))?;
        let min = lines.read_floats(dim, "minimum line")?;
        let max = lines.read_floats(dim, "maximum line")?;
        Ok(NormalizationModel { min, max })
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(" ")
}

/// Principal axes of a data matrix.
///
/// `eigenvalues` holds the full covariance spectrum (one per feature,
/// non-increasing); `components` keeps only the leading rows.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub mean: Vector,
    /// `n_components × n_features`, orthonormal rows.
    pub components: Matrix,
    pub eigenvalues: Vec<f64>,
}

impl PcaModel {
    /// Eigendecomposition of the sample covariance (`n - 1` denominator).
    /// Each component is sign-fixed so its largest-magnitude entry is positive.
    pub fn fit(data: &Matrix, n_components: usize) -> Result<Self> {
        let (n, f) = data.shape();
        if n == 0 || f == 0 {
            return Err(Error::Input("cannot fit PCA to empty data".into()));
        }
        if n_components == 0 || n_components > n.min(f) {
            return Err(Error::Config(format!(
                "{n_components} components requested from {n}×{f} data"
            )));
        }
        let mean = Vector::from_iterator(f, data.column_iter().map(|c| c.mean()));
        let mut centered = data.clone();
        for (j, mut col) in centered.column_iter_mut().enumerate() {
            col.add_scalar_mut(-mean[j]);
        }
        let denom = (n.max(2) - 1) as f64;
        let cov = centered.tr_mul(&centered) / denom;
        let eig = SymmetricEigen::new(cov);

        let mut order: Vec<usize> = (0..f).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        let mut components = Matrix::zeros(n_components, f);
        for (k, &i) in order.iter().take(n_components).enumerate() {
            let v = eig.eigenvectors.column(i);
            let pivot = v.iter().fold(0.0_f64, |m, x| if x.abs() > m.abs() { *x } else { m });
            let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
            for j in 0..f {
                components[(k, j)] = sign * v[j];
            }
        }
        Ok(PcaModel {
            mean,
            components,
            eigenvalues,
        })
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    /// `(data - mean) · componentsᵀ`.
    pub fn project(&self, data: &Matrix) -> Result<Matrix> {
        if data.ncols() != self.n_features() {
            return Err(Error::Shape(format!(
                "PCA expects {} features, got {}",
                self.n_features(),
                data.ncols()
            )));
        }
        let mut centered = data.clone();
        for (j, mut col) in centered.column_iter_mut().enumerate() {
            col.add_scalar_mut(-self.mean[j]);
        }
        Ok(centered * self.components.transpose())
    }

    pub fn reconstruct(&self, scores: &Matrix) -> Result<Matrix> {
        if scores.ncols() != self.n_components() {
            return Err(Error::Shape(format!(
                "PCA has {} components, scores have {} columns",
                self.n_components(),
                scores.ncols()
            )));
        }
        let mut out = scores * &self.components;
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.mean[j]);
        }
        Ok(out)
    }

    /// `PCAv1 <n_features> <n_components>`, mean line, eigenvalue line
    /// (full spectrum), then one line per component.
    pub fn to_text(&self) -> String {
        let mut s = format!("PCAv1 {} {}\n", self.n_features(), self.n_components());
        writeln!(s, "{}", join(self.mean.as_slice())).unwrap();
        writeln!(s, "{}", join(&self.eigenvalues)).unwrap();
        for row in self.components.row_iter() {
            writeln!(s, "{}", join(&row.iter().copied().collect::<Vec<_>>())).unwrap();
        }
        s
    }

    pub fn from_text(source: &str, text: &str) -> Result<Self> {
        let mut lines = TextLines::new(source, text);
        let (no, header) = lines.next_line("PCAv1 header")?;
        let tok: Vec<&str> = header.split_whitespace().collect();
        let dims = match tok.as_slice() {
            ["PCAv1", f, c] => f.parse::<usize>().ok().zip(c.parse::<usize>().ok()),
            _ => None,
        };
        let (f, c) = dims.ok_or_else(|| lines.error(no, "expected `PCAv1 <n_features> <n_components>`"))?;
        let mean = Vector::from_vec(lines.read_floats(f, "mean line")?);
        let eigenvalues = lines.read_floats(f, "eigenvalue line")?;
        let mut components = Matrix::zeros(c, f);
        for k in 0..c {
            for (j, v) in lines.read_floats(f, "component row")?.into_iter().enumerate() {
                components[(k, j)] = v;
            }
        }
        Ok(PcaModel {
            mean,
            components,
            eigenvalues,
        })
    }
}

/// Raw transmissibility magnitudes → log₁₀ → PCA scores → `[-1, 1]`, and back.
#[derive(Clone, Debug, PartialEq)]
pub struct TransmissibilityPipeline {
    pub pca: PcaModel,
    pub normalizer: NormalizationModel,
}

impl TransmissibilityPipeline {
    pub fn fit(magnitudes: &Matrix, n_components: usize) -> Result<Self> {
        let logs = log_magnitudes(magnitudes)?;
        let pca = PcaModel::fit(&logs, n_components)?;
        let normalizer = NormalizationModel::fit(&pca.project(&logs)?)?;
        Ok(TransmissibilityPipeline { pca, normalizer })
    }

    pub fn transform(&self, magnitudes: &Matrix) -> Result<Matrix> {
        self.normalizer
            .normalize(&self.pca.project(&log_magnitudes(magnitudes)?)?)
    }

    /// Normalized scores back to transmissibility magnitudes.
    pub fn inverse(&self, normalized: &Matrix) -> Result<Matrix> {
        let logs = self.pca.reconstruct(&self.normalizer.denormalize(normalized)?)?;
        Ok(logs.map(|v| 10f64.powf(v)))
    }
}

fn log_magnitudes(magnitudes: &Matrix) -> Result<Matrix> {
    if magnitudes.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Input(
            "magnitudes must be strictly positive before log compression".into(),
        ));
    }
    Ok(magnitudes.map(f64::log10))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-3.0..3.0))
    }

    /// Cyclic Jacobi rotations; returns (eigenvalues, eigenvectors as columns).
    fn jacobi_eigen(a: &Matrix) -> (Vec<f64>, Matrix) {
        let n = a.nrows();
        let mut a = a.clone();
        let mut v = Matrix::identity(n, n);
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[(i, j)] * a[(i, j)])
                .sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[(k, p)], a[(k, q)]);
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
        ((0..n).map(|i| a[(i, i)]).collect(), v)
    }

    #[test]
    fn normalizer_maps_range_to_unit_interval() {
        let data = Matrix::from_column_slice(3, 1, &[0.0, 5.0, 10.0]);
        let m = NormalizationModel::fit(&data).unwrap();
        let n = m.normalize(&data).unwrap();
        assert_eq!(n.as_slice(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn normalizer_round_trip() {
        let data = random(30, 4, 1);
        let m = NormalizationModel::fit(&data).unwrap();
        let back = m.denormalize(&m.normalize(&data).unwrap()).unwrap();
        assert!((back - &data).abs().max() < 1e-12);
    }

    #[test]
    fn constant_column_maps_to_zero_and_is_flagged() {
        let data = Matrix::from_row_slice(3, 2, &[1.0, 7.0, 2.0, 7.0, 3.0, 7.0]);
        let m = NormalizationModel::fit(&data).unwrap();
        assert_eq!(m.constant_columns(), vec![1]);
        let n = m.normalize(&data).unwrap();
        assert!(n.column(1).iter().all(|v| *v == 0.0));
        assert_eq!(m.denormalize(&n).unwrap(), data);
        assert!(matches!(
            NormalizationModel::fit(&Matrix::zeros(0, 2)),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn rank_one_data_has_single_nonzero_eigenvalue() {
        let data = Matrix::from_fn(20, 2, |r, c| (r as f64 - 7.0) * if c == 0 { 1.0 } else { -2.0 });
        let pca = PcaModel::fit(&data, 2).unwrap();
        assert!(pca.eigenvalues[0] > 0.0);
        assert!(pca.eigenvalues[1] <= 1e-10);
    }

    #[test]
    fn eigenvalues_sum_to_total_variance() {
        let data = random(40, 6, 2);
        let pca = PcaModel::fit(&data, 3).unwrap();
        let total: f64 = data.column_iter().map(|c| c.variance() * 40.0 / 39.0).sum();
        let sum: f64 = pca.eigenvalues.iter().sum();
        assert!(((sum - total) / total).abs() < 1e-9);
        assert!(pca.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn agrees_with_jacobi_oracle() {
        let data = random(20, 5, 3);
        let pca = PcaModel::fit(&data, 3).unwrap();
        let mean = Vector::from_iterator(5, data.column_iter().map(|c| c.mean()));
        let centered = Matrix::from_fn(20, 5, |r, c| data[(r, c)] - mean[c]);
        let cov = centered.tr_mul(&centered) / 19.0;
        let (vals, vecs) = jacobi_eigen(&cov);
        let mut order: Vec<usize> = (0..5).collect();
        order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
        for (k, &i) in order.iter().enumerate() {
            assert!((pca.eigenvalues[k] - vals[i]).abs() < 1e-10 * vals[order[0]]);
        }
        // projectors onto the retained subspace must coincide
        let basis = Matrix::from_fn(5, 3, |r, k| vecs[(r, order[k])]);
        let oracle_proj = &basis * basis.transpose();
        let proj = pca.components.transpose() * &pca.components;
        assert!((oracle_proj - proj).abs().max() < 1e-8);
    }

    #[test]
    fn components_orthonormal_and_sign_fixed() {
        let pca = PcaModel::fit(&random(50, 8, 4), 4).unwrap();
        let gram = &pca.components * pca.components.transpose();
        assert!((gram - Matrix::identity(4, 4)).abs().max() < 1e-10);
        for row in pca.components.row_iter() {
            let pivot = row.iter().fold(0.0_f64, |m, x| if x.abs() > m.abs() { *x } else { m });
            assert!(pivot > 0.0);
        }
    }

    #[test]
    fn projection_round_trips_and_truncation_error_matches_spectrum() {
        let data = random(40, 5, 5);
        let full = PcaModel::fit(&data, 5).unwrap();
        let back = full.reconstruct(&full.project(&data).unwrap()).unwrap();
        assert!((back - &data).abs().max() < 1e-9);

        let pca = PcaModel::fit(&data, 2).unwrap();
        let scores = pca.project(&data).unwrap();
        for k in 0..2 {
            let var = scores.column(k).variance() * 40.0 / 39.0;
            assert!((var - pca.eigenvalues[k]).abs() < 1e-9 * pca.eigenvalues[k]);
        }
        let err = (pca.reconstruct(&scores).unwrap() - &data).norm_squared() / 39.0;
        let dropped: f64 = pca.eigenvalues[2..].iter().sum();
        assert!(((err - dropped) / dropped).abs() < 1e-6);
        assert!(
            pca.project(&Matrix::from_row_slice(1, 5, pca.mean.as_slice()))
                .unwrap()
                .abs()
                .max()
                < 1e-14
        );
    }

    #[test]
    fn scores_are_decorrelated() {
        let data = random(60, 4, 6);
        let pca = PcaModel::fit(&data, 4).unwrap();
        let s = pca.project(&data).unwrap();
        let cov = s.tr_mul(&s) / 59.0;
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert!(cov[(i, j)].abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn too_many_components_rejected() {
        assert!(matches!(PcaModel::fit(&random(3, 5, 0), 4), Err(Error::Config(_))));
        assert!(matches!(PcaModel::fit(&random(10, 2, 0), 3), Err(Error::Config(_))));
    }

    #[test]
    fn pipeline_inverts_with_full_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mags = Matrix::from_fn(30, 4, |_, _| rng.random_range(0.1..10.0));
        let pipe = TransmissibilityPipeline::fit(&mags, 4).unwrap();
        let z = pipe.transform(&mags).unwrap();
        assert!(z.iter().all(|v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(v)));
        let back = pipe.inverse(&z).unwrap();
        assert!(((back - &mags).abs().max()) < 1e-9);
        let bad = Matrix::from_element(2, 4, -1.0);
        assert!(matches!(pipe.transform(&bad), Err(Error::Input(_))));
    }

    #[test]
    fn model_files_round_trip() {
        let pca = PcaModel::fit(&random(12, 4, 7), 2).unwrap();
        assert_eq!(PcaModel::from_text("pca", &pca.to_text()).unwrap(), pca);
        let norm = NormalizationModel::fit(&random(5, 3, 8)).unwrap();
        assert_eq!(NormalizationModel::from_text("norm", &norm.to_text()).unwrap(), norm);
        assert!(matches!(
            PcaModel::from_text("pca", "PCAv1 4\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
