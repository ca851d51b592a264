//! Lumped mass-spring-damper chain with temperature- and humidity-dependent
//! parameters.
//!
//! Spring and damper `i` connect mass `i` to mass `i - 1`; the first pair
//! connects mass 0 to ground and the last mass is free. Responses are
//! computed in the frequency domain as receptances
//! `H(ω) = (K - ω²M + iωC)⁻¹ e_f`; an average-acceleration Newmark
//! integrator provides an independent time-domain route.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nnet::Matrix;

pub type ComplexMatrix = DMatrix<Complex<f64>>;

pub const BASE_MASS: f64 = 1.0;
pub const BASE_STIFFNESS: f64 = 1e4;
pub const BASE_DAMPING: f64 = 10.0;
pub const REFERENCE_TEMPERATURE: f64 = 30.0;
pub const REFERENCE_HUMIDITY: f64 = 90.0;
pub const NOMINAL_TEMPERATURE: (f64, f64) = (20.0, 40.0);
pub const NOMINAL_HUMIDITY: (f64, f64) = (80.0, 100.0);
/// Polluted magnitudes are folded to `|v|` and floored here so the log
/// compression downstream stays finite.
pub const MAGNITUDE_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct ChainSystem {
    masses: Vec<f64>,
    stiffnesses: Vec<f64>,
    dampings: Vec<f64>,
}

impl ChainSystem {
    pub fn new(masses: Vec<f64>, stiffnesses: Vec<f64>, dampings: Vec<f64>) -> Result<Self> {
        let n = masses.len();
        if n == 0 || stiffnesses.len() != n || dampings.len() != n {
            return Err(Error::Parameter(format!(
                "chain needs equal non-empty parameter vectors, got {}/{}/{}",
                n,
                stiffnesses.len(),
                dampings.len()
            )));
        }
        for (name, v) in [("mass", &masses), ("stiffness", &stiffnesses), ("damping", &dampings)] {
            if let Some(bad) = v.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
                return Err(Error::Parameter(format!("{name} {bad} is not strictly positive")));
            }
        }
        Ok(ChainSystem {
            masses,
            stiffnesses,
            dampings,
        })
    }

    pub fn uniform(n_dof: usize, mass: f64, stiffness: f64, damping: f64) -> Result<Self> {
        Self::new(vec![mass; n_dof], vec![stiffness; n_dof], vec![damping; n_dof])
    }

    /// Six unit masses with `k = 1e4 N/m` and `c = 10 N·s/m`.
    pub fn baseline() -> Self {
        Self::uniform(6, BASE_MASS, BASE_STIFFNESS, BASE_DAMPING).expect("valid baseline")
    }

    pub fn n_dof(&self) -> usize {
        self.masses.len()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn stiffnesses(&self) -> &[f64] {
        &self.stiffnesses
    }

    pub fn dampings(&self) -> &[f64] {
        &self.dampings
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvironmentalState {
    pub temperature: f64,
    pub humidity: f64,
}

impl EnvironmentalState {
    pub fn new(temperature: f64, humidity: f64) -> Result<Self> {
        if !temperature.is_finite() || !humidity.is_finite() {
            return Err(Error::Input("environmental values must be finite".into()));
        }
        Ok(EnvironmentalState { temperature, humidity })
    }

    pub fn outside_nominal(&self) -> bool {
        let (t0, t1) = NOMINAL_TEMPERATURE;
        let (h0, h1) = NOMINAL_HUMIDITY;
        !(t0..=t1).contains(&self.temperature) || !(h0..=h1).contains(&self.humidity)
    }
}

/// Scales stiffnesses by `1 - (T - 30)/100` and dampings by `1 - (h - 90)/100`.
pub fn apply_environment(base: &ChainSystem, env: &EnvironmentalState) -> Result<ChainSystem> {
    let k_scale = 1.0 - (env.temperature - REFERENCE_TEMPERATURE) / 100.0;
    let c_scale = 1.0 - (env.humidity - REFERENCE_HUMIDITY) / 100.0;
    if !(k_scale > 0.0) || !(c_scale > 0.0) {
        return Err(Error::Parameter(format!(
            "environment T={} h={} gives non-positive stiffness or damping",
            env.temperature, env.humidity
        )));
    }
    Ok(ChainSystem {
        masses: base.masses.clone(),
        stiffnesses: base.stiffnesses.iter().map(|k| k * k_scale).collect(),
        dampings: base.dampings.iter().map(|c| c * c_scale).collect(),
    })
}

fn chain_matrix(coeffs: &[f64]) -> Matrix {
    let n = coeffs.len();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = coeffs[i] + coeffs.get(i + 1).copied().unwrap_or(0.0);
        if i + 1 < n {
            m[(i, i + 1)] = -coeffs[i + 1];
            m[(i + 1, i)] = -coeffs[i + 1];
        }
    }
    m
}

pub struct SystemMatrices {
    pub mass: Matrix,
    pub damping: Matrix,
    pub stiffness: Matrix,
}

pub fn assemble_matrices(sys: &ChainSystem) -> SystemMatrices {
    SystemMatrices {
        mass: Matrix::from_diagonal(&DVector::from_column_slice(&sys.masses)),
        damping: chain_matrix(&sys.dampings),
        stiffness: chain_matrix(&sys.stiffnesses),
    }
}

/// Undamped natural frequencies (rad/s), ascending.
pub fn natural_frequencies(sys: &ChainSystem) -> Vec<f64> {
    let mats = assemble_matrices(sys);
    let inv_sqrt_m: Vec<f64> = sys.masses.iter().map(|m| 1.0 / m.sqrt()).collect();
    let n = sys.n_dof();
    let scaled = Matrix::from_fn(n, n, |i, j| mats.stiffness[(i, j)] * inv_sqrt_m[i] * inv_sqrt_m[j]);
    let mut w: Vec<f64> = SymmetricEigen::new(scaled)
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .collect();
    w.sort_by(f64::total_cmp);
    w
}

/// Strictly increasing, strictly positive angular frequencies (rad/s).
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyGrid {
    omegas: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(omegas: Vec<f64>) -> Result<Self> {
        if omegas.is_empty() {
            return Err(Error::Config("frequency grid is empty".into()));
        }
        if !(omegas[0] > 0.0) || omegas.windows(2).any(|w| !(w[1] > w[0])) || omegas.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config(
                "frequencies must be positive and strictly increasing".into(),
            ));
        }
        Ok(FrequencyGrid { omegas })
    }

    /// `n` points evenly spaced in hertz from `lo_hz` to `hi_hz`.
    pub fn linear_hz(lo_hz: f64, hi_hz: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config("frequency grid needs at least two points".into()));
        }
        let step = (hi_hz - lo_hz) / (n - 1) as f64;
        Self::new(
            (0..n)
                .map(|i| 2.0 * std::f64::consts::PI * (lo_hz + step * i as f64))
                .collect(),
        )
    }

    /// 256 points over 0.5–35 Hz.
    pub fn default_grid() -> Self {
        Self::linear_hz(0.5, 35.0, 256).expect("valid default grid")
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn hz(&self) -> Vec<f64> {
        self.omegas.iter().map(|w| w / (2.0 * std::f64::consts::PI)).collect()
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }
}

/// Receptance columns for a unit force on `force_dof`: `n_dof × n_freq`.
pub fn frf(sys: &ChainSystem, grid: &FrequencyGrid, force_dof: usize) -> Result<ComplexMatrix> {
    let n = sys.n_dof();
    if force_dof >= n {
        return Err(Error::Input(format!("force dof {force_dof} out of range for {n} dofs")));
    }
    let mats = assemble_matrices(sys);
    let mut out = ComplexMatrix::zeros(n, grid.len());
    let mut rhs = DVector::<Complex<f64>>::zeros(n);
    rhs[force_dof] = Complex::new(1.0, 0.0);
    for (col, &w) in grid.omegas.iter().enumerate() {
        let dynamic = ComplexMatrix::from_fn(n, n, |i, j| {
            Complex::new(
                mats.stiffness[(i, j)] - w * w * mats.mass[(i, j)],
                w * mats.damping[(i, j)],
            )
        });
        let x = dynamic
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numeric(format!("dynamic stiffness singular at ω = {w}")))?;
        if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Numeric(format!("non-finite response at ω = {w}")));
        }
        out.set_column(col, &x);
    }
    Ok(out)
}

/// `|H_i(ω) / H_j(ω)|` per frequency.
pub fn transmissibility(h: &ComplexMatrix, i: usize, j: usize) -> Result<Vec<f64>> {
    if i >= h.nrows() || j >= h.nrows() {
        return Err(Error::Input(format!("dof index out of range for {} dofs", h.nrows())));
    }
    h.row(i)
        .iter()
        .zip(h.row(j).iter())
        .map(|(a, b)| {
            if b.norm() == 0.0 {
                Err(Error::Numeric("zero response in transmissibility denominator".into()))
            } else {
                Ok((a / b).norm())
            }
        })
        .collect()
}

fn std_dev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Adds i.i.d. Gaussian noise with standard deviation `fraction × std(values)`.
pub fn pollute<R: Rng + ?Sized>(values: &[f64], fraction: f64, rng: &mut R) -> Vec<f64> {
    let sigma = fraction.max(0.0) * std_dev(values);
    if sigma == 0.0 {
        return values.to_vec();
    }
    values
        .iter()
        .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// One simulated measurement: `|T₂₁|` followed by `|T₃₂|` over the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TransmissibilityFeature {
    pub values: Vec<f64>,
    pub temperature: f64,
    /// Recorded for analysis; never part of model inputs.
    pub humidity: f64,
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub base: ChainSystem,
    pub temperatures: Vec<f64>,
    pub n_per_temperature: usize,
    pub humidity_range: (f64, f64),
    pub grid: FrequencyGrid,
    pub noise_fraction: f64,
    pub force_dof: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            base: ChainSystem::baseline(),
            temperatures: default_temperatures(),
            n_per_temperature: 1000,
            humidity_range: NOMINAL_HUMIDITY,
            grid: FrequencyGrid::default_grid(),
            noise_fraction: 0.05,
            force_dof: 0,
            seed: 0,
        }
    }
}

/// 20, 22, …, 40 °C.
pub fn default_temperatures() -> Vec<f64> {
    (0..11).map(|i| 20.0 + 2.0 * i as f64).collect()
}

/// The two transmissibilities of a single environment, noise-free.
pub fn clean_feature(
    base: &ChainSystem,
    env: &EnvironmentalState,
    grid: &FrequencyGrid,
    force_dof: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let sys = apply_environment(base, env)?;
    let h = frf(&sys, grid, force_dof)?;
    Ok((transmissibility(&h, 1, 0)?, transmissibility(&h, 2, 1)?))
}

/// Every (temperature, draw) pair gets its own RNG stream, so the result
/// does not depend on evaluation order.
pub fn build_dataset(cfg: &SimConfig) -> Result<Vec<TransmissibilityFeature>> {
    if cfg.temperatures.is_empty() {
        return Err(Error::Config("no temperatures requested".into()));
    }
    if cfg.n_per_temperature == 0 {
        return Err(Error::Config("n_per_temperature must be positive".into()));
    }
    if cfg.base.n_dof() < 3 {
        return Err(Error::Config(
            "transmissibilities 2/1 and 3/2 need at least 3 dofs".into(),
        ));
    }
    let (h_lo, h_hi) = cfg.humidity_range;
    if !(h_hi >= h_lo) {
        return Err(Error::Config("humidity range is inverted".into()));
    }
    let mut out = Vec::with_capacity(cfg.temperatures.len() * cfg.n_per_temperature);
    for (ti, &temperature) in cfg.temperatures.iter().enumerate() {
        for draw in 0..cfg.n_per_temperature {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream((ti * cfg.n_per_temperature + draw) as u64);
            let humidity = if h_hi > h_lo {
                rng.random_range(h_lo..=h_hi)
            } else {
                h_lo
            };
            let env = EnvironmentalState::new(temperature, humidity)?;
            let (t21, t32) = clean_feature(&cfg.base, &env, &cfg.grid, cfg.force_dof)?;
            let mut values = pollute(&t21, cfg.noise_fraction, &mut rng);
            values.extend(pollute(&t32, cfg.noise_fraction, &mut rng));
            for v in &mut values {
                *v = v.abs().max(MAGNITUDE_FLOOR);
            }
            out.push(TransmissibilityFeature {
                values,
                temperature,
                humidity,
            });
        }
    }
    Ok(out)
}

/// Displacement and velocity histories, `n_dof × n_steps`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub displacement: Matrix,
    pub velocity: Matrix,
}

/// Zero-initial-condition response to a force history applied on
/// `force_dof`; column `k` is the state at `t = k·dt`.
pub fn integrate_time(sys: &ChainSystem, force: &[f64], force_dof: usize, dt: f64) -> Result<Matrix> {
    let n = sys.n_dof();
    let zero = vec![0.0; n];
    Ok(integrate_from(sys, &zero, &zero, force, force_dof, dt)?.displacement)
}

/// Average-acceleration Newmark (β = 1/4, γ = 1/2) from arbitrary initial
/// displacement and velocity.
pub fn integrate_from(
    sys: &ChainSystem,
    u0: &[f64],
    v0: &[f64],
    force: &[f64],
    force_dof: usize,
    dt: f64,
) -> Result<Trajectory> {
    let n = sys.n_dof();
    if force_dof >= n {
        return Err(Error::Input(format!("force dof {force_dof} out of range")));
    }
    if u0.len() != n || v0.len() != n {
        return Err(Error::Shape("initial conditions must have one entry per dof".into()));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Input("time step must be positive".into()));
    }
    if force.iter().any(|f| !f.is_finite()) {
        return Err(Error::Input("force history contains non-finite values".into()));
    }
    let steps = force.len();
    let mut traj = Trajectory {
        displacement: Matrix::zeros(n, steps),
        velocity: Matrix::zeros(n, steps),
    };
    if steps == 0 {
        return Ok(traj);
    }
    let SystemMatrices {
        mass,
        damping,
        stiffness,
    } = assemble_matrices(sys);
    let (beta, gamma) = (0.25, 0.5);
    let a0 = 1.0 / (beta * dt * dt);
    let a1 = gamma / (beta * dt);
    let a2 = 1.0 / (beta * dt);
    let a3 = 1.0 / (2.0 * beta) - 1.0;
    let a4 = gamma / beta - 1.0;
    let a5 = dt * (gamma / (2.0 * beta) - 1.0);
    let effective = &stiffness + &damping * a1 + &mass * a0;
    let lu = effective.lu();

    let load = |k: usize| {
        let mut f = DVector::zeros(n);
        f[force_dof] = force[k];
        f
    };
    let mut u = DVector::from_column_slice(u0);
    let mut v = DVector::from_column_slice(v0);
    let mass_lu = mass.clone().lu();
    let mut a = mass_lu
        .solve(&(load(0) - &damping * &v - &stiffness * &u))
        .ok_or_else(|| Error::Numeric("singular mass matrix".into()))?;
    traj.displacement.set_column(0, &u);
    traj.velocity.set_column(0, &v);
    for k in 1..steps {
        let rhs = load(k) + &mass * (&u * a0 + &v * a2 + &a * a3) + &damping * (&u * a1 + &v * a4 + &a * a5);
        let u_next = lu
            .solve(&rhs)
            .ok_or_else(|| Error::Numeric("singular effective stiffness".into()))?;
        let a_next = (&u_next - &u) * a0 - &v * a2 - &a * a3;
        v += (&a * (1.0 - gamma) + &a_next * gamma) * dt;
        u = u_next;
        a = a_next;
        traj.displacement.set_column(k, &u);
        traj.velocity.set_column(k, &v);
    }
    Ok(traj)
}

/// Frequency of the first local maximum that reaches at least half of
/// the curve's global maximum, refined with a parabola through the three
/// bracketing samples.
pub fn first_peak(values: &[f64], freqs: &[f64]) -> Option<f64> {
    if values.len() != freqs.len() || values.len() < 3 {
        return None;
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let i = (1..values.len() - 1)
        .find(|&i| values[i] >= 0.5 * max && values[i] >= values[i - 1] && values[i] > values[i + 1])?;
    let (y0, y1, y2) = (values[i - 1], values[i], values[i + 1]);
    let denom = y0 - 2.0 * y1 + y2;
    let offset = if denom != 0.0 { 0.5 * (y0 - y2) / denom } else { 0.0 };
    let step = if offset >= 0.0 {
        freqs[i + 1] - freqs[i]
    } else {
        freqs[i] - freqs[i - 1]
    };
    Some(freqs[i] + offset.clamp(-0.5, 0.5) * step)
}
