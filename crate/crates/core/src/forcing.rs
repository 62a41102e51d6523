//! Localized forcing profiles, Brownian driving paths and the stochastic
//! convolution `z` (the linear heat equation driven by the same noise).

use std::f64::consts::PI;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedLineage;
use crate::spectral::{self, SpectralState};

/// Profiles `e_j(x) = c_j sin(jπ(x−a)/(b−a))` on `[a, b]`, zero elsewhere,
/// projected onto the sine basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcingBasis {
    a: f64,
    b: f64,
    amplitudes: Vec<f64>,
    profiles: Vec<SpectralState>,
    /// Largest |e_j| seen outside `[a, b]` after truncation.
    truncation_error: f64,
}

impl ForcingBasis {
    /// The two-profile basis `e₁, e₂`.
    pub fn build(a: f64, b: f64, c1: f64, c2: f64, n_modes: usize) -> Result<Self> {
        Self::with_amplitudes(a, b, &[c1, c2], n_modes)
    }

    /// Same construction with `J = amplitudes.len()` profiles.
    pub fn with_amplitudes(a: f64, b: f64, amplitudes: &[f64], n_modes: usize) -> Result<Self> {
        Self::checked(a, b, amplitudes, n_modes, true)
    }

    /// Allows zero amplitudes, which switch the noise off. Used by the
    /// noise-free sanity runs; the mixing results need all `c_j ≠ 0`.
    pub fn allowing_zero(a: f64, b: f64, amplitudes: &[f64], n_modes: usize) -> Result<Self> {
        Self::checked(a, b, amplitudes, n_modes, false)
    }

    fn checked(a: f64, b: f64, amplitudes: &[f64], n_modes: usize, forbid_zero: bool) -> Result<Self> {
        if !(0.0 < a && a < b && b < PI) {
            return Err(Error::invalid(format!("forcing interval [{a}, {b}] must satisfy 0 < a < b < π")));
        }
        if amplitudes.is_empty() {
            return Err(Error::invalid("at least one forcing profile is required"));
        }
        if amplitudes.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("forcing amplitudes must be finite"));
        }
        if forbid_zero && amplitudes.contains(&0.0) {
            return Err(Error::invalid("forcing amplitudes must be non-zero"));
        }
        if n_modes == 0 {
            return Err(Error::invalid("n_modes must be positive"));
        }
        let profiles: Vec<SpectralState> =
            amplitudes.iter().enumerate().map(|(j, &c)| project_localized_sine(a, b, j + 1, c, n_modes)).collect();
        let truncation_error = profiles.iter().map(|p| leakage_outside(p, a, b)).fold(0.0, f64::max);
        Ok(Self { a, b, amplitudes: amplitudes.to_vec(), profiles, truncation_error })
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn profiles(&self) -> &[SpectralState] {
        &self.profiles
    }

    pub fn n_profiles(&self) -> usize {
        self.profiles.len()
    }

    pub fn n_modes(&self) -> usize {
        self.profiles[0].n_modes()
    }

    pub fn truncation_error(&self) -> f64 {
        self.truncation_error
    }

    /// Exact profile value (before projection).
    pub fn profile_exact(&self, j: usize, x: f64) -> f64 {
        if x < self.a || x > self.b {
            return 0.0;
        }
        self.amplitudes[j] * ((j + 1) as f64 * PI * (x - self.a) / (self.b - self.a)).sin()
    }

    /// `Σ_j w_j e_j` as a spectral state.
    pub fn combine(&self, weights: &[f64]) -> SpectralState {
        assert_eq!(weights.len(), self.n_profiles(), "one weight per profile");
        let mut out = SpectralState::zeros(self.n_modes());
        for (w, p) in weights.iter().zip(&self.profiles) {
            for (o, c) in out.coeffs_mut().iter_mut().zip(p.coeffs()) {
                *o += w * c;
            }
        }
        out
    }

    /// `Σ_j ‖e_j‖²` of the projected profiles.
    pub fn total_energy(&self) -> f64 {
        self.profiles.iter().map(|p| p.inner_l2(p)).sum()
    }
}

/// `(2/π) ∫_a^b c sin(jπ(x−a)/(b−a)) sin(kx) dx` for `k = 1..n`, by
/// composite 16-point Gauss–Legendre with at least one panel per mode.
fn project_localized_sine(a: f64, b: f64, j: usize, c: f64, n_modes: usize) -> SpectralState {
    let (nodes, weights) = gauss_legendre(16);
    let panels = n_modes + 8;
    let width = (b - a) / panels as f64;
    let freq = j as f64 * PI / (b - a);
    let mut xs = Vec::with_capacity(panels * nodes.len());
    let mut ws = Vec::with_capacity(panels * nodes.len());
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * width;
        for (t, w) in nodes.iter().zip(&weights) {
            let x = mid + 0.5 * width * t;
            xs.push(x);
            ws.push(0.5 * width * w * c * (freq * (x - a)).sin());
        }
    }
    SpectralState::from_fn(n_modes, |k| {
        let kf = k as f64;
        2.0 / PI * xs.iter().zip(&ws).map(|(x, w)| w * (kf * x).sin()).sum::<f64>()
    })
}

fn leakage_outside(profile: &SpectralState, a: f64, b: f64) -> f64 {
    let grid = spectral::to_fine_grid(profile, 8);
    let h = PI / (grid.len() + 1) as f64;
    grid.values()
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            let x = (i + 1) as f64 * h;
            x < a || x > b
        })
        .fold(0.0_f64, |m, (_, v)| m.max(v.abs()))
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton's method on `P_n`.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for m in 2..=n {
                let mf = m as f64;
                let p2 = ((2.0 * mf - 1.0) * x * p1 - (mf - 1.0) * p0) / mf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Discrete Brownian increments, one row per driving motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePath {
    pub dt: f64,
    pub seed: SeedLineage,
    pub increments: Vec<Vec<f64>>,
}

impl NoisePath {
    pub fn n_steps(&self) -> usize {
        self.increments.first().map_or(0, Vec::len)
    }

    /// Increments of every motion at step `n`.
    pub fn step(&self, n: usize) -> Vec<f64> {
        self.increments.iter().map(|row| row[n]).collect()
    }
}

/// Incremental source of Brownian increments, one RNG stream per motion.
/// [`sample_noise`] collects from exactly this source, so a simulation that
/// streams its noise sees the same numbers as a pre-sampled path.
#[derive(Debug, Clone)]
pub struct NoiseGenerator {
    rngs: Vec<ChaCha8Rng>,
    sqrt_dt: f64,
}

impl NoiseGenerator {
    pub fn new(seed: SeedLineage, dt: f64, n_motions: usize) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::invalid(format!("time step must be positive, got {dt}")));
        }
        Ok(Self { rngs: (0..n_motions as u64).map(|j| seed.rng(j)).collect(), sqrt_dt: dt.sqrt() })
    }

    pub fn n_motions(&self) -> usize {
        self.rngs.len()
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for (o, rng) in out.iter_mut().zip(self.rngs.iter_mut()) {
            let xi: f64 = StandardNormal.sample(rng);
            *o = self.sqrt_dt * xi;
        }
    }
}

/// Two independent rows of `n_steps` increments with variance `dt`.
pub fn sample_noise(seed: u64, dt: f64, n_steps: usize) -> Result<NoisePath> {
    sample_noise_for(SeedLineage::new(seed, 0), dt, n_steps, 2)
}

pub fn sample_noise_for(seed: SeedLineage, dt: f64, n_steps: usize, n_motions: usize) -> Result<NoisePath> {
    let mut generator = NoiseGenerator::new(seed, dt, n_motions)?;
    let mut increments = vec![Vec::with_capacity(n_steps); n_motions];
    let mut buf = vec![0.0; n_motions];
    for _ in 0..n_steps {
        generator.fill(&mut buf);
        for (row, v) in increments.iter_mut().zip(&buf) {
            row.push(*v);
        }
    }
    Ok(NoisePath { dt, seed, increments })
}

/// Solution of `∂ₜz − ν∂ₓ²z = η`, `z(0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticConvolution {
    pub current: SpectralState,
    pub nu: f64,
    pub t: f64,
}

impl StochasticConvolution {
    pub fn new(n_modes: usize, nu: f64) -> Self {
        Self { current: SpectralState::zeros(n_modes), nu, t: 0.0 }
    }
}

/// One exponential-Euler step `z_k ← e^{−νk²dt}(z_k + Σ_j e_{j,k} Δβ_j)`.
///
/// The increment enters before the semigroup is applied, the same
/// convention as the Burgers stepper, so `u = z + v` holds step by step.
pub fn convolution_step(
    z: &StochasticConvolution,
    basis: &ForcingBasis,
    dbeta: &[f64],
    dt: f64,
) -> StochasticConvolution {
    let mut next = z.clone();
    ConvolutionStepper::new(basis, z.nu, dt).step(&mut next, dbeta);
    next
}

/// [`convolution_step`] with the per-mode factors precomputed.
#[derive(Debug, Clone)]
pub struct ConvolutionStepper {
    decay: Vec<f64>,
    kicks: Vec<Vec<f64>>,
    dt: f64,
}

impl ConvolutionStepper {
    pub fn new(basis: &ForcingBasis, nu: f64, dt: f64) -> Self {
        let n = basis.n_modes();
        let decay: Vec<f64> = (1..=n).map(|k| (-nu * (k * k) as f64 * dt).exp()).collect();
        let kicks =
            basis.profiles().iter().map(|p| p.coeffs().iter().zip(&decay).map(|(e, l)| e * l).collect()).collect();
        Self { decay, kicks, dt }
    }

    pub fn step(&self, z: &mut StochasticConvolution, dbeta: &[f64]) {
        for (zk, l) in z.current.coeffs_mut().iter_mut().zip(&self.decay) {
            *zk *= l;
        }
        for (kick, db) in self.kicks.iter().zip(dbeta) {
            for (zk, e) in z.current.coeffs_mut().iter_mut().zip(kick) {
                *zk += e * db;
            }
        }
        z.t += self.dt;
    }

    /// Stationary per-mode variance of the discrete recursion,
    /// `λ_k² Σ_j e_{j,k}² dt / (1 − λ_k²)` with `λ_k = e^{−νk²dt}`.
    pub fn stationary_variance(&self, basis: &ForcingBasis) -> Vec<f64> {
        self.decay
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let e2: f64 = basis.profiles().iter().map(|p| p.coeffs()[i].powi(2)).sum();
                l * l * e2 * self.dt / (1.0 - l * l)
            })
            .collect()
    }
}
