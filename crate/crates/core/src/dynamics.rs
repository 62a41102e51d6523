//! Time integration of the forced Burgers equation
//! `∂ₜu − ν∂ₓ²u + u∂ₓu = h + Σ_j β̇_j e_j` on `(0, π)` with `u(0) = u(π) = 0`.
//!
//! The scheme is an exponential integrator: the diffusion is propagated
//! exactly per mode, the drift `N(u) + h` is frozen over a step (ETD1
//! weights `(1 − e^{−νk²dt})/(νk²)`), and the Brownian increment enters
//! before the semigroup is applied:
//!
//! ```text
//! u_k ← e^{−νk²dt} u_k + φ_k (N(u) + h)_k + e^{−νk²dt} Σ_j e_{j,k} Δβ_j
//! ```
//!
//! `N(u) = −u∂ₓu` is evaluated pseudospectrally on the odd `2π`-periodic
//! extension, zero-padded for the 2/3 rule when dealiasing is on.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forcing::{ConvolutionStepper, ForcingBasis, NoiseGenerator, StochasticConvolution};
use crate::rng::SeedLineage;
use crate::spectral::{self, norm, NormTag, SpectralState};

/// How `u∂ₓu` is discretized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearForm {
    /// `⅓ u∂ₓu + ⅔ ∂ₓ(u²/2)`; its discrete L² pairing with `u` vanishes.
    SkewSymmetric,
    /// `∂ₓ(u²/2)`.
    Conservative,
}

impl NonlinearForm {
    /// Weight of the advective part `u∂ₓu`.
    pub fn advective_weight(self) -> f64 {
        match self {
            NonlinearForm::SkewSymmetric => 1.0 / 3.0,
            NonlinearForm::Conservative => 0.0,
        }
    }
}

/// Physical and numerical parameters of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub nu: f64,
    pub n_modes: usize,
    pub dt: f64,
    /// Deterministic force.
    pub h: SpectralState,
    pub basis: ForcingBasis,
    pub dealias: bool,
    pub nonlinearity: NonlinearForm,
}

impl SimConfig {
    /// Dealiased, skew-symmetric, `h = 0`.
    pub fn new(nu: f64, dt: f64, basis: ForcingBasis) -> Result<Self> {
        let n_modes = basis.n_modes();
        let config = Self {
            nu,
            n_modes,
            dt,
            h: SpectralState::zeros(n_modes),
            basis,
            dealias: true,
            nonlinearity: NonlinearForm::SkewSymmetric,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_h(mut self, h: SpectralState) -> Result<Self> {
        self.h = h;
        self.validate()?;
        Ok(self)
    }

    pub fn with_dealias(mut self, dealias: bool) -> Self {
        self.dealias = dealias;
        self
    }

    pub fn with_nonlinearity(mut self, form: NonlinearForm) -> Self {
        self.nonlinearity = form;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::invalid(format!("viscosity must be positive, got {}", self.nu)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("time step must be positive, got {}", self.dt)));
        }
        if self.n_modes == 0 {
            return Err(Error::invalid("n_modes must be positive"));
        }
        if self.h.n_modes() != self.n_modes {
            return Err(Error::DimensionMismatch { expected: self.n_modes, found: self.h.n_modes() });
        }
        if self.basis.n_modes() != self.n_modes {
            return Err(Error::DimensionMismatch { expected: self.n_modes, found: self.basis.n_modes() });
        }
        Ok(())
    }

    /// Largest admissible `max|u|` for the advective CFL bound
    /// `dt ≤ 0.5 (N+1) / (π max|u|)`.
    pub fn cfl_limit(&self) -> f64 {
        0.5 * (self.n_modes + 1) as f64 / (PI * self.dt)
    }

    /// Short content hash, stable across runs and platforms.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

fn fft_pair(p: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    type Pair = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);
    static CACHE: OnceLock<Mutex<HashMap<usize, Pair>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    guard
        .entry(p)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            (planner.plan_fft_forward(p), planner.plan_fft_inverse(p))
        })
        .clone()
}

fn is_smooth(mut n: usize) -> bool {
    for f in [2, 3, 5] {
        while n.is_multiple_of(f) {
            n /= f;
        }
    }
    n == 1
}

/// Number of modes on the padded grid: at least `3N/2` when dealiasing, and
/// rounded up so the periodic FFT length `2(M+1)` has only factors 2, 3, 5.
pub fn padded_modes(n_modes: usize, dealias: bool) -> usize {
    if !dealias {
        return n_modes;
    }
    let mut m = (3 * n_modes).div_ceil(2);
    while !is_smooth(2 * (m + 1)) {
        m += 1;
    }
    m
}

/// Scratch and plans for evaluating `−u∂ₓu`.
pub(crate) struct NonlinearPlan {
    n: usize,
    p: usize,
    sigma: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl NonlinearPlan {
    pub(crate) fn new(n: usize, dealias: bool, form: NonlinearForm) -> Self {
        let m = padded_modes(n, dealias);
        let p = 2 * (m + 1);
        let (forward, inverse) = fft_pair(p);
        let scratch_len = forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len());
        Self {
            n,
            p,
            sigma: form.advective_weight(),
            forward,
            inverse,
            buf: vec![Complex64::new(0.0, 0.0); p],
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
        }
    }

    /// Writes `−[σ w∂ₓw + (1−σ)∂ₓ(w²/2)]` for `w = u (+ shift)` into `out`
    /// and returns `max|w|` over the padded grid.
    pub(crate) fn eval(&mut self, u: &[f64], shift: Option<&[f64]>, out: &mut [f64]) -> f64 {
        let (n, p) = (self.n, self.p);
        debug_assert_eq!(u.len(), n);
        self.buf.fill(Complex64::new(0.0, 0.0));
        // One inverse FFT yields w (real part) and ∂ₓw (imaginary part):
        // w = Σ a_k sin(kx) has spectrum ∓i a_k/2 at ±k, ∂ₓw = Σ k a_k cos(kx) has k a_k/2.
        for k in 1..=n {
            let a = u[k - 1] + shift.map_or(0.0, |s| s[k - 1]);
            let kf = k as f64;
            self.buf[k] = Complex64::new(0.0, 0.5 * a * (kf - 1.0));
            self.buf[p - k] = Complex64::new(0.0, 0.5 * a * (kf + 1.0));
        }
        self.inverse.process_with_scratch(&mut self.buf, &mut self.scratch);

        // Pack the odd product w∂ₓw (real) and the even w²/2 (imaginary).
        let mut max_abs = 0.0_f64;
        for v in self.buf.iter_mut() {
            let (w, wx) = (v.re, v.im);
            max_abs = max_abs.max(w.abs());
            *v = Complex64::new(w * wx, 0.5 * w * w);
        }
        self.forward.process_with_scratch(&mut self.buf, &mut self.scratch);

        let scale = 1.0 / p as f64;
        let sigma = self.sigma;
        for k in 1..=n {
            let (yk, ym) = (self.buf[k], self.buf[p - k]);
            // Sine coefficient of w∂ₓw and cosine coefficient of w²/2.
            let advective = -(yk.im - ym.im) * scale;
            let square = (yk.im + ym.im) * scale;
            let kf = k as f64;
            out[k - 1] = -sigma * advective + (1.0 - sigma) * kf * square;
        }
        if max_abs.is_nan() {
            f64::NAN
        } else {
            max_abs
        }
    }
}

/// `−u∂ₓu` projected onto the first `N` sine modes.
pub fn nonlinear_term(u: &SpectralState, config: &SimConfig) -> SpectralState {
    let mut plan = NonlinearPlan::new(u.n_modes(), config.dealias, config.nonlinearity);
    let mut out = vec![0.0; u.n_modes()];
    plan.eval(u.coeffs(), None, &mut out);
    SpectralState::new(out).unwrap_or_else(|_| SpectralState::zeros(u.n_modes()))
}

/// Per-trajectory integrator state: exponential factors and FFT scratch.
pub struct Stepper<'a> {
    config: &'a SimConfig,
    decay: Vec<f64>,
    phi: Vec<f64>,
    /// `e^{−νk²dt} e_{j,k}` per profile.
    kicks: Vec<Vec<f64>>,
    /// Unpropagated profiles, for deterministic controls.
    profiles: Vec<Vec<f64>>,
    plan: NonlinearPlan,
    drift: Vec<f64>,
    limit: f64,
}

impl<'a> Stepper<'a> {
    pub fn new(config: &'a SimConfig) -> Self {
        let n = config.n_modes;
        let (nu, dt) = (config.nu, config.dt);
        let decay: Vec<f64> = (1..=n).map(|k| (-nu * (k * k) as f64 * dt).exp()).collect();
        let phi = (1..=n)
            .map(|k| {
                let rate = nu * (k * k) as f64;
                -(-rate * dt).exp_m1() / rate
            })
            .collect();
        let kicks = config
            .basis
            .profiles()
            .iter()
            .map(|p| p.coeffs().iter().zip(&decay).map(|(e, l)| e * l).collect())
            .collect();
        let profiles = config.basis.profiles().iter().map(|p| p.coeffs().to_vec()).collect();
        Self {
            config,
            decay,
            phi,
            kicks,
            profiles,
            plan: NonlinearPlan::new(n, config.dealias, config.nonlinearity),
            drift: vec![0.0; n],
            limit: config.cfl_limit(),
        }
    }

    pub fn config(&self) -> &SimConfig {
        self.config
    }

    /// Deterministic part: `u ← λu + φ(N(u + shift) + h + Σ_j ζ_j e_j)`.
    fn drift_step(
        &mut self,
        u: &mut SpectralState,
        shift: Option<&SpectralState>,
        zeta: Option<&[f64]>,
        time: f64,
    ) -> Result<()> {
        let max_abs = self.plan.eval(u.coeffs(), shift.map(|s| s.coeffs()), &mut self.drift);
        if !(max_abs <= self.limit) {
            return Err(Error::Cfl { time, max_abs, limit: self.limit });
        }
        for (d, h) in self.drift.iter_mut().zip(self.config.h.coeffs()) {
            *d += h;
        }
        if let Some(zeta) = zeta {
            for (profile, z) in self.profiles.iter().zip(zeta) {
                for (d, e) in self.drift.iter_mut().zip(profile) {
                    *d += z * e;
                }
            }
        }
        for ((uk, (l, f)), d) in u.coeffs_mut().iter_mut().zip(self.decay.iter().zip(&self.phi)).zip(&self.drift) {
            *uk = l * *uk + f * d;
        }
        Ok(())
    }

    /// One stochastic step with Brownian increments `dbeta`.
    pub fn step_stochastic(&mut self, u: &mut SpectralState, dbeta: &[f64], time: f64) -> Result<()> {
        self.drift_step(u, None, None, time)?;
        for (kick, db) in self.kicks.iter().zip(dbeta) {
            for (uk, e) in u.coeffs_mut().iter_mut().zip(kick) {
                *uk += e * db;
            }
        }
        Ok(())
    }

    /// One step of the controlled equation with control amplitudes `zeta`.
    pub fn step_controlled(&mut self, u: &mut SpectralState, zeta: Option<&[f64]>, time: f64) -> Result<()> {
        self.drift_step(u, None, zeta, time)
    }

    /// One step of the `v`-equation, whose drift is `−(v+z)∂ₓ(v+z) + h`.
    pub fn step_shifted(&mut self, v: &mut SpectralState, z: &SpectralState, time: f64) -> Result<()> {
        self.drift_step(v, Some(z), None, time)
    }
}

/// One step of the stochastic equation.
pub fn step_stochastic(u: &SpectralState, dbeta: &[f64], config: &SimConfig) -> Result<SpectralState> {
    let mut next = u.clone();
    Stepper::new(config).step_stochastic(&mut next, dbeta, 0.0)?;
    Ok(next)
}

/// Sampled path of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SpectralState>,
    pub config_hash: String,
    pub seed: Option<SeedLineage>,
}

impl Trajectory {
    pub fn last(&self) -> &SpectralState {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

pub(crate) fn step_count(t: f64, dt: f64) -> Result<usize> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!("time horizon must be non-negative, got {t}")));
    }
    Ok((t / dt).round() as usize)
}

/// A running stochastic trajectory, optionally tracking the stochastic
/// convolution `z` driven by the same increments.
pub struct StochasticRun<'a> {
    stepper: Stepper<'a>,
    noise: NoiseGenerator,
    dbeta: Vec<f64>,
    convolution: Option<(ConvolutionStepper, StochasticConvolution)>,
    pub u: SpectralState,
    steps: usize,
}

impl<'a> StochasticRun<'a> {
    pub fn new(config: &'a SimConfig, u0: SpectralState, seed: SeedLineage) -> Result<Self> {
        u0.check_same_size(&config.h)?;
        let j = config.basis.n_profiles();
        Ok(Self {
            stepper: Stepper::new(config),
            noise: NoiseGenerator::new(seed, config.dt, j)?,
            dbeta: vec![0.0; j],
            convolution: None,
            u: u0,
            steps: 0,
        })
    }

    /// Also evolve `z` (from `z(0) = 0`) with the shared increments.
    pub fn with_convolution(mut self) -> Self {
        let config = self.stepper.config;
        self.convolution = Some((
            ConvolutionStepper::new(&config.basis, config.nu, config.dt),
            StochasticConvolution::new(config.n_modes, config.nu),
        ));
        self
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.stepper.config.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn convolution(&self) -> Option<&StochasticConvolution> {
        self.convolution.as_ref().map(|(_, z)| z)
    }

    pub fn step(&mut self) -> Result<()> {
        self.noise.fill(&mut self.dbeta);
        let time = self.time();
        self.stepper.step_stochastic(&mut self.u, &self.dbeta, time)?;
        if let Some((stepper, z)) = self.convolution.as_mut() {
            stepper.step(z, &self.dbeta);
        }
        self.steps += 1;
        Ok(())
    }

    pub fn advance(&mut self, n_steps: usize) -> Result<()> {
        for _ in 0..n_steps {
            self.step()?;
        }
        Ok(())
    }

    /// Advance to the step closest to time `t`.
    pub fn advance_to(&mut self, t: f64) -> Result<()> {
        let target = step_count(t, self.stepper.config.dt)?;
        self.advance(target.saturating_sub(self.steps))
    }
}

fn sample_points(n_steps: usize, sample_every: usize) -> impl Fn(usize) -> bool {
    let every = sample_every.max(1);
    move |n| n % every == 0 || n == n_steps
}

/// Stochastic trajectory from `u0` over `[0, T]`, sampled every
/// `sample_every` steps (and at `T`).
pub fn simulate(
    u0: &SpectralState,
    t_end: f64,
    config: &SimConfig,
    seed: SeedLineage,
    sample_every: usize,
) -> Result<Trajectory> {
    let n_steps = step_count(t_end, config.dt)?;
    let keep = sample_points(n_steps, sample_every);
    let mut run = StochasticRun::new(config, u0.clone(), seed)?;
    let mut traj =
        Trajectory { times: vec![0.0], states: vec![u0.clone()], config_hash: config.hash(), seed: Some(seed) };
    for n in 1..=n_steps {
        run.step()?;
        if keep(n) {
            traj.times.push(n as f64 * config.dt);
            traj.states.push(run.u.clone());
        }
    }
    Ok(traj)
}

/// Trajectories of `v` and `z` in the splitting `u = z + v`, where `z` is the
/// stochastic convolution and `v` solves the shifted equation.
pub fn simulate_split(
    u0: &SpectralState,
    t_end: f64,
    config: &SimConfig,
    seed: SeedLineage,
    sample_every: usize,
) -> Result<(Trajectory, Trajectory)> {
    let n_steps = step_count(t_end, config.dt)?;
    let keep = sample_points(n_steps, sample_every);
    let mut stepper = Stepper::new(config);
    let conv = ConvolutionStepper::new(&config.basis, config.nu, config.dt);
    let mut noise = NoiseGenerator::new(seed, config.dt, config.basis.n_profiles())?;
    let mut dbeta = vec![0.0; config.basis.n_profiles()];
    let mut v = u0.clone();
    let mut z = StochasticConvolution::new(config.n_modes, config.nu);
    let hash = config.hash();
    let mut vt = Trajectory { times: vec![0.0], states: vec![v.clone()], config_hash: hash.clone(), seed: Some(seed) };
    let mut zt = Trajectory { times: vec![0.0], states: vec![z.current.clone()], config_hash: hash, seed: Some(seed) };
    for n in 1..=n_steps {
        let time = (n - 1) as f64 * config.dt;
        noise.fill(&mut dbeta);
        stepper.step_shifted(&mut v, &z.current, time)?;
        conv.step(&mut z, &dbeta);
        if keep(n) {
            let t = n as f64 * config.dt;
            vt.times.push(t);
            vt.states.push(v.clone());
            zt.times.push(t);
            zt.states.push(z.current.clone());
        }
    }
    Ok((vt, zt))
}

/// Piecewise-linear control amplitudes `ζ_j(t)` on a knot grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSchedule {
    knots: Vec<f64>,
    /// `coeffs[i][j]`: amplitude of profile `j` at knot `i`.
    coeffs: Vec<Vec<f64>>,
}

impl ControlSchedule {
    pub fn new(knots: Vec<f64>, coeffs: Vec<Vec<f64>>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::invalid("a control schedule needs at least two knots"));
        }
        if knots[0] != 0.0 {
            return Err(Error::invalid("the first knot must be t = 0"));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("knots must be strictly increasing"));
        }
        if coeffs.len() != knots.len() {
            return Err(Error::invalid("one coefficient row per knot"));
        }
        let j = coeffs[0].len();
        if j == 0 || coeffs.iter().any(|row| row.len() != j) {
            return Err(Error::invalid("every knot needs the same number of amplitudes"));
        }
        if coeffs.iter().flatten().chain(&knots).any(|v| !v.is_finite()) {
            return Err(Error::invalid("control values must be finite"));
        }
        Ok(Self { knots, coeffs })
    }

    /// Zero control on `n_intervals` equal intervals of `[0, T]`.
    pub fn zero(horizon: f64, n_intervals: usize, n_profiles: usize) -> Result<Self> {
        Self::uniform(horizon, vec![vec![0.0; n_profiles]; n_intervals + 1])
    }

    /// Equally spaced knots over `[0, T]`, one per coefficient row.
    pub fn uniform(horizon: f64, coeffs: Vec<Vec<f64>>) -> Result<Self> {
        if !(horizon > 0.0) || coeffs.len() < 2 {
            return Err(Error::invalid("uniform schedule needs T > 0 and at least two knots"));
        }
        let k = coeffs.len() - 1;
        let knots = (0..=k).map(|i| horizon * i as f64 / k as f64).collect();
        Self::new(knots, coeffs)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn coeffs(&self) -> &[Vec<f64>] {
        &self.coeffs
    }

    pub fn horizon(&self) -> f64 {
        *self.knots.last().expect("non-empty")
    }

    pub fn n_profiles(&self) -> usize {
        self.coeffs[0].len()
    }

    /// Flattened knot amplitudes, knot-major.
    pub fn parameters(&self) -> Vec<f64> {
        self.coeffs.iter().flatten().copied().collect()
    }

    pub fn with_parameters(&self, params: &[f64]) -> Result<Self> {
        let j = self.n_profiles();
        if params.len() != self.coeffs.len() * j {
            return Err(Error::invalid("parameter vector has the wrong length"));
        }
        Self::new(self.knots.clone(), params.chunks(j).map(<[f64]>::to_vec).collect())
    }

    /// Amplitudes at `t`, clamped to `[0, T]`.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let t = t.clamp(0.0, self.horizon());
        let i = match self.knots.binary_search_by(|k| k.total_cmp(&t)) {
            Ok(i) => return self.coeffs[i].clone(),
            Err(i) => i.clamp(1, self.knots.len() - 1),
        };
        let (t0, t1) = (self.knots[i - 1], self.knots[i]);
        let w = (t - t0) / (t1 - t0);
        self.coeffs[i - 1].iter().zip(&self.coeffs[i]).map(|(a, b)| (1.0 - w) * a + w * b).collect()
    }

    /// `∫₀^T ‖Σ_j ζ_j(t) e_j‖² dt`, exact for piecewise-linear amplitudes.
    pub fn energy(&self, basis: &ForcingBasis) -> f64 {
        let gram: Vec<Vec<f64>> =
            basis.profiles().iter().map(|p| basis.profiles().iter().map(|q| p.inner_l2(q)).collect()).collect();
        let quad = |a: &[f64], b: &[f64]| -> f64 {
            let mut s = 0.0;
            for (i, ai) in a.iter().enumerate() {
                for (j, bj) in b.iter().enumerate() {
                    s += ai * gram[i][j] * bj;
                }
            }
            s
        };
        self.knots
            .windows(2)
            .zip(self.coeffs.windows(2))
            .map(|(t, c)| {
                let len = t[1] - t[0];
                // ∫₀¹ ((1−s)a + s b)ᵀ G ((1−s)a + s b) ds = (aGa + aGb + bGb)/3
                len * (quad(&c[0], &c[0]) + quad(&c[0], &c[1]) + quad(&c[1], &c[1])) / 3.0
            })
            .sum()
    }
}

/// Deterministic trajectory of the controlled equation, `ζ` held at its
/// value at the start of each step.
pub fn simulate_controlled(
    u0: &SpectralState,
    t_end: f64,
    config: &SimConfig,
    control: Option<&ControlSchedule>,
    sample_every: usize,
) -> Result<Trajectory> {
    u0.check_same_size(&config.h)?;
    if let Some(c) = control {
        if c.n_profiles() != config.basis.n_profiles() {
            return Err(Error::invalid("control amplitudes do not match the forcing profiles"));
        }
        if t_end > c.horizon() + 0.5 * config.dt {
            return Err(Error::invalid("control schedule does not cover the time horizon"));
        }
    }
    let n_steps = step_count(t_end, config.dt)?;
    let keep = sample_points(n_steps, sample_every);
    let mut stepper = Stepper::new(config);
    let mut u = u0.clone();
    let mut traj = Trajectory { times: vec![0.0], states: vec![u.clone()], config_hash: config.hash(), seed: None };
    for n in 1..=n_steps {
        let time = (n - 1) as f64 * config.dt;
        let zeta = control.map(|c| c.eval(time));
        stepper.step_controlled(&mut u, zeta.as_deref(), time)?;
        if keep(n) {
            traj.times.push(n as f64 * config.dt);
            traj.states.push(u.clone());
        }
    }
    Ok(traj)
}

/// `F(u)_k = −νk²u_k + (N(u) + h)_k`; zero exactly at steady states.
pub fn steady_residual(u: &SpectralState, config: &SimConfig) -> SpectralState {
    let n = nonlinear_term(u, config);
    SpectralState::from_fn(u.n_modes(), |k| {
        let kf = k as f64;
        -config.nu * kf * kf * u.coeffs()[k - 1] + n.coeffs()[k - 1] + config.h.coeffs()[k - 1]
    })
}

/// The force `h = −ν∂ₓ²w + w∂ₓw` for which `w` is a discrete steady state.
pub fn manufactured_forcing(w: &SpectralState, config: &SimConfig) -> SpectralState {
    let n = nonlinear_term(w, config);
    SpectralState::from_fn(w.n_modes(), |k| {
        let kf = k as f64;
        config.nu * kf * kf * w.coeffs()[k - 1] - n.coeffs()[k - 1]
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub state: SpectralState,
    /// L² norm of the final residual.
    pub residual: f64,
    pub newton_iterations: usize,
    /// Pseudo-time spent marching before Newton took over.
    pub marching_time: f64,
}

const STEADY_TOLERANCE: f64 = 1e-10;

/// Steady state `û` of the unforced (`ζ = 0`) equation.
///
/// Marches the deterministic equation from rest for up to `50/ν` (stopping
/// early once the residual is small), then polishes with damped Newton on the
/// spectral residual. The branch reached by marching is the one returned.
pub fn steady_state(config: &SimConfig) -> Result<SteadyState> {
    let n = config.n_modes;
    let mut u = SpectralState::zeros(n);
    let mut stepper = Stepper::new(config);
    let march_steps = step_count(50.0 / config.nu, config.dt)?;
    let check_every = 1000.min(march_steps.max(1));
    let mut marched = 0;
    while marched < march_steps {
        let chunk = check_every.min(march_steps - marched);
        for i in 0..chunk {
            stepper.step_controlled(&mut u, None, (marched + i) as f64 * config.dt)?;
        }
        marched += chunk;
        if norm(&steady_residual(&u, config), NormTag::L2) < 1e-8 {
            break;
        }
    }
    let marching_time = marched as f64 * config.dt;

    let mut plan = NonlinearPlan::new(n, config.dealias, config.nonlinearity);
    let mut residual = steady_residual(&u, config);
    let mut res_norm = norm(&residual, NormTag::L2);
    let max_iterations = 50;
    let mut iterations = 0;
    while res_norm > STEADY_TOLERANCE {
        if iterations == max_iterations {
            return Err(Error::NotConverged { iterations, residual: res_norm });
        }
        iterations += 1;
        let jac = residual_jacobian(&u, config, &mut plan);
        let rhs = DVector::from_iterator(n, residual.coeffs().iter().map(|r| -r));
        let delta = jac.lu().solve(&rhs).ok_or(Error::NotConverged { iterations, residual: res_norm })?;
        let mut step = 1.0;
        loop {
            let trial = SpectralState::from_fn(n, |k| u.coeffs()[k - 1] + step * delta[k - 1]);
            let trial_res = steady_residual(&trial, config);
            let trial_norm = norm(&trial_res, NormTag::L2);
            if trial_norm < res_norm || step < 1e-6 {
                u = trial;
                residual = trial_res;
                res_norm = trial_norm;
                break;
            }
            step *= 0.5;
        }
        if step < 1e-6 && res_norm > STEADY_TOLERANCE {
            return Err(Error::NotConverged { iterations, residual: res_norm });
        }
    }
    Ok(SteadyState { state: u, residual: res_norm, newton_iterations: iterations, marching_time })
}

/// Dense Jacobian of [`steady_residual`]. `N` is quadratic, so its
/// derivative along `e_m` is `(N(u + e_m) − N(u − e_m))/2` exactly.
fn residual_jacobian(u: &SpectralState, config: &SimConfig, plan: &mut NonlinearPlan) -> DMatrix<f64> {
    let n = u.n_modes();
    let mut jac = DMatrix::zeros(n, n);
    let mut plus = vec![0.0; n];
    let mut minus = vec![0.0; n];
    let mut e = vec![0.0; n];
    for m in 0..n {
        e[m] = 1.0;
        let neg: Vec<f64> = e.iter().map(|v| -v).collect();
        plan.eval(u.coeffs(), Some(&e), &mut plus);
        plan.eval(u.coeffs(), Some(&neg), &mut minus);
        for k in 0..n {
            jac[(k, m)] = 0.5 * (plus[k] - minus[k]);
        }
        let mf = (m + 1) as f64;
        jac[(m, m)] -= config.nu * mf * mf;
        e[m] = 0.0;
    }
    jac
}

/// Parameters of the barrier `v₊(t,x) = (δ(x+M) + Cε)/(t+ε)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Supersolution {
    pub delta: f64,
    pub m: f64,
    pub c: f64,
    pub eps: f64,
}

impl Supersolution {
    pub fn value(&self, t: f64, x: f64) -> f64 {
        supersolution_value(t, x, self.delta, self.m, self.c, self.eps)
    }

    fn dt(&self, t: f64, x: f64) -> f64 {
        -(self.delta * (x + self.m) + self.c * self.eps) / (t + self.eps).powi(2)
    }

    fn dx(&self, t: f64) -> f64 {
        self.delta / (t + self.eps)
    }

    /// Barrier mirrored through `x ↦ π − x` with flipped sign; this is the
    /// function the symmetry `u(x) ↦ −u(π−x)` of the equation maps `v₊` to.
    pub fn mirrored_value(&self, t: f64, x: f64) -> f64 {
        -self.value(t, PI - x)
    }
}

/// `(δ(x+M) + Cε)/(t+ε)`.
pub fn supersolution_value(t: f64, x: f64, delta: f64, m: f64, c: f64, eps: f64) -> f64 {
    (delta * (x + m) + c * eps) / (t + eps)
}

/// Outcome of checking a `v`-trajectory against the barriers `±v₊`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub barrier: Supersolution,
    /// `−v₊ ≤ v ≤ v₊` at every sampled time and grid node.
    pub pointwise_pass: bool,
    /// `min (v₊ − |v|)` over the samples.
    pub margin: f64,
    pub violations: usize,
    /// Differential inequality for `v₊` being a supersolution.
    pub residual_holds: bool,
    pub min_residual: f64,
    /// Same inequality (reversed) for the mirrored subsolution.
    pub mirrored_residual_holds: bool,
    pub max_mirrored_residual: f64,
    /// `v₊ > 0` on the lateral boundary.
    pub boundary_positive: bool,
    /// `v₊(0,·) > ‖v(0)‖_∞`.
    pub initial_dominated: bool,
    /// `sup_t ‖z(t)‖_σ` over the samples.
    pub z_sup: f64,
    /// Whether the noise stayed in `{sup_t ‖z(t)‖_σ ≤ ρ}`.
    pub in_event: bool,
}

/// Order of the Sobolev norm defining the small-noise event.
pub const EVENT_SOBOLEV_ORDER: f64 = 1.75;

/// Checks `v` against `±v₊` on the collocation grid and evaluates the
/// supersolution inequality
/// `∂ₜv₊ − ν∂ₓ²v₊ + (v₊+z)∂ₓ(v₊+z) − h ≥ 0` along the sampled `z`.
pub fn comparison_check(
    v_traj: &Trajectory,
    z_traj: &Trajectory,
    barrier: Supersolution,
    rho: f64,
    config: &SimConfig,
) -> Result<ComparisonReport> {
    if v_traj.times.len() != z_traj.times.len() {
        return Err(Error::invalid("v and z trajectories are sampled differently"));
    }
    let n = config.n_modes;
    let xs = spectral::GridState::points(n);
    let h_grid = spectral::to_grid(&config.h);

    let mut margin = f64::INFINITY;
    let mut violations = 0;
    let mut min_residual = f64::INFINITY;
    let mut max_mirrored = f64::NEG_INFINITY;
    let mut z_sup = 0.0_f64;
    for ((t, v), z) in v_traj.times.iter().zip(&v_traj.states).zip(&z_traj.states) {
        let v_grid = spectral::to_grid(v);
        let z_grid = spectral::to_grid(z);
        z_sup = z_sup.max(norm(z, NormTag::Hs(EVENT_SOBOLEV_ORDER)));
        for (i, &x) in xs.iter().enumerate() {
            let bound = barrier.value(*t, x);
            let vi = v_grid.values()[i];
            let slack = (bound - vi).min(vi + bound);
            margin = margin.min(slack);
            if slack < 0.0 {
                violations += 1;
            }
            let (zi, zx) = (z_grid.values()[i], z.eval_derivative(x));
            let hi = h_grid.values()[i];
            let upper = barrier.value(*t, x) + zi;
            let res = barrier.dt(*t, x) + upper * (barrier.dx(*t) + zx) - hi;
            min_residual = min_residual.min(res);
            // w₋(t,x) = −v₊(t, π−x): ∂ₜw₋ = −∂ₜv₊, ∂ₓw₋ = ∂ₓv₊.
            let lower = barrier.mirrored_value(*t, x) + zi;
            let res_lo = -barrier.dt(*t, PI - x) + lower * (barrier.dx(*t) + zx) - hi;
            max_mirrored = max_mirrored.max(res_lo);
        }
    }
    let t_end = *v_traj.times.last().unwrap_or(&0.0);
    let boundary_positive = v_traj.times.iter().all(|&t| barrier.value(t, 0.0) > 0.0 && barrier.value(t, PI) > 0.0)
        && barrier.value(t_end, 0.0) > 0.0;
    let v0_sup = v_traj.states.first().map_or(0.0, |v| norm(v, NormTag::Linf));
    let initial_dominated = barrier.c > v0_sup && barrier.value(0.0, 0.0) > v0_sup;
    Ok(ComparisonReport {
        barrier,
        pointwise_pass: violations == 0,
        margin,
        violations,
        residual_holds: min_residual >= 0.0,
        min_residual,
        mirrored_residual_holds: max_mirrored <= 0.0,
        max_mirrored_residual: max_mirrored,
        boundary_positive,
        initial_dominated,
        z_sup,
        in_event: z_sup <= rho,
    })
}

/// Smallest `M` among `candidates` (tried in order) for which the
/// supersolution inequality holds along `z_traj`. `None` if none does.
pub fn admissible_barrier_m(
    delta: f64,
    c: f64,
    eps: f64,
    v_traj: &Trajectory,
    z_traj: &Trajectory,
    config: &SimConfig,
    candidates: &[f64],
) -> Result<Option<f64>> {
    for &m in candidates {
        let report = comparison_check(v_traj, z_traj, Supersolution { delta, m, c, eps }, f64::INFINITY, config)?;
        if report.residual_holds {
            return Ok(Some(m));
        }
    }
    Ok(None)
}
