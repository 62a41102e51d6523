//! Sine-spectral representation of functions on `(0, π)` with homogeneous
//! Dirichlet data.
//!
//! A state is the coefficient vector of `u(x) = Σ_{k=1..N} a_k sin(kx)`. The
//! paired collocation grid is `x_i = iπ/(N+1)`, `i = 1..N`, and the two are
//! related by the type-I discrete sine transform. Fractional Sobolev norms and
//! the heat semigroup `e^{tνΔ}` are diagonal in this basis.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Truncated sine series on `(0, π)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralState {
    coeffs: Vec<f64>,
}

impl SpectralState {
    /// Wraps a coefficient vector; `coeffs[k-1]` multiplies `sin(kx)`.
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::invalid("a spectral state needs at least one mode"));
        }
        if let Some(k) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::invalid(format!("coefficient {} is not finite", k + 1)));
        }
        Ok(Self { coeffs })
    }

    pub fn zeros(n_modes: usize) -> Self {
        assert!(n_modes > 0, "a spectral state needs at least one mode");
        Self { coeffs: vec![0.0; n_modes] }
    }

    /// `amplitude · sin(kx)`.
    pub fn mode(n_modes: usize, k: usize, amplitude: f64) -> Self {
        assert!(k >= 1 && k <= n_modes, "mode {k} outside 1..={n_modes}");
        let mut s = Self::zeros(n_modes);
        s.coeffs[k - 1] = amplitude;
        s
    }

    /// Builds a state from a per-mode rule `k ↦ a_k`.
    pub fn from_fn(n_modes: usize, f: impl FnMut(usize) -> f64) -> Self {
        Self { coeffs: (1..=n_modes).map(f).collect() }
    }

    pub fn n_modes(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    /// Pointwise evaluation by direct summation.
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().enumerate().map(|(i, a)| a * ((i + 1) as f64 * x).sin()).sum()
    }

    /// `∂ₓu` at a point.
    pub fn eval_derivative(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let k = (i + 1) as f64;
                k * a * (k * x).cos()
            })
            .sum()
    }

    pub(crate) fn check_same_size(&self, other: &Self) -> Result<()> {
        if self.n_modes() != other.n_modes() {
            return Err(Error::DimensionMismatch { expected: self.n_modes(), found: other.n_modes() });
        }
        Ok(())
    }

    /// `self + alpha · other`.
    pub fn axpy(&self, alpha: f64, other: &Self) -> Self {
        assert_eq!(self.n_modes(), other.n_modes(), "mode count mismatch");
        Self { coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + alpha * b).collect() }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.axpy(-1.0, other)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.axpy(1.0, other)
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self { coeffs: self.coeffs.iter().map(|a| alpha * a).collect() }
    }

    /// Copy truncated or zero-padded to `n_modes`.
    pub fn resized(&self, n_modes: usize) -> Self {
        let mut coeffs = vec![0.0; n_modes];
        let m = n_modes.min(self.n_modes());
        coeffs[..m].copy_from_slice(&self.coeffs[..m]);
        Self { coeffs }
    }

    /// `∫₀^π u v dx`.
    pub fn inner_l2(&self, other: &Self) -> f64 {
        assert_eq!(self.n_modes(), other.n_modes(), "mode count mismatch");
        FRAC_PI_2 * self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum::<f64>()
    }

    /// `∫₀^π ∂ₓu ∂ₓv dx`.
    pub fn inner_v(&self, other: &Self) -> f64 {
        assert_eq!(self.n_modes(), other.n_modes(), "mode count mismatch");
        FRAC_PI_2
            * self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .enumerate()
                .map(|(i, (a, b))| {
                    let k = (i + 1) as f64;
                    k * k * a * b
                })
                .sum::<f64>()
    }

    /// `Σ_{k > cutoff} k² a_k²`, the high-mode share of the squared V-norm
    /// (without the `π/2` factor).
    pub fn spectral_tail(&self, cutoff: usize) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(cutoff)
            .map(|(i, a)| {
                let k = (i + 1) as f64;
                k * k * a * a
            })
            .sum()
    }
}

/// Function values on the interior collocation grid `x_i = iπ/(N+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    values: Vec<f64>,
}

impl GridState {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("empty grid"));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Collocation points for `n` interior nodes.
    pub fn points(n: usize) -> Vec<f64> {
        let h = PI / (n + 1) as f64;
        (1..=n).map(|i| i as f64 * h).collect()
    }
}

/// Which norm to take.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NormTag {
    L1,
    L2,
    Linf,
    /// Spectral `H^s` norm, `s ∈ [0, 2]`.
    Hs(f64),
}

impl NormTag {
    /// The `V = H¹₀` norm, which equals `‖∂ₓu‖` exactly in this basis.
    pub const V: NormTag = NormTag::Hs(1.0);

    pub fn hs(s: f64) -> Result<Self> {
        if !(0.0..=2.0).contains(&s) {
            return Err(Error::invalid(format!("Sobolev order {s} outside [0, 2]")));
        }
        Ok(NormTag::Hs(s))
    }

    pub fn label(&self) -> String {
        match self {
            NormTag::L1 => "L1".into(),
            NormTag::L2 => "L2".into(),
            NormTag::Linf => "Linf".into(),
            NormTag::Hs(s) => format!("H{s}"),
        }
    }
}

/// Cached FFT plans for the type-I sine transform of a given size.
pub(crate) struct SineTransform {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl SineTransform {
    fn new(n: usize) -> Self {
        let p = 2 * (n + 1);
        let mut planner = FftPlanner::new();
        Self { n, forward: planner.plan_fft_forward(p), inverse: planner.plan_fft_inverse(p) }
    }

    /// Shared plan for `n` modes.
    pub(crate) fn get(n: usize) -> Arc<SineTransform> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<SineTransform>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
        guard.entry(n).or_insert_with(|| Arc::new(SineTransform::new(n))).clone()
    }

    /// Values at the interior nodes from coefficients.
    pub(crate) fn synthesize(&self, coeffs: &[f64], out: &mut [f64]) {
        let n = self.n;
        let p = 2 * (n + 1);
        debug_assert_eq!(coeffs.len(), n);
        let mut buf = vec![Complex64::new(0.0, 0.0); p];
        // Spectrum of the odd 2π-periodic extension: a_k/(2i) at k, -a_k/(2i) at p-k.
        for (i, &a) in coeffs.iter().enumerate() {
            let k = i + 1;
            buf[k] = Complex64::new(0.0, -0.5 * a);
            buf[p - k] = Complex64::new(0.0, 0.5 * a);
        }
        self.inverse.process(&mut buf);
        for (o, v) in out.iter_mut().zip(&buf[1..=n]) {
            *o = v.re;
        }
    }

    /// Coefficients from values at the interior nodes.
    pub(crate) fn analyze(&self, values: &[f64], out: &mut [f64]) {
        let n = self.n;
        let p = 2 * (n + 1);
        debug_assert_eq!(values.len(), n);
        let mut buf = vec![Complex64::new(0.0, 0.0); p];
        for (j, &v) in values.iter().enumerate() {
            buf[j + 1] = Complex64::new(v, 0.0);
            buf[p - j - 1] = Complex64::new(-v, 0.0);
        }
        self.forward.process(&mut buf);
        let scale = -1.0 / (n + 1) as f64;
        for (k, o) in out.iter_mut().enumerate() {
            *o = scale * buf[k + 1].im;
        }
    }
}

/// Evaluates the state on its collocation grid.
pub fn to_grid(state: &SpectralState) -> GridState {
    let n = state.n_modes();
    let mut values = vec![0.0; n];
    SineTransform::get(n).synthesize(state.coeffs(), &mut values);
    GridState { values }
}

/// Inverse of [`to_grid`].
pub fn from_grid(grid: &GridState) -> SpectralState {
    let n = grid.len();
    let mut coeffs = vec![0.0; n];
    SineTransform::get(n).analyze(grid.values(), &mut coeffs);
    SpectralState { coeffs }
}

/// Evaluates on the grid of `refine·(N+1) − 1` interior nodes.
pub fn to_fine_grid(state: &SpectralState, refine: usize) -> GridState {
    let refine = refine.max(1);
    let n_fine = refine * (state.n_modes() + 1) - 1;
    to_grid(&state.resized(n_fine))
}

/// Norm of `state` on its native grid.
pub fn norm(state: &SpectralState, tag: NormTag) -> f64 {
    norm_refined(state, tag, 1)
}

/// Like [`norm`], but the grid-based norms (L¹, L^∞) are taken on a grid
/// refined `refine` times. Spectral norms ignore `refine`.
pub fn norm_refined(state: &SpectralState, tag: NormTag, refine: usize) -> f64 {
    match tag {
        NormTag::L2 => sobolev_norm(state.coeffs(), 0.0),
        NormTag::Hs(s) => sobolev_norm(state.coeffs(), s),
        NormTag::Linf => {
            let grid = if refine > 1 { to_fine_grid(state, refine) } else { to_grid(state) };
            grid.values().iter().fold(0.0_f64, |m, v| m.max(v.abs()))
        }
        NormTag::L1 => {
            let grid = if refine > 1 { to_fine_grid(state, refine) } else { to_grid(state) };
            l1_from_grid(state, grid.values())
        }
    }
}

/// Composite trapezoid for `∫|u|` over the closed grid (end values are zero),
/// plus the Euler–Maclaurin correction for the endpoint slopes of `|u|`.
/// Without it the boundary kink of `|u|` leaves an `O(h²)` bias.
fn l1_from_grid(state: &SpectralState, values: &[f64]) -> f64 {
    let h = PI / (values.len() + 1) as f64;
    // Trapezoid for |u|, with cells containing a sign change integrated
    // through the linear zero crossing instead of across the kink.
    let mut trapezoid = 0.0;
    let mut prev = 0.0_f64;
    for &v in values.iter().chain(std::iter::once(&0.0)) {
        trapezoid += if prev * v < 0.0 {
            let slope = (v - prev).abs() / h;
            h * (prev * prev + v * v) / (2.0 * (prev.abs() + v.abs())) + h * h / 6.0 * slope
        } else {
            0.5 * h * (prev.abs() + v.abs())
        };
        prev = v;
    }
    let slope_left = state.eval_derivative(0.0).abs();
    let slope_right = state.eval_derivative(PI).abs();
    trapezoid + h * h / 12.0 * (slope_left + slope_right)
}

fn sobolev_norm(coeffs: &[f64], s: f64) -> f64 {
    let sum: f64 = if s == 0.0 {
        coeffs.iter().map(|a| a * a).sum()
    } else if s == 1.0 {
        coeffs
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let k = (i + 1) as f64;
                k * k * a * a
            })
            .sum()
    } else {
        coeffs.iter().enumerate().map(|(i, a)| ((i + 1) as f64).powf(2.0 * s) * a * a).sum()
    };
    (FRAC_PI_2 * sum).sqrt()
}

/// Interpolation exponent `θ_s = 3/(2s+1)` in
/// `‖u‖_V ≤ C ‖u‖_{L¹}^{1−θ_s} ‖u‖_s^{θ_s}`.
pub fn theta_exponent(s: f64) -> Result<f64> {
    if !(1.0..=2.0).contains(&s) {
        return Err(Error::invalid(format!("interpolation order {s} outside [1, 2]")));
    }
    Ok(3.0 / (2.0 * s + 1.0))
}

/// Applies `e^{tνΔ}`: `a_k ↦ e^{−νk²t} a_k`.
pub fn heat_propagate(state: &SpectralState, t: f64, nu: f64) -> SpectralState {
    assert!(t >= 0.0, "heat propagation needs t >= 0, got {t}");
    SpectralState::from_fn(state.n_modes(), |k| {
        let kf = k as f64;
        (-nu * kf * kf * t).exp() * state.coeffs[k - 1]
    })
}

/// Mode cap used for the operator-norm supremum.
pub fn heat_norm_mode_cap(t: f64, nu: f64) -> usize {
    let continuous = 10.0 / (nu * t).sqrt();
    continuous.max(1.0e4).ceil() as usize
}

/// Norm of `e^{tνΔ}` as a map `H^{source} → H^{target}`:
/// `sup_k k^{target−source} e^{−νk²t}` over `k ≤ K_max`.
///
/// The per-mode gain is unimodal in `k` with continuous maximizer
/// `k* = √((target−source)/(2νt))`, so only `k = 1` and the two integers
/// bracketing `k*` need to be compared.
pub fn heat_operator_norm(t: f64, nu: f64, source_order: f64, target_order: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::invalid(format!("heat operator norm needs t > 0, got {t}")));
    }
    if !(nu > 0.0) {
        return Err(Error::invalid(format!("viscosity must be positive, got {nu}")));
    }
    let gap = target_order - source_order;
    if gap < 0.0 {
        return Err(Error::invalid("target order below source order"));
    }
    let k_max = heat_norm_mode_cap(t, nu);
    let gain = |k: usize| {
        let kf = k as f64;
        kf.powf(gap) * (-nu * kf * kf * t).exp()
    };
    if gap == 0.0 {
        return Ok(gain(1));
    }
    let k_star = (gap / (2.0 * nu * t)).sqrt();
    let lo = (k_star.floor() as usize).clamp(1, k_max);
    let hi = (k_star.ceil() as usize).clamp(1, k_max);
    Ok([1, lo, hi].into_iter().map(gain).fold(0.0, f64::max))
}
