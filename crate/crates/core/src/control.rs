//! Steering the deterministic equation into `B(ε, M)` around a steady state
//! with controls in `span{e_j}`, by direct trajectory optimization.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{simulate_controlled, step_count, ControlSchedule, SimConfig, StochasticRun};
use crate::error::{Error, Result};
use crate::measures::TargetSet;
use crate::parallel::{map_indexed, map_members, Workers};
use crate::rng::{stream_rng, streams, SeedLineage};
use crate::spectral::{norm, NormTag, SpectralState};

/// Value returned for schedules whose trajectory trips the CFL guard.
pub const BLOWUP_PENALTY: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveWeights {
    /// Weight of `max(0, ‖u(T)‖_V − M)²`.
    pub lambda_v: f64,
    /// Weight of `∫‖ζ(t)‖² dt`.
    pub lambda_reg: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self { lambda_v: 10.0, lambda_reg: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlProblem {
    pub u0: SpectralState,
    pub u_hat: SpectralState,
    pub horizon: f64,
    pub eps: f64,
    pub m: f64,
    /// Number of linear pieces `K`; the schedule has `K + 1` knots.
    pub n_intervals: usize,
    pub config: SimConfig,
    pub weights: ObjectiveWeights,
}

impl ControlProblem {
    pub fn new(
        u0: SpectralState,
        u_hat: SpectralState,
        horizon: f64,
        eps: f64,
        m: f64,
        n_intervals: usize,
        config: SimConfig,
    ) -> Result<Self> {
        let problem = Self { u0, u_hat, horizon, eps, m, n_intervals, config, weights: ObjectiveWeights::default() };
        problem.validate()?;
        Ok(problem)
    }

    pub fn with_weights(mut self, weights: ObjectiveWeights) -> Self {
        self.weights = weights;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) || !(self.eps > 0.0) || !(self.m > 0.0) {
            return Err(Error::invalid("control problem needs T > 0, ε > 0 and M > 0"));
        }
        if self.n_intervals < 2 {
            return Err(Error::invalid("control schedule needs at least two intervals"));
        }
        self.u0.check_same_size(&self.u_hat)?;
        self.u0.check_same_size(&self.config.h)?;
        self.config.validate()
    }

    pub fn n_parameters(&self) -> usize {
        (self.n_intervals + 1) * self.config.basis.n_profiles()
    }

    pub fn schedule(&self, params: &[f64]) -> Result<ControlSchedule> {
        let j = self.config.basis.n_profiles();
        ControlSchedule::uniform(self.horizon, params.chunks(j).map(<[f64]>::to_vec).collect())
    }

    pub fn with_grid(&self, horizon: f64, n_intervals: usize) -> Result<Self> {
        let p = Self { horizon, n_intervals, ..self.clone() };
        p.validate()?;
        Ok(p)
    }
}

/// Terms of the objective for one schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub value: f64,
    pub l1: f64,
    pub v_norm: f64,
    pub control_energy: f64,
    pub blew_up: bool,
}

/// `J = ‖u(T) − û‖_{L¹} + λ_V max(0, ‖u(T)‖_V − M)² + λ_reg ∫‖ζ‖²`.
pub fn evaluate(problem: &ControlProblem, schedule: &ControlSchedule) -> Result<ObjectiveValue> {
    let energy = schedule.energy(&problem.config.basis);
    match simulate_controlled(&problem.u0, problem.horizon, &problem.config, Some(schedule), usize::MAX) {
        Ok(traj) => {
            let u = traj.last();
            let l1 = norm(&u.sub(&problem.u_hat), NormTag::L1);
            let v_norm = norm(u, NormTag::V);
            let excess = (v_norm - problem.m).max(0.0);
            let w = problem.weights;
            Ok(ObjectiveValue {
                value: l1 + w.lambda_v * excess * excess + w.lambda_reg * energy,
                l1,
                v_norm,
                control_energy: energy,
                blew_up: false,
            })
        }
        Err(Error::Cfl { .. }) => Ok(ObjectiveValue {
            value: BLOWUP_PENALTY,
            l1: f64::INFINITY,
            v_norm: f64::INFINITY,
            control_energy: energy,
            blew_up: true,
        }),
        Err(e) => Err(e),
    }
}

pub fn objective(problem: &ControlProblem, schedule: &ControlSchedule) -> Result<f64> {
    Ok(evaluate(problem, schedule)?.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerOptions {
    /// Starts, the first being the zero control.
    pub n_starts: usize,
    pub max_iterations: usize,
    /// Standard deviation of the random starting amplitudes.
    pub start_scale: f64,
    /// Forward-difference step.
    pub gradient_step: f64,
    pub gradient_tolerance: f64,
    /// Stop a start as soon as its iterate lies in the target.
    pub stop_at_target: bool,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            n_starts: 4,
            max_iterations: 80,
            start_scale: 1.0,
            gradient_step: 1e-6,
            gradient_tolerance: 1e-8,
            stop_at_target: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlResult {
    pub schedule: ControlSchedule,
    /// From an independent forward solve of `schedule`.
    pub achieved_l1: f64,
    pub achieved_v: f64,
    pub objective: f64,
    /// BFGS iterations of the winning start.
    pub iterations: usize,
    /// Objective evaluations over all starts.
    pub evaluations: usize,
    pub start_index: usize,
    pub converged: bool,
}

struct StartOutcome {
    params: Vec<f64>,
    value: f64,
    iterations: usize,
    evaluations: usize,
}

fn forward_gradient(
    f: &mut impl FnMut(&[f64]) -> Result<ObjectiveValue>,
    x: &[f64],
    fx: f64,
    h: f64,
) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let step = h * x[i].abs().max(1.0);
        probe[i] = x[i] + step;
        grad[i] = (f(&probe)?.value - fx) / step;
        probe[i] = x[i];
    }
    Ok(grad)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// BFGS on the inverse Hessian with Armijo backtracking.
fn bfgs(problem: &ControlProblem, start: Vec<f64>, options: &OptimizerOptions) -> Result<StartOutcome> {
    let n = start.len();
    let mut evaluations = 0usize;
    let mut f = |p: &[f64]| -> Result<ObjectiveValue> {
        evaluations += 1;
        evaluate(problem, &problem.schedule(p)?)
    };
    let in_target = |v: &ObjectiveValue| v.l1 < problem.eps && v.v_norm < problem.m;
    let mut x = start;
    let mut vx = f(&x)?;
    let mut g = forward_gradient(&mut f, &x, vx.value, options.gradient_step)?;
    let mut h_inv = identity(n);
    let mut iterations = 0;
    while iterations < options.max_iterations {
        if dot(&g, &g).sqrt() < options.gradient_tolerance || (options.stop_at_target && in_target(&vx)) {
            break;
        }
        iterations += 1;
        let mut dir: Vec<f64> = (0..n).map(|i| -dot(&h_inv[i], &g)).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            h_inv = identity(n);
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let vt = f(&trial)?;
            if vt.value <= vx.value + 1e-4 * step * slope {
                accepted = Some((trial, vt));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, v_new)) = accepted else {
            if h_inv == identity(n) {
                break;
            }
            h_inv = identity(n);
            continue;
        };
        let g_new = forward_gradient(&mut f, &x_new, v_new.value, options.gradient_step)?;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            let hy: Vec<f64> = (0..n).map(|i| dot(&h_inv[i], &y)).collect();
            let yhy = dot(&y, &hy);
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    h_inv[i][j] += (1.0 + yhy * rho) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
                }
            }
        }
        x = x_new;
        vx = v_new;
        g = g_new;
    }
    Ok(StartOutcome { params: x, value: vx.value, iterations, evaluations })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

/// Multi-start BFGS over the knot amplitudes. The returned values are
/// recomputed by a fresh forward solve of the best schedule.
pub fn optimize_control(
    problem: &ControlProblem,
    options: &OptimizerOptions,
    seed: u64,
    workers: Workers,
) -> Result<ControlResult> {
    problem.validate()?;
    let n = problem.n_parameters();
    let zero = problem.schedule(&vec![0.0; n])?;
    let baseline = evaluate(problem, &zero)?;
    if options.stop_at_target && baseline.l1 < problem.eps && baseline.v_norm < problem.m {
        return Ok(ControlResult {
            schedule: zero,
            achieved_l1: baseline.l1,
            achieved_v: baseline.v_norm,
            objective: baseline.value,
            iterations: 0,
            evaluations: 1,
            start_index: 0,
            converged: true,
        });
    }
    let n_starts = options.n_starts.max(1);
    let outcomes = map_indexed(workers, n_starts, |i| {
        let start = if i == 0 {
            vec![0.0; n]
        } else {
            let mut rng = stream_rng(seed, i as u64, streams::OPTIMIZER);
            (0..n).map(|_| options.start_scale * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        bfgs(problem, start, options)
    })?;
    let (start_index, best) =
        outcomes.iter().enumerate().min_by(|a, b| a.1.value.total_cmp(&b.1.value)).expect("at least one start");
    let schedule = problem.schedule(&best.params)?;
    let check = evaluate(problem, &schedule)?;
    Ok(ControlResult {
        schedule,
        achieved_l1: check.l1,
        achieved_v: check.v_norm,
        objective: check.value,
        iterations: best.iterations,
        evaluations: 1 + outcomes.iter().map(|o| o.evaluations).sum::<usize>(),
        start_index,
        converged: check.l1 < problem.eps && check.v_norm < problem.m,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlAttempt {
    pub horizon: f64,
    pub n_intervals: usize,
    pub achieved_l1: f64,
    pub achieved_v: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSearch {
    pub attempts: Vec<ControlAttempt>,
    /// First converged result in grid order, else the one closest in L¹.
    pub best: ControlResult,
    pub best_horizon: f64,
    pub best_intervals: usize,
}

/// Tries `(T, K)` pairs in order (the problem's own first) and stops at the
/// first success.
pub fn search_control(
    problem: &ControlProblem,
    horizons: &[f64],
    intervals: &[usize],
    options: &OptimizerOptions,
    seed: u64,
    workers: Workers,
) -> Result<ControlSearch> {
    let mut grid = vec![(problem.horizon, problem.n_intervals)];
    for &t in horizons {
        for &k in intervals {
            if !grid.contains(&(t, k)) {
                grid.push((t, k));
            }
        }
    }
    let mut attempts = Vec::new();
    let mut best: Option<(ControlResult, f64, usize)> = None;
    for (t, k) in grid {
        let p = problem.with_grid(t, k)?;
        let result = optimize_control(&p, options, seed, workers)?;
        attempts.push(ControlAttempt {
            horizon: t,
            n_intervals: k,
            achieved_l1: result.achieved_l1,
            achieved_v: result.achieved_v,
            converged: result.converged,
        });
        let better = match &best {
            None => true,
            Some((b, _, _)) => !b.converged && (result.converged || result.achieved_l1 < b.achieved_l1),
        };
        let done = result.converged;
        if better {
            best = Some((result, t, k));
        }
        if done {
            break;
        }
    }
    let (best, best_horizon, best_intervals) = best.expect("grid is never empty");
    Ok(ControlSearch { attempts, best, best_horizon, best_intervals })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitRow {
    pub start_index: usize,
    pub eps: f64,
    pub m: f64,
    pub hits: usize,
    pub trials: usize,
    pub frequency: f64,
    /// 95% Wilson score interval.
    pub ci_low: f64,
    pub ci_high: f64,
}

/// 95% Wilson score interval for `hits` successes in `trials`.
pub fn wilson_interval(hits: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054_f64;
    let n = trials as f64;
    let p = hits as f64 / n;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Frequency of `u(T) ∈ B(ε, M)` per start, for every `ε` in `eps_list`
/// evaluated on the same samples.
#[allow(clippy::too_many_arguments)]
pub fn hit_probability(
    starts: &[SpectralState],
    u_hat: &SpectralState,
    config: &SimConfig,
    eps_list: &[f64],
    m: f64,
    horizon: f64,
    n_seeds: usize,
    seed: u64,
    workers: Workers,
) -> Result<Vec<HitRow>> {
    let sets = eps_list.iter().map(|&e| TargetSet::new(u_hat.clone(), e, m)).collect::<Result<Vec<_>>>()?;
    let n_steps = step_count(horizon, config.dt)?;
    let mut rows = Vec::new();
    for (si, start) in starts.iter().enumerate() {
        let finals = map_members(workers, n_seeds, |i| {
            let lineage = SeedLineage::new(seed, (si * n_seeds + i) as u64);
            let mut run = StochasticRun::new(config, start.clone(), lineage)?;
            run.advance(n_steps)?;
            sets.iter().map(|s| s.contains(&run.u)).collect::<Result<Vec<bool>>>()
        })?;
        for (k, set) in sets.iter().enumerate() {
            let hits = finals.iter().filter(|f| f[k]).count();
            let (ci_low, ci_high) = wilson_interval(hits, n_seeds);
            rows.push(HitRow {
                start_index: si,
                eps: set.eps,
                m,
                hits,
                trials: n_seeds,
                frequency: hits as f64 / n_seeds.max(1) as f64,
                ci_low,
                ci_high,
            });
        }
    }
    Ok(rows)
}
