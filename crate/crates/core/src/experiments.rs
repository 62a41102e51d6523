//! Desk-scale protocols: regularization, L¹ contraction, mixing decay,
//! recurrence of the pair process, energy balance, moment growth and
//! stability of transition probabilities.
//!
//! Every protocol is a pure function of its parameters and master seed.
//! Trajectories fan out over workers and are aggregated in index order.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dynamics::{step_count, SimConfig, StochasticRun};
use crate::error::{Error, Result};
use crate::measures::{
    dual_lipschitz_distance, make_ensembles, mean_and_stderr, noise_floor, Ensemble, InitialSampler, PointMass,
    TargetSet, TestFunctionFamily,
};
use crate::parallel::{map_members, Workers};
use crate::rng::{streams, subseed, SeedLineage};
use crate::spectral::{norm, norm_refined, NormTag, SpectralState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub t: f64,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub points: Vec<SeriesPoint>,
}

impl Series {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), points: Vec::new() }
    }

    pub fn push(&mut self, t: f64, value: f64, stderr: f64) {
        self.points.push(SeriesPoint { t, value, stderr });
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    pub fn last(&self) -> Option<&SeriesPoint> {
        self.points.last()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub rule: String,
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(rule: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { rule: rule.into(), passed, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub parameters: BTreeMap<String, Value>,
    pub series: Vec<Series>,
    pub verdicts: Vec<Verdict>,
    pub notes: Vec<String>,
}

impl ExperimentReport {
    pub fn new(name: &str, config: &SimConfig, master_seed: u64) -> Self {
        let mut parameters = BTreeMap::new();
        parameters.insert("nu".into(), json!(config.nu));
        parameters.insert("n_modes".into(), json!(config.n_modes));
        parameters.insert("dt".into(), json!(config.dt));
        parameters.insert("dealias".into(), json!(config.dealias));
        parameters.insert("nonlinearity".into(), json!(config.nonlinearity));
        let (a, b) = config.basis.interval();
        parameters.insert("forcing_interval".into(), json!([a, b]));
        parameters.insert("forcing_amplitudes".into(), json!(config.basis.amplitudes()));
        Self {
            name: name.into(),
            config_hash: config.hash(),
            master_seed,
            parameters,
            series: Vec::new(),
            verdicts: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) {
        self.parameters.insert(key.into(), serde_json::to_value(value).expect("serializable parameter"));
    }

    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn series(&self, name: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.name == name)
    }

    pub fn verdict(&self, rule: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.rule == rule)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    SharedNoise,
    Independent,
}

/// Two initial states evolved together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairState {
    pub first: SpectralState,
    pub second: SpectralState,
    pub coupling: Coupling,
}

impl PairState {
    pub fn new(first: SpectralState, second: SpectralState, coupling: Coupling) -> Result<Self> {
        first.check_same_size(&second)?;
        Ok(Self { first, second, coupling })
    }
}

/// Sub-seed tags so protocols never reuse each other's randomness.
mod tags {
    pub const REGULARIZATION: u64 = 1;
    pub const CONTRACTION: u64 = 2;
    pub const MIXING_FIRST: u64 = 3;
    pub const MIXING_SECOND: u64 = 4;
    pub const MIXING_CONTROL: u64 = 5;
    pub const RECURRENCE: u64 = 6;
    pub const ENERGY: u64 = 7;
    pub const MOMENTS: u64 = 8;
    pub const STABILITY: u64 = 9;
    pub const UNIFORMITY: u64 = 10;
    pub const FLOOR: u64 = 11;
}

/// Random state with `a_k = amplitude · k^{−decay} ξ_k` for `k ≤ cutoff`.
pub fn random_state(rng: &mut impl Rng, n_modes: usize, cutoff: usize, decay: f64, amplitude: f64) -> SpectralState {
    SpectralState::from_fn(n_modes, |k| {
        let xi: f64 = rng.sample(StandardNormal);
        if k <= cutoff {
            amplitude * (k as f64).powf(-decay) * xi
        } else {
            0.0
        }
    })
}

/// Samples with `a_k = amplitude · k^{−decay} ξ_k` on every mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawSampler {
    pub n_modes: usize,
    pub decay: f64,
    pub amplitude: f64,
    /// Modes above this are zero.
    pub cutoff: usize,
}

impl InitialSampler for PowerLawSampler {
    fn sample(&self, rng: &mut ChaCha8Rng) -> SpectralState {
        random_state(rng, self.n_modes, self.cutoff, self.decay, self.amplitude)
    }
}

fn all_times_sorted(times: &[f64]) -> Result<()> {
    if times.is_empty() || times.windows(2).any(|w| !(w[1] > w[0])) || times[0] < 0.0 {
        return Err(Error::invalid("sample times must be non-negative and strictly increasing"));
    }
    Ok(())
}

// ---------------------------------------------------------------- regularization

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegularizationParams {
    pub n_seeds: usize,
    /// Exponent `p` in `a_k = k^{−p} ξ_k`; `p ≤ 1.5` is outside V as `N → ∞`.
    pub rough_exponent: f64,
    /// Smooth comparison runs keep modes `k ≤ smooth_cutoff` of the same draw.
    pub smooth_cutoff: usize,
    /// Observation times; `dt` is always added.
    pub times: Vec<f64>,
    /// Required factor between the spectral tail at the last time and at 0.
    pub tail_ratio: f64,
    /// Tails within this factor of the expected tail of the stochastic
    /// convolution alone also count as collapsed.
    pub noise_factor: f64,
    /// Relative widening of the smooth-run band.
    pub band_slack: f64,
}

impl Default for RegularizationParams {
    fn default() -> Self {
        Self {
            n_seeds: 100,
            rough_exponent: 0.6,
            smooth_cutoff: 8,
            times: vec![0.1, 1.0],
            tail_ratio: 1e-3,
            noise_factor: 10.0,
            band_slack: 0.1,
        }
    }
}

/// Runs rough and low-pass starts with shared noise and compares their
/// V-norms and spectral tails `Σ_{k>N/2} k²a_k²`.
pub fn run_regularization(
    rough: &dyn InitialSampler,
    config: &SimConfig,
    params: &RegularizationParams,
    master_seed: u64,
    workers: Workers,
) -> Result<ExperimentReport> {
    let n = config.n_modes;
    let mut times = vec![0.0, config.dt];
    times.extend(params.times.iter().copied().filter(|t| *t > config.dt));
    all_times_sorted(&times)?;
    let seed = subseed(master_seed, tags::REGULARIZATION);
    let cutoff = n / 2;

    struct Run {
        rough_v: Vec<f64>,
        rough_tail: Vec<f64>,
        smooth_v: Vec<f64>,
    }
    let runs = map_members(workers, params.n_seeds, |i| {
        let lineage = SeedLineage::new(seed, i as u64);
        let u_rough = rough.sample(&mut lineage.rng(streams::INITIAL_DATA));
        let u_smooth =
            SpectralState::from_fn(n, |k| if k <= params.smooth_cutoff { u_rough.coeffs()[k - 1] } else { 0.0 });
        let mut a = StochasticRun::new(config, u_rough, lineage)?;
        let mut b = StochasticRun::new(config, u_smooth, lineage)?;
        let mut run = Run { rough_v: Vec::new(), rough_tail: Vec::new(), smooth_v: Vec::new() };
        for &t in &times {
            a.advance_to(t)?;
            b.advance_to(t)?;
            run.rough_v.push(norm(&a.u, NormTag::V));
            run.rough_tail.push(a.u.spectral_tail(cutoff));
            run.smooth_v.push(norm(&b.u, NormTag::V));
        }
        Ok(run)
    })?;

    let mut report = ExperimentReport::new("regularize", config, master_seed);
    report.param("regularization", params);
    report.param("tail_cutoff", cutoff);
    let mut rough_v = Series::new("rough_v_norm");
    let mut rough_tail = Series::new("rough_tail");
    let mut smooth_v = Series::new("smooth_v_norm");
    for (j, &t) in times.iter().enumerate() {
        let col = |f: &dyn Fn(&Run) -> f64| mean_and_stderr(&runs.iter().map(f).collect::<Vec<_>>());
        let (m, s) = col(&|r| r.rough_v[j]);
        rough_v.push(t, m, s);
        let (m, s) = col(&|r| r.rough_tail[j]);
        rough_tail.push(t, m, s);
        let (m, s) = col(&|r| r.smooth_v[j]);
        smooth_v.push(t, m, s);
    }

    let finite = runs.iter().all(|r| r.rough_v[1..].iter().all(|v| v.is_finite()));
    report.verdicts.push(Verdict::new("v_norm_finite", finite, "‖u(t)‖_V finite for every seed at every t ≥ dt"));

    let last = times.len() - 1;
    let noise_tail = convolution_tail(config, cutoff, times[last]);
    report.param("noise_tail", noise_tail);
    let allowed = |r: &Run| (params.tail_ratio * r.rough_tail[0]).max(params.noise_factor * noise_tail);
    let failing = runs.iter().filter(|r| r.rough_tail[last] > allowed(r)).count();
    let worst_tail = runs.iter().map(|r| r.rough_tail[last] / r.rough_tail[0]).fold(0.0, f64::max);
    report.verdicts.push(Verdict::new(
        "tail_collapsed",
        failing == 0,
        format!(
            "{failing} seeds above max({} tail(0), {} noise tail); worst tail(t={})/tail(0) = {worst_tail:.3e}",
            params.tail_ratio, params.noise_factor, times[last]
        ),
    ));

    let lo = runs.iter().map(|r| r.smooth_v[last]).fold(f64::INFINITY, f64::min) / (1.0 + params.band_slack);
    let hi = runs.iter().map(|r| r.smooth_v[last]).fold(0.0, f64::max) * (1.0 + params.band_slack);
    let outside = runs.iter().filter(|r| !(r.rough_v[last] >= lo && r.rough_v[last] <= hi)).count();
    report.verdicts.push(Verdict::new(
        "within_smooth_band",
        outside == 0,
        format!("{outside} rough runs outside [{lo:.4}, {hi:.4}] at t={}", times[last]),
    ));
    report.series.extend([rough_v, rough_tail, smooth_v]);
    Ok(report)
}

/// `E Σ_{k>cutoff} k² z_k(t)²` for the discrete stochastic convolution.
fn convolution_tail(config: &SimConfig, cutoff: usize, t: f64) -> f64 {
    let steps = (t / config.dt).round();
    (cutoff + 1..=config.n_modes)
        .map(|k| {
            let kf = k as f64;
            let l2 = (-2.0 * config.nu * kf * kf * config.dt).exp();
            let e2: f64 = config.basis.profiles().iter().map(|p| p.coeffs()[k - 1].powi(2)).sum();
            kf * kf * e2 * config.dt * l2 * (1.0 - l2.powf(steps)) / (1.0 - l2)
        })
        .sum()
}

// ---------------------------------------------------------------- contraction

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContractionParams {
    pub n_pairs: usize,
    pub horizon: f64,
    pub sample_every: usize,
    /// Grid refinement for the L¹ quadrature.
    pub refine: usize,
    pub tolerance: f64,
    /// Initial data: `a_k = amplitude k^{−2} ξ_k` for `k ≤ cutoff`.
    pub cutoff: usize,
    pub amplitude: f64,
}

impl Default for ContractionParams {
    fn default() -> Self {
        Self { n_pairs: 100, horizon: 5.0, sample_every: 10, refine: 4, tolerance: 1e-6, cutoff: 16, amplitude: 1.0 }
    }
}

fn l1_distance(a: &SpectralState, b: &SpectralState, refine: usize) -> f64 {
    norm_refined(&a.sub(b), NormTag::L1, refine)
}

/// L¹ distances of shared-noise pairs. `pairs` overrides the random
/// initial data when given.
pub fn run_contraction(
    config: &SimConfig,
    params: &ContractionParams,
    pairs: Option<&[PairState]>,
    master_seed: u64,
    workers: Workers,
) -> Result<ExperimentReport> {
    let seed = subseed(master_seed, tags::CONTRACTION);
    let n = config.n_modes;
    let n_pairs = pairs.map_or(params.n_pairs, <[PairState]>::len);
    let n_steps = step_count(params.horizon, config.dt)?;
    let every = params.sample_every.max(1);

    let series = map_members(workers, n_pairs, |i| {
        let lineage = SeedLineage::new(seed, i as u64);
        let pair = match pairs {
            Some(p) => p[i].clone(),
            None => {
                let mut rng = lineage.rng(streams::INITIAL_DATA);
                let first = random_state(&mut rng, n, params.cutoff, 2.0, params.amplitude);
                let second = random_state(&mut rng, n, params.cutoff, 2.0, params.amplitude);
                PairState::new(first, second, Coupling::SharedNoise)?
            }
        };
        let second_lineage = match pair.coupling {
            Coupling::SharedNoise => lineage,
            Coupling::Independent => SeedLineage::new(seed, (n_pairs + i) as u64),
        };
        let mut a = StochasticRun::new(config, pair.first, lineage)?;
        let mut b = StochasticRun::new(config, pair.second, second_lineage)?;
        let mut out = vec![l1_distance(&a.u, &b.u, params.refine)];
        let mut done = 0;
        while done < n_steps {
            let chunk = every.min(n_steps - done);
            a.advance(chunk)?;
            b.advance(chunk)?;
            done += chunk;
            out.push(l1_distance(&a.u, &b.u, params.refine));
        }
        Ok(out)
    })?;

    let mut report = ExperimentReport::new("contraction", config, master_seed);
    report.param("contraction", params);
    report.param("n_pairs", n_pairs);
    let n_samples = series.first().map_or(0, Vec::len);
    let mut mean = Series::new("mean_l1_distance");
    let mut worst = Series::new("max_relative_increase");
    let mut violations = 0usize;
    let mut worst_overall = f64::NEG_INFINITY;
    for j in 0..n_samples {
        let t = ((j * every).min(n_steps)) as f64 * config.dt;
        let col: Vec<f64> = series.iter().map(|s| s[j]).collect();
        let (m, se) = mean_and_stderr(&col);
        mean.push(t, m, se);
        let rel = if j == 0 {
            0.0
        } else {
            series
                .iter()
                .map(|s| {
                    if s[j - 1] > 0.0 {
                        s[j] / s[j - 1] - 1.0
                    } else if s[j] > 0.0 {
                        f64::INFINITY
                    } else {
                        0.0
                    }
                })
                .fold(f64::NEG_INFINITY, f64::max)
        };
        worst_overall = worst_overall.max(rel);
        worst.push(t, rel, 0.0);
        if j > 0 {
            violations += series.iter().filter(|s| s[j] > s[j - 1] * (1.0 + params.tolerance)).count();
        }
    }
    report.series.extend([mean, worst]);
    report.verdicts.push(Verdict::new(
        "l1_non_increasing",
        violations == 0,
        format!("{violations} violations; largest relative step increase {worst_overall:.3e}"),
    ));
    Ok(report)
}

// ---------------------------------------------------------------- mixing

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixingParams {
    pub times: Vec<f64>,
    pub n_members: usize,
    pub family_size: usize,
    pub clip: f64,
    pub threshold: f64,
    pub floor_permutations: usize,
    /// Also run a second ensemble from `v1` as a same-law control.
    pub control: bool,
}

impl Default for MixingParams {
    fn default() -> Self {
        Self {
            times: vec![1.0, 2.0, 5.0, 10.0, 20.0],
            n_members: 1000,
            family_size: 64,
            clip: 1.0,
            threshold: 0.1,
            floor_permutations: 8,
            control: true,
        }
    }
}

/// Distance between the laws of `u(t)` started at `v1` and at `v2`.
pub fn run_mixing(
    v1: &SpectralState,
    v2: &SpectralState,
    config: &SimConfig,
    params: &MixingParams,
    master_seed: u64,
    workers: Workers,
) -> Result<ExperimentReport> {
    all_times_sorted(&params.times)?;
    let family = TestFunctionFamily::gaussian(config.n_modes, params.family_size, params.clip, master_seed)?;
    let run = |start: &SpectralState, tag: u64| {
        make_ensembles(
            &PointMass(start.clone()),
            &params.times,
            params.n_members,
            config,
            subseed(master_seed, tag),
            workers,
        )
    };
    let first = run(v1, tags::MIXING_FIRST)?;
    let second = run(v2, tags::MIXING_SECOND)?;
    let control = if params.control { Some(run(v1, tags::MIXING_CONTROL)?) } else { None };

    let mut report = ExperimentReport::new("mixing", config, master_seed);
    report.param("mixing", params);
    report.param("v1_coeffs", v1.coeffs());
    report.param("v2_coeffs", v2.coeffs());
    report.notes.push("distances are family-based lower-bound estimates".into());
    let floor_seed = subseed(master_seed, tags::FLOOR);
    let mut dist = Series::new("distance");
    let mut floor = Series::new("noise_floor");
    let mut ctrl = Series::new("control_distance");
    for (j, &t) in params.times.iter().enumerate() {
        dist.push(t, dual_lipschitz_distance(&first[j], &second[j], &family)?, 0.0);
        floor.push(t, noise_floor(&first[j], &second[j], &family, params.floor_permutations, floor_seed)?, 0.0);
        if let Some(c) = &control {
            ctrl.push(t, dual_lipschitz_distance(&first[j], &c[j], &family)?, 0.0);
        }
    }

    let d = dist.values();
    let f = floor.values();
    let mut worst_rise = f64::NEG_INFINITY;
    for j in 1..d.len() {
        for i in 0..j {
            worst_rise = worst_rise.max(d[j] - d[i] - 2.0 * f[j]);
        }
    }
    report.verdicts.push(Verdict::new(
        "decreasing_within_floor",
        worst_rise <= 0.0,
        format!("max over s<t of d(t) − d(s) − 2·floor(t) = {worst_rise:.4}"),
    ));
    let final_d = *d.last().expect("times non-empty");
    report.verdicts.push(Verdict::new(
        "below_threshold",
        final_d < params.threshold,
        format!("d({}) = {final_d:.4}, threshold {}", params.times.last().unwrap(), params.threshold),
    ));
    if control.is_some() {
        let worst = ctrl.values().iter().zip(&f).map(|(c, fl)| c / fl).fold(0.0, f64::max);
        report.verdicts.push(Verdict::new(
            "control_at_floor",
            worst <= 2.0,
            format!("max control distance / floor = {worst:.3}"),
        ));
        report.series.push(ctrl);
    }
    report.series.insert(0, dist);
    report.series.insert(1, floor);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UniformityParams {
    pub t: f64,
    pub n_members: usize,
    pub family_size: usize,
    pub clip: f64,
    pub floor_permutations: usize,
    pub floor_factor: f64,
}

impl Default for UniformityParams {
    fn default() -> Self {
        Self { t: 20.0, n_members: 1000, family_size: 64, clip: 1.0, floor_permutations: 8, floor_factor: 3.0 }
    }
}

/// Laws at time `t` from several starts, each compared with the first.
pub fn run_uniformity(
    starts: &[SpectralState],
    config: &SimConfig,
    params: &UniformityParams,
    master_seed: u64,
    workers: Workers,
) -> Result<ExperimentReport> {
    if starts.len() < 2 {
        return Err(Error::invalid("uniformity needs at least two initial states"));
    }
    let family = TestFunctionFamily::gaussian(config.n_modes, params.family_size, params.clip, master_seed)?;
    let ensembles = starts
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let seed = subseed(subseed(master_seed, tags::UNIFORMITY), i as u64);
            Ok(make_ensembles(&PointMass(s.clone()), &[params.t], params.n_members, config, seed, workers)?.remove(0))
        })
        .collect::<Result<Vec<Ensemble>>>()?;
    let mut report = ExperimentReport::new("uniformity", config, master_seed);
    report.param("uniformity", params);
    let mut dist = Series::new("distance_to_first");
    let mut floor = Series::new("noise_floor");
    let mut worst = 0.0_f64;
    let floor_seed = subseed(master_seed, tags::FLOOR);
    for (i, e) in ensembles.iter().enumerate().skip(1) {
        let d = dual_lipschitz_distance(&ensembles[0], e, &family)?;
        let fl = noise_floor(&ensembles[0], e, &family, params.floor_permutations, floor_seed)?;
        dist.push(i as f64, d, 0.0);
        floor.push(i as f64, fl, 0.0);
        worst = worst.max(d / fl);
    }
    report.notes.push("series abscissa is the index of the initial state".into());
    report.verdicts.push(Verdict::new(
        "starts_agree",
        worst <= params.floor_factor,
        format!("max distance / floor = {worst:.3}"),
    ));
    report.series.extend([dist, floor]);
    Ok(report)
}

// ---------------------------------------------------------------- recurrence

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecurrenceParams {
    pub m_list: Vec<u32>,
    pub n_pairs: usize,
    pub horizon: f64,
    /// Membership is checked every this many steps.
    pub check_every: usize,
    /// Survival is reported at `horizon · i / grid_points`, `i = 1..=grid_points`.
    pub grid_points: usize,
    /// V-norm parameter `M` of the target sets `B(1/m, M)`.
    pub target_m: f64,
}

impl Default for RecurrenceParams {
    fn default() -> Self {
        Self { m_list: vec![1, 2, 4], n_pairs: 200, horizon: 20.0, check_every: 10, grid_points: 8, target_m: 2.0 }
    }
}

/// First times at which independent copies started at `(v, v′)` are both
/// in `B(1/m, M)` around `û`; survival `ℙ(τ_m > t)` per `m`.
pub fn run_recurrence(
    pair: &PairState,
    u_hat: &SpectralState,
    config: &SimConfig,
    params: &RecurrenceParams,
    master_seed: u64,
    workers: Workers,
) -> Result<ExperimentReport> {
    if params.m_list.is_empty() || params.m_list.contains(&0) {
        return Err(Error::invalid("m_list must hold positive integers"));
    }
    if params.grid_points == 0 {
        return Err(Error::invalid("grid_points must be positive"));
    }
    let sets = params
        .m_list
        .iter()
        .map(|&m| TargetSet::new(u_hat.clone(), 1.0 / m as f64, params.target_m))
        .collect::<Result<Vec<_>>>()?;
    let seed = subseed(master_seed, tags::RECURRENCE);
    let n_steps = step_count(params.horizon, config.dt)?;
    let every = params.check_every.max(1);

    let hits = map_members(workers, params.n_pairs, |i| {
        let la = SeedLineage::new(seed, 2 * i as u64);
        let lb = match pair.coupling {
            Coupling::Independent => SeedLineage::new(seed, 2 * i as u64 + 1),
            Coupling::SharedNoise => la,
        };
        let mut a = StochasticRun::new(config, pair.first.clone(), la)?;
        let mut b = StochasticRun::new(config, pair.second.clone(), lb)?;
        let mut tau: Vec<Option<f64>> = vec![None; sets.len()];
        let mut done = 0;
        loop {
            for (slot, set) in tau.iter_mut().zip(&sets) {
                if slot.is_none() && set.contains(&a.u)? && set.contains(&b.u)? {
                    *slot = Some(a.time());
                }
            }
            if done >= n_steps || tau.iter().all(Option::is_some) {
                break;
            }
            let chunk = every.min(n_steps - done);
            a.advance(chunk)?;
            b.advance(chunk)?;
            done += chunk;
        }
        Ok(tau)
    })?;

    let mut report = ExperimentReport::new("recurrence", config, master_seed);
    report.param("recurrence", params);
    report.param("u_hat_coeffs", u_hat.coeffs());
    report.param("start_first", pair.first.coeffs());
    report.param("start_second", pair.second.coeffs());
    report.notes.push("pairs without a hit by the horizon are censored at the horizon".into());
    let grid: Vec<f64> =
        (1..=params.grid_points).map(|i| params.horizon * i as f64 / params.grid_points as f64).collect();
    let n = params.n_pairs as f64;
    let mut survival_all = Vec::new();
    let mut positive_hits = true;
    let mut strictly = true;
    let mut detail = Vec::new();
    for (idx, &m) in params.m_list.iter().enumerate() {
        let mut series = Series::new(format!("survival_m{m}"));
        let mut prev = 1.0;
        let mut row = Vec::new();
        for &t in std::iter::once(&0.0).chain(&grid) {
            let alive = hits.iter().filter(|h| h[idx].is_none_or(|tau| tau > t)).count() as f64;
            let p = alive / n;
            series.push(t, p, (p * (1.0 - p) / n).sqrt());
            if t > 0.0 && prev > 0.0 && !(p < prev) {
                strictly = false;
            }
            prev = p;
            row.push(p);
        }
        let n_hits = hits.iter().filter(|h| h[idx].is_some()).count();
        positive_hits &= n_hits > 0;
        detail.push(format!("m={m}: {n_hits} hits, {} censored", params.n_pairs - n_hits));
        survival_all.push(row);
        report.series.push(series);
    }
    // Survival functions are monotone and nested by construction.
    let monotone = survival_all.iter().all(|row| row.windows(2).all(|w| w[1] <= w[0]));
    let nested = survival_all.windows(2).all(|w| w[0].iter().zip(&w[1]).all(|(small_m, large_m)| small_m <= large_m))
        || !params.m_list.windows(2).all(|w| w[0] < w[1]);
    report.verdicts.push(Verdict::new("survival_monotone", monotone, "ℙ(τ_m > s) ≥ ℙ(τ_m > t) for s ≤ t"));
    report.verdicts.push(Verdict::new("nested_in_m", nested, "tails non-decreasing in m on shared samples"));
    report.verdicts.push(Verdict::new("positive_hits", positive_hits, detail.join("; ")));
    report.verdicts.push(Verdict::new(
        "strictly_decreasing",
        strictly,
        "survival strictly decreasing on the grid while positive",
    ));
    Ok(report)
}

// ---------------------------------------------------------------- energy balance

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyParams {
    pub n_runs: usize,
    pub burn_in: f64,
    pub averaging: f64,
    /// Rows in the running-average series.
    pub report_points: usize,
    pub tolerance: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self { n_runs: 8, burn_in: 10.0, averaging: 500.0, report_points: 20, tolerance: 0.05 }
    }
}

/// Time averages of `2ν‖u‖_V²` against `Σ_j ‖e_j‖² + 2(h, u)`, the
/// stationary Itô balance of `‖u‖²`.
pub fn run_energy_balance(
    config: &SimConfig,
    params: &EnergyParams,
    master_seed: u64,
    workers: Workers,
) -> Result<ExperimentReport> {
    let seed = subseed(master_seed, tags::ENERGY);
    let burn = step_count(params.burn_in, config.dt)?;
    let avg = step_count(params.averaging, config.dt)?;
    if avg == 0 {
        return Err(Error::invalid("averaging window must cover at least one step"));
    }
    let points = params.report_points.clamp(1, avg);
    let h_grid_free = config.h.coeffs().iter().all(|c| *c == 0.0);

    struct Run {
        running_v: Vec<f64>,
        mean_v: f64,
        mean_hu: f64,
    }
    let runs = map_members(workers, params.n_runs, |i| {
        let lineage = SeedLineage::new(seed, i as u64);
        let mut run = StochasticRun::new(config, SpectralState::zeros(config.n_modes), lineage)?;
        run.advance(burn)?;
        let (mut sum_v, mut sum_hu) = (0.0, 0.0);
        let mut running_v = Vec::with_capacity(points);
        for step in 1..=avg {
            run.step()?;
            sum_v += run.u.inner_v(&run.u);
            if !h_grid_free {
                sum_hu += run.u.inner_l2(&config.h);
            }
            if step == (running_v.len() + 1) * avg / points {
                running_v.push(sum_v / step as f64);
            }
        }
        Ok(Run { running_v, mean_v: sum_v / avg as f64, mean_hu: sum_hu / avg as f64 })
    })?;

    let mut report = ExperimentReport::new("energy", config, master_seed);
    report.param("energy", params);
    let noise = config.basis.total_energy();
    report.param("noise_energy", noise);
    let mut running = Series::new("mean_v_norm_sq");
    for j in 0..points {
        let t = params.burn_in + params.averaging * (j + 1) as f64 / points as f64;
        let (m, se) = mean_and_stderr(&runs.iter().map(|r| r.running_v[j]).collect::<Vec<_>>());
        running.push(t, m, se);
    }
    let (mean_v, se_v) = mean_and_stderr(&runs.iter().map(|r| r.mean_v).collect::<Vec<_>>());
    let mean_hu = runs.iter().map(|r| r.mean_hu).sum::<f64>() / runs.len().max(1) as f64;
    let dissipation = 2.0 * config.nu * mean_v;
    let injection = noise + 2.0 * mean_hu;
    let predicted = injection / (2.0 * config.nu);
    report.param("dissipation", dissipation);
    report.param("injection", injection);
    report.param("predicted_mean_v_norm_sq", predicted);
    report.param("mean_v_norm_sq", mean_v);
    report.param("mean_v_norm_sq_stderr", se_v);
    let (passed, detail) = if injection.abs() < 1e-300 {
        (dissipation.abs() < 1e-12, format!("no forcing: dissipation {dissipation:.3e}"))
    } else {
        let rel = dissipation / injection - 1.0;
        (
            rel.abs() <= params.tolerance,
            format!("2ν⟨‖u‖_V²⟩ = {dissipation:.5}, injection {injection:.5}, relative gap {rel:+.4}"),
        )
    };
    report.verdicts.push(Verdict::new("balance", passed, detail));
    report.series.push(running);
    Ok(report)
}

// ---------------------------------------------------------------- moments

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MomentParams {
    pub n_members: usize,
    pub times: Vec<f64>,
    pub sobolev_order: f64,
    /// Largest allowed ratio between any two sampled times (and its inverse).
    pub max_ratio: f64,
    /// Initial data: `a_k = amplitude k^{−2} ξ_k` for `k ≤ cutoff`.
    pub cutoff: usize,
    pub amplitude: f64,
}

impl Default for MomentParams {
    fn default() -> Self {
        Self { n_members: 200, times: vec![2.0, 20.0], sobolev_order: 1.5, max_ratio: 2.0, cutoff: 16, amplitude: 1.0 }
    }
}

/// `E‖u(t)‖_{H^s}` and `E‖z(t)‖_1²` at each time, from random starts in a
/// V-ball.
pub fn run_moments(
    config: &SimConfig,
    params: &MomentParams,
    master_seed: u64,
    workers: Workers,
) -> Result<ExperimentReport> {
    all_times_sorted(&params.times)?;
    let seed = subseed(master_seed, tags::MOMENTS);
    let tag_u = NormTag::hs(params.sobolev_order)?;
    let tag_z = NormTag::V;
    let sampler =
        PowerLawSampler { n_modes: config.n_modes, decay: 2.0, amplitude: params.amplitude, cutoff: params.cutoff };
    let rows = map_members(workers, params.n_members, |i| {
        let lineage = SeedLineage::new(seed, i as u64);
        let u0 = sampler.sample(&mut lineage.rng(streams::INITIAL_DATA));
        let mut run = StochasticRun::new(config, u0, lineage)?.with_convolution();
        let mut out = Vec::new();
        for &t in &params.times {
            run.advance_to(t)?;
            let z = run.convolution().expect("convolution tracked");
            out.push((norm(&run.u, tag_u), norm(&z.current, tag_z).powi(2)));
        }
        Ok(out)
    })?;
    let mut report = ExperimentReport::new("moments", config, master_seed);
    report.param("moments", params);
    let mut su = Series::new(format!("mean_{}", tag_u.label()));
    let mut sz = Series::new("mean_z_h1_sq");
    for (j, &t) in params.times.iter().enumerate() {
        let (m, se) = mean_and_stderr(&rows.iter().map(|r| r[j].0).collect::<Vec<_>>());
        su.push(t, m, se);
        let (m, se) = mean_and_stderr(&rows.iter().map(|r| r[j].1).collect::<Vec<_>>());
        sz.push(t, m, se);
    }
    for s in [&su, &sz] {
        let v = s.values();
        let ratio = v.last().unwrap() / v[0];
        report.verdicts.push(Verdict::new(
            format!("{}_bounded", s.name),
            ratio <= params.max_ratio && ratio >= 1.0 / params.max_ratio,
            format!("value(t={}) / value(t={}) = {ratio:.3}", params.times.last().unwrap(), params.times[0]),
        ));
    }
    report.series.extend([su, sz]);
    Ok(report)
}

// ---------------------------------------------------------------- stability

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilityParams {
    pub m_list: Vec<u32>,
    pub times: Vec<f64>,
    pub n_members: usize,
    /// Low-mode cutoff of the base state and the perturbation profile.
    pub cutoff: usize,
}

impl Default for StabilityParams {
    fn default() -> Self {
        Self { m_list: vec![1, 2, 4, 8], times: vec![1.0, 2.0, 5.0], n_members: 100, cutoff: 8 }
    }
}

/// Starts `v, v′ = w ± p/m` with `‖p‖_{L¹} = 1` (L¹-diameter `2/m`). The
/// shared-noise coupling gives the upper bound
/// `‖P_t(v,·) − P_t(v′,·)‖*_L ≤ E min(2, ‖u − u′‖_V) =: δ_m(t)`.
pub fn run_stability(
    config: &SimConfig,
    params: &StabilityParams,
    master_seed: u64,
    workers: Workers,
) -> Result<ExperimentReport> {
    all_times_sorted(&params.times)?;
    if params.m_list.is_empty() || params.m_list.contains(&0) {
        return Err(Error::invalid("m_list must hold positive integers"));
    }
    let seed = subseed(master_seed, tags::STABILITY);
    let n = config.n_modes;
    let mut rng = SeedLineage::new(seed, 0).rng(streams::INITIAL_DATA);
    let base = random_state(&mut rng, n, params.cutoff, 2.0, 1.0);
    let profile = random_state(&mut rng, n, params.cutoff, 2.0, 1.0);
    let profile = profile.scale(1.0 / norm_refined(&profile, NormTag::L1, 4));

    let mut report = ExperimentReport::new("stability", config, master_seed);
    report.param("stability", params);
    let mut per_m: Vec<Vec<f64>> = Vec::new();
    for &m in &params.m_list {
        let shift = profile.scale(1.0 / m as f64);
        let (v, w) = (base.add(&shift), base.sub(&shift));
        let gaps = map_members(workers, params.n_members, |i| {
            let lineage = SeedLineage::new(seed, 1 + i as u64);
            let mut a = StochasticRun::new(config, v.clone(), lineage)?;
            let mut b = StochasticRun::new(config, w.clone(), lineage)?;
            let mut out = Vec::new();
            for &t in &params.times {
                a.advance_to(t)?;
                b.advance_to(t)?;
                out.push(norm(&a.u.sub(&b.u), NormTag::V).min(2.0));
            }
            Ok(out)
        })?;
        let mut series = Series::new(format!("delta_m{m}"));
        let mut row = Vec::new();
        for (j, &t) in params.times.iter().enumerate() {
            let (mean, se) = mean_and_stderr(&gaps.iter().map(|g| g[j]).collect::<Vec<_>>());
            series.push(t, mean, se);
            row.push(mean);
        }
        per_m.push(row);
        report.series.push(series);
    }
    let decreasing = per_m.windows(2).all(|w| w[0].iter().zip(&w[1]).all(|(a, b)| b < a));
    report.verdicts.push(Verdict::new(
        "delta_decreasing_in_m",
        decreasing,
        "coupling bound δ_m(t) strictly decreasing in m at every t",
    ));
    Ok(report)
}
