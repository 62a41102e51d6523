//! Empirical laws of the solution and distances between them.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{SimConfig, StochasticRun};
use crate::error::{Error, Result};
use crate::parallel::{map_members, Workers};
use crate::rng::{stream_rng, streams, SeedLineage};
use crate::spectral::{norm, NormTag, SpectralState};

/// States of independent trajectories observed at a common time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub states: Vec<SpectralState>,
    pub t: f64,
    pub config_hash: String,
    pub seeds: Vec<SeedLineage>,
}

impl Ensemble {
    pub fn new(states: Vec<SpectralState>, t: f64, config_hash: String, seeds: Vec<SeedLineage>) -> Result<Self> {
        let first = states.first().ok_or_else(|| Error::invalid("an ensemble needs at least one member"))?;
        let n = first.n_modes();
        if let Some(bad) = states.iter().find(|s| s.n_modes() != n) {
            return Err(Error::DimensionMismatch { expected: n, found: bad.n_modes() });
        }
        if !seeds.is_empty() && seeds.len() != states.len() {
            return Err(Error::invalid("one seed lineage per member"));
        }
        Ok(Self { states, t, config_hash, seeds })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn n_modes(&self) -> usize {
        self.states[0].n_modes()
    }
}

/// Draws one initial state from the member's initial-data stream.
pub trait InitialSampler: Sync {
    fn sample(&self, rng: &mut ChaCha8Rng) -> SpectralState;
}

impl<F> InitialSampler for F
where
    F: Fn(&mut ChaCha8Rng) -> SpectralState + Sync,
{
    fn sample(&self, rng: &mut ChaCha8Rng) -> SpectralState {
        self(rng)
    }
}

/// Deterministic start at `u`.
pub struct PointMass(pub SpectralState);

impl InitialSampler for PointMass {
    fn sample(&self, _rng: &mut ChaCha8Rng) -> SpectralState {
        self.0.clone()
    }
}

/// Ensembles at each of `times` from one set of `n_members` trajectories.
/// Member `i` uses seed lineage `(master_seed, i)`.
pub fn make_ensembles(
    sampler: &dyn InitialSampler,
    times: &[f64],
    n_members: usize,
    config: &SimConfig,
    master_seed: u64,
    workers: Workers,
) -> Result<Vec<Ensemble>> {
    if n_members < 2 {
        return Err(Error::invalid("an ensemble run needs at least two members"));
    }
    if times.windows(2).any(|w| !(w[1] >= w[0])) || times.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::invalid("sample times must be non-negative and sorted"));
    }
    let members = map_members(workers, n_members, |i| {
        let lineage = SeedLineage::new(master_seed, i as u64);
        let u0 = sampler.sample(&mut lineage.rng(streams::INITIAL_DATA));
        let mut run = StochasticRun::new(config, u0, lineage)?;
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            run.advance_to(t)?;
            out.push(run.u.clone());
        }
        Ok(out)
    })?;
    let hash = config.hash();
    let seeds: Vec<SeedLineage> = (0..n_members as u64).map(|i| SeedLineage::new(master_seed, i)).collect();
    times
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let states = members.iter().map(|m| m[j].clone()).collect();
            Ensemble::new(states, t, hash.clone(), seeds.clone())
        })
        .collect()
}

pub fn make_ensemble(
    sampler: &dyn InitialSampler,
    t: f64,
    n_members: usize,
    config: &SimConfig,
    master_seed: u64,
    workers: Workers,
) -> Result<Ensemble> {
    Ok(make_ensembles(sampler, &[t], n_members, config, master_seed, workers)?.remove(0))
}

/// Test functions `u ↦ g(clip(⟨u − m, d⟩_V))` built from unit directions in V.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunctionFamily {
    directions: Vec<SpectralState>,
    clip: f64,
    seed: u64,
}

pub const MIN_FAMILY_SIZE: usize = 32;

impl TestFunctionFamily {
    /// Directions `d_k ∝ ξ_k / k²`, ξ standard Gaussian, normalized in V.
    /// The `k⁻²` weight keeps the draws in V as the resolution grows.
    pub fn gaussian(n_modes: usize, size: usize, clip: f64, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, 0, streams::DIRECTIONS);
        let directions = (0..size)
            .map(|_| {
                SpectralState::from_fn(n_modes, |k| {
                    let xi: f64 = rng.sample(StandardNormal);
                    xi / (k * k) as f64
                })
            })
            .collect();
        Self::from_directions(directions, clip, seed)
    }

    /// Normalizes the given directions in V.
    pub fn from_directions(directions: Vec<SpectralState>, clip: f64, seed: u64) -> Result<Self> {
        if directions.len() < MIN_FAMILY_SIZE {
            return Err(Error::invalid(format!(
                "test-function family needs at least {MIN_FAMILY_SIZE} directions, got {}",
                directions.len()
            )));
        }
        if !(clip > 0.0 && clip.is_finite()) {
            return Err(Error::invalid("clip bound must be positive"));
        }
        let n = directions[0].n_modes();
        let mut out = Vec::with_capacity(directions.len());
        for d in directions {
            if d.n_modes() != n {
                return Err(Error::DimensionMismatch { expected: n, found: d.n_modes() });
            }
            let v = norm(&d, NormTag::V);
            if !(v > 0.0) {
                return Err(Error::invalid("directions must be non-zero"));
            }
            out.push(d.scale(1.0 / v));
        }
        Ok(Self { directions: out, clip, seed })
    }

    pub fn directions(&self) -> &[SpectralState] {
        &self.directions
    }

    pub fn clip(&self) -> f64 {
        self.clip
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn n_modes(&self) -> usize {
        self.directions[0].n_modes()
    }
}

/// Breakdown of a distance estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceEstimate {
    /// `max(ramp, wasserstein)`, a lower bound on the dual-Lipschitz distance.
    pub value: f64,
    /// Largest normalized mean difference of the clipped projection.
    pub ramp: f64,
    /// Largest normalized 1-Wasserstein distance of the clipped projections.
    pub wasserstein: f64,
    pub best_direction: usize,
    pub family_size: usize,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `∫|F_a − F_b|` for two sorted samples, of any sizes.
fn wasserstein_1d(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    let mut x_prev = a[0].min(b[0]);
    while i < a.len() || j < b.len() {
        let take_a = j == b.len() || (i < a.len() && a[i] <= b[j]);
        let x = if take_a { a[i] } else { b[j] };
        total += (i as f64 / na - j as f64 / nb).abs() * (x - x_prev);
        x_prev = x;
        if take_a {
            i += 1;
        } else {
            j += 1;
        }
    }
    total
}

fn projections(ensemble: &Ensemble, direction: &SpectralState) -> Vec<f64> {
    ensemble.states.iter().map(|u| u.inner_v(direction)).collect()
}

/// Per-direction terms: (ramp, Wasserstein), both normalized by `1 + clip`.
fn direction_terms(pa: &[f64], pb: &[f64], clip: f64) -> (f64, f64) {
    let mut pooled: Vec<f64> = pa.iter().chain(pb).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let center = median(&pooled);
    let clipped = |p: &[f64]| -> Vec<f64> {
        let mut v: Vec<f64> = p.iter().map(|x| (x - center).clamp(-clip, clip)).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let (ca, cb) = (clipped(pa), clipped(pb));
    let scale = 1.0 / (1.0 + clip);
    let ramp = (mean(&ca) - mean(&cb)).abs() * scale;
    let w1 = wasserstein_1d(&ca, &cb) * scale;
    (ramp, w1)
}

/// Family-based lower bound on `sup_{‖f‖_L ≤ 1} |E_A f − E_B f|`.
///
/// For each direction `d` the projections `⟨u, d⟩_V` are centered at the
/// pooled median and clipped to `[−c, c]`. Any 1-Lipschitz `g` of the clipped
/// projection has `‖g‖_∞ ≤ c` after centering and Lipschitz constant 1 in V,
/// so dividing by `1 + c` puts it in the unit ball. The ramp `g = id` and the
/// optimal 1D transport over all such `g` are both reported.
pub fn dual_lipschitz_estimate(a: &Ensemble, b: &Ensemble, family: &TestFunctionFamily) -> Result<DistanceEstimate> {
    if a.n_modes() != family.n_modes() {
        return Err(Error::DimensionMismatch { expected: family.n_modes(), found: a.n_modes() });
    }
    if b.n_modes() != family.n_modes() {
        return Err(Error::DimensionMismatch { expected: family.n_modes(), found: b.n_modes() });
    }
    let mut best =
        DistanceEstimate { value: 0.0, ramp: 0.0, wasserstein: 0.0, best_direction: 0, family_size: family.len() };
    for (i, d) in family.directions().iter().enumerate() {
        let (ramp, w1) = direction_terms(&projections(a, d), &projections(b, d), family.clip());
        best.ramp = best.ramp.max(ramp);
        if w1 > best.wasserstein {
            best.wasserstein = w1;
            best.best_direction = i;
        }
    }
    best.value = best.ramp.max(best.wasserstein);
    Ok(best)
}

pub fn dual_lipschitz_distance(a: &Ensemble, b: &Ensemble, family: &TestFunctionFamily) -> Result<f64> {
    Ok(dual_lipschitz_estimate(a, b, family)?.value)
}

/// Mean estimate over random relabelings of the pooled sample: the level
/// the estimator reports for two samples of one law of these sizes.
pub fn noise_floor(
    a: &Ensemble,
    b: &Ensemble,
    family: &TestFunctionFamily,
    n_permutations: usize,
    seed: u64,
) -> Result<f64> {
    if n_permutations == 0 {
        return Err(Error::invalid("noise floor needs at least one permutation"));
    }
    let mut pooled: Vec<SpectralState> = a.states.iter().chain(&b.states).cloned().collect();
    let mut rng = stream_rng(seed, 0, streams::PERMUTATION);
    let mut total = 0.0;
    for _ in 0..n_permutations {
        pooled.shuffle(&mut rng);
        let (left, right) = pooled.split_at(a.len());
        let ea = Ensemble { states: left.to_vec(), ..a.clone() };
        let eb = Ensemble { states: right.to_vec(), ..b.clone() };
        total += dual_lipschitz_distance(&ea, &eb, family)?;
    }
    Ok(total / n_permutations as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub norm: String,
    pub power: u32,
    pub mean: f64,
    pub stderr: f64,
}

/// Sample means of `‖u‖^k` with standard errors.
pub fn moment_report(ensemble: &Ensemble, norms: &[NormTag], powers: &[u32]) -> Vec<MomentRow> {
    let mut rows = Vec::with_capacity(norms.len() * powers.len());
    for tag in norms {
        let values: Vec<f64> = ensemble.states.iter().map(|u| norm(u, *tag)).collect();
        for &k in powers {
            let samples: Vec<f64> = values.iter().map(|v| v.powi(k as i32)).collect();
            let (m, se) = mean_and_stderr(&samples);
            rows.push(MomentRow { norm: tag.label(), power: k, mean: m, stderr: se });
        }
    }
    rows
}

/// Sample mean and its standard error (zero for a single sample).
pub fn mean_and_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let m = mean(samples);
    if samples.len() < 2 {
        return (m, 0.0);
    }
    let var = samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// `B(ε, M) = {u : ‖u − û‖_{L¹} < 2ε, ‖u‖_V < 2M}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSet {
    pub u_hat: SpectralState,
    pub eps: f64,
    pub m: f64,
}

impl TargetSet {
    pub fn new(u_hat: SpectralState, eps: f64, m: f64) -> Result<Self> {
        if !(eps > 0.0) || !(m > 0.0) {
            return Err(Error::invalid("target set needs ε > 0 and M > 0"));
        }
        Ok(Self { u_hat, eps, m })
    }

    pub fn contains(&self, u: &SpectralState) -> Result<bool> {
        in_target_set(u, self)
    }
}

pub fn in_target_set(u: &SpectralState, set: &TargetSet) -> Result<bool> {
    u.check_same_size(&set.u_hat)?;
    Ok(norm(&u.sub(&set.u_hat), NormTag::L1) < 2.0 * set.eps && norm(u, NormTag::V) < 2.0 * set.m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forcing::ForcingBasis;
    use rand::SeedableRng;
    use std::f64::consts::PI;

    fn ensemble(states: Vec<SpectralState>) -> Ensemble {
        Ensemble::new(states, 0.0, String::new(), Vec::new()).unwrap()
    }

    fn gaussian_cloud(n_members: usize, n_modes: usize, shift: f64, seed: u64) -> Ensemble {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ensemble(
            (0..n_members)
                .map(|_| {
                    SpectralState::from_fn(n_modes, |k| {
                        let xi: f64 = rng.sample(StandardNormal);
                        (xi + if k == 1 { shift } else { 0.0 }) / (k * k) as f64
                    })
                })
                .collect(),
        )
    }

    #[test]
    fn ensemble_invariants() {
        assert!(Ensemble::new(Vec::new(), 0.0, String::new(), Vec::new()).is_err());
        let mixed = vec![SpectralState::zeros(4), SpectralState::zeros(5)];
        assert!(Ensemble::new(mixed, 0.0, String::new(), Vec::new()).is_err());
    }

    #[test]
    fn ensemble_at_time_zero_and_determinism() {
        let basis = ForcingBasis::build(1.0, 2.0, 1.0, 1.0, 16).unwrap();
        let config = SimConfig::new(0.5, 1e-3, basis).unwrap();
        let sampler = |rng: &mut ChaCha8Rng| SpectralState::from_fn(16, |_| rng.random_range(-1.0..1.0));
        let e0 = make_ensemble(&sampler, 0.0, 2, &config, 9, Workers::new(1)).unwrap();
        let expect: Vec<SpectralState> =
            (0..2).map(|i| sampler(&mut SeedLineage::new(9, i).rng(streams::INITIAL_DATA))).collect();
        assert_eq!(e0.states, expect);
        let a = make_ensemble(&sampler, 0.1, 6, &config, 9, Workers::new(1)).unwrap();
        let b = make_ensemble(&sampler, 0.1, 6, &config, 9, Workers::new(3)).unwrap();
        assert_eq!(a, b);
        assert!(make_ensemble(&sampler, 0.1, 1, &config, 9, Workers::new(1)).is_err());
    }

    #[test]
    fn identical_ensembles_have_zero_distance() {
        let a = gaussian_cloud(50, 16, 0.0, 1);
        let family = TestFunctionFamily::gaussian(16, 32, 1.0, 3).unwrap();
        assert_eq!(dual_lipschitz_distance(&a, &a, &family).unwrap(), 0.0);
    }

    #[test]
    fn point_masses_along_a_direction() {
        let n = 8;
        let mut dirs = vec![SpectralState::mode(n, 1, 1.0)];
        dirs.extend((0..31).map(|i| SpectralState::mode(n, 2 + i % 7, 1.0)));
        let family = TestFunctionFamily::from_directions(dirs, 1.0, 0).unwrap();
        let d = &family.directions()[0];
        let a = ensemble(vec![d.scale(1.5)]);
        let b = ensemble(vec![d.scale(-1.0)]);
        let est = dual_lipschitz_estimate(&a, &b, &family).unwrap();
        assert!((est.value - 1.0).abs() < 1e-12, "{est:?}");
        // Separation below the clip bound: the estimate is half the gap.
        let est = dual_lipschitz_estimate(&a, &ensemble(vec![d.scale(1.0)]), &family).unwrap();
        assert!((est.value - 0.25).abs() < 1e-12);
    }

    #[test]
    fn wasserstein_of_unequal_samples() {
        // Oracle: closed form for uniform grids.
        assert!((wasserstein_1d(&[0.0, 1.0], &[0.5]) - 0.5).abs() < 1e-15);
        assert!((wasserstein_1d(&[0.0], &[2.0]) - 2.0).abs() < 1e-15);
        let a: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 0.3).collect();
        assert!((wasserstein_1d(&a, &b) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn same_law_stays_near_clt_floor() {
        let a = gaussian_cloud(1000, 32, 0.0, 10);
        let b = gaussian_cloud(1000, 32, 0.0, 11);
        let family = TestFunctionFamily::gaussian(32, 64, 1.0, 5).unwrap();
        let d = dual_lipschitz_distance(&a, &b, &family).unwrap();
        assert!(d <= 4.0 / 1000f64.sqrt(), "{d}");
        let floor = noise_floor(&a, &b, &family, 8, 2).unwrap();
        assert!(floor > 0.0 && d <= 3.0 * floor, "d={d} floor={floor}");
    }

    #[test]
    fn moments_of_small_ensembles() {
        let rows = moment_report(&ensemble(vec![SpectralState::zeros(4); 3]), &[NormTag::L2, NormTag::V], &[1, 2]);
        assert!(rows.iter().all(|r| r.mean == 0.0 && r.stderr == 0.0));
        let sin = SpectralState::mode(4, 1, 1.0);
        let rows = moment_report(&ensemble(vec![sin.clone()]), &[NormTag::L2], &[1, 2, 3]);
        for r in rows {
            assert!((r.mean - (PI / 2.0).powf(r.power as f64 / 2.0)).abs() < 1e-14);
        }
        let rows = moment_report(&ensemble(vec![SpectralState::zeros(4), sin]), &[NormTag::L2], &[2]);
        assert!((rows[0].mean - PI / 4.0).abs() < 1e-14);
    }

    #[test]
    fn target_set_membership() {
        let n = 256;
        let u_hat = SpectralState::mode(n, 1, 0.5);
        let set = TargetSet::new(u_hat.clone(), 0.1, 1.0).unwrap();
        assert!(in_target_set(&u_hat, &set).unwrap());
        assert!(!in_target_set(&u_hat.add(&SpectralState::mode(n, n, 1.0)), &set).unwrap());
        // Exactly on the L¹ boundary: strict inequality excludes it.
        let origin = TargetSet::new(SpectralState::zeros(n), 1.0, 10.0).unwrap();
        let u = SpectralState::mode(n, 1, 0.5);
        let edge = TargetSet { eps: norm(&u, NormTag::L1) / 2.0, ..origin };
        assert!(!in_target_set(&u, &edge).unwrap());
        assert!(in_target_set(&u.scale(0.999), &edge).unwrap());
        assert!(TargetSet::new(u_hat, 0.0, 1.0).is_err());
    }

    #[test]
    fn family_is_normalized_and_prefix_stable() {
        let small = TestFunctionFamily::gaussian(32, 32, 1.0, 4).unwrap();
        let large = TestFunctionFamily::gaussian(32, 64, 1.0, 4).unwrap();
        for d in large.directions() {
            assert!((norm(d, NormTag::V) - 1.0).abs() < 1e-10);
        }
        assert_eq!(small.directions(), &large.directions()[..32]);
        assert!(TestFunctionFamily::gaussian(32, 8, 1.0, 4).is_err());
    }
}
