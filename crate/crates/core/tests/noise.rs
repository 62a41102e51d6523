//! Monte Carlo checks of the driving noise and the stochastic convolution.

use burgerslab::forcing::{ConvolutionStepper, NoiseGenerator, StochasticConvolution};
use burgerslab::measures::mean_and_stderr;
use burgerslab::{norm, sample_noise, ForcingBasis, NormTag, SeedLineage};

fn basis(n: usize) -> ForcingBasis {
    ForcingBasis::build(1.0, 2.0, 1.0, 1.0, n).unwrap()
}

/// Independent oracle for the stationary variance of
/// `z ← λ(z + Σ e_j Δβ_j)`: iterate `v ← λ²(v + Σ e_j² dt)` to its fixed point.
fn variance_by_iteration(basis: &ForcingBasis, nu: f64, dt: f64) -> Vec<f64> {
    (0..basis.n_modes())
        .map(|i| {
            let k = (i + 1) as f64;
            let l2 = (-2.0 * nu * k * k * dt).exp();
            let kick: f64 = basis.profiles().iter().map(|p| p.coeffs()[i].powi(2)).sum::<f64>() * dt;
            let mut v = 0.0;
            for _ in 0..200_000 {
                let next = l2 * (v + kick);
                if next == v {
                    break;
                }
                v = next;
            }
            v
        })
        .collect()
}

#[test]
fn closed_form_variance_matches_fixed_point() {
    let b = basis(16);
    let stepper = ConvolutionStepper::new(&b, 0.5, 1e-2);
    for (a, o) in stepper.stationary_variance(&b).iter().zip(variance_by_iteration(&b, 0.5, 1e-2)) {
        assert!((a - o).abs() <= 1e-12 * o.abs().max(1e-300), "{a} vs {o}");
    }
}

#[test]
fn stationary_variance_by_time_average() {
    let (n, nu, dt) = (6, 0.5, 1e-2);
    let b = basis(n);
    let oracle = variance_by_iteration(&b, nu, dt);
    let stepper = ConvolutionStepper::new(&b, nu, dt);
    let mut gen = NoiseGenerator::new(SeedLineage::new(11, 0), dt, 2).unwrap();
    let mut z = StochasticConvolution::new(n, nu);
    let mut db = [0.0; 2];
    for _ in 0..10_000 {
        gen.fill(&mut db);
        stepper.step(&mut z, &db);
    }
    let steps = 2_000_000;
    let mut acc = vec![0.0; n];
    for _ in 0..steps {
        gen.fill(&mut db);
        stepper.step(&mut z, &db);
        for (a, c) in acc.iter_mut().zip(z.current.coeffs()) {
            *a += c * c;
        }
    }
    let largest = oracle.iter().cloned().fold(0.0, f64::max);
    for (k, (a, o)) in acc.iter().zip(&oracle).enumerate() {
        if *o < 1e-3 * largest {
            continue;
        }
        let est = a / steps as f64;
        assert!((est / o - 1.0).abs() < 0.05, "mode {}: {est} vs {o}", k + 1);
    }
}

#[test]
fn convolution_is_gaussian() {
    let (n, nu, dt, members) = (6, 0.5, 1e-2, 10_000);
    let b = basis(n);
    let stepper = ConvolutionStepper::new(&b, nu, dt);
    let mut samples = vec![Vec::with_capacity(members); n];
    for m in 0..members {
        let mut gen = NoiseGenerator::new(SeedLineage::new(5, m as u64), dt, 2).unwrap();
        let mut z = StochasticConvolution::new(n, nu);
        let mut db = [0.0; 2];
        for _ in 0..200 {
            gen.fill(&mut db);
            stepper.step(&mut z, &db);
        }
        for (s, c) in samples.iter_mut().zip(z.current.coeffs()) {
            s.push(*c);
        }
    }
    for (k, s) in samples.iter().enumerate() {
        let mean = s.iter().sum::<f64>() / members as f64;
        let m2 = s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / members as f64;
        let m3 = s.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / members as f64;
        let skew = m3 / m2.powf(1.5);
        assert!(skew.abs() < 0.1, "mode {}: skewness {skew}", k + 1);
    }
}

#[test]
fn increment_rows_are_uncorrelated() {
    let m = 100_000;
    let dt = 1e-3;
    let path = sample_noise(21, dt, m).unwrap();
    let (a, b) = (&path.increments[0], &path.increments[1]);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    let corr = cov / (va * vb).sqrt();
    assert!(corr.abs() < 4.0 / (m as f64).sqrt(), "correlation {corr}");
    assert!((va / m as f64 / dt - 1.0).abs() < 0.02);
}

struct WindowStats {
    energy: f64,
    sup_h2: f64,
    sup_h4: f64,
}

/// `‖z(t)‖_V² + ∫_t^{t+1}‖z‖_{L²}²` and `sup_{[t,t+1]}‖z‖_{H^1.5}^{2,4}` for each
/// member, for every window start in `starts`.
fn window_statistics(starts: &[f64], members: usize) -> Vec<Vec<WindowStats>> {
    let (n, nu, dt) = (32, 0.5, 1e-2);
    let b = basis(n);
    let stepper = ConvolutionStepper::new(&b, nu, dt);
    let hs = NormTag::hs(1.5).unwrap();
    let per_window = (1.0 / dt) as usize;
    let mut out: Vec<Vec<WindowStats>> = starts.iter().map(|_| Vec::new()).collect();
    for m in 0..members {
        let mut gen = NoiseGenerator::new(SeedLineage::new(8, m as u64), dt, 2).unwrap();
        let mut z = StochasticConvolution::new(n, nu);
        let mut db = [0.0; 2];
        let mut step = 0usize;
        for (w, &t) in starts.iter().enumerate() {
            let start_step = (t / dt).round() as usize;
            while step < start_step {
                gen.fill(&mut db);
                stepper.step(&mut z, &db);
                step += 1;
            }
            let v = norm(&z.current, NormTag::V);
            let mut integral = 0.0;
            let mut sup: f64 = norm(&z.current, hs);
            for _ in 0..per_window {
                let before = z.current.coeffs().iter().map(|c| c * c).sum::<f64>();
                gen.fill(&mut db);
                stepper.step(&mut z, &db);
                step += 1;
                let after = z.current.coeffs().iter().map(|c| c * c).sum::<f64>();
                // ‖z‖_{L²}² = π/2 Σ z_k² for the sine basis; trapezoid in time.
                integral += 0.5 * (before + after) * std::f64::consts::FRAC_PI_2 * dt;
                sup = sup.max(norm(&z.current, hs));
            }
            out[w].push(WindowStats { energy: v * v + integral, sup_h2: sup.powi(2), sup_h4: sup.powi(4) });
        }
    }
    out
}

#[test]
fn convolution_bounds_are_time_uniform() {
    let stats = window_statistics(&[5.0, 50.0], 400);
    let summary =
        |f: &dyn Fn(&WindowStats) -> f64, w: usize| mean_and_stderr(&stats[w].iter().map(f).collect::<Vec<_>>());
    let (e5, _) = summary(&|s| s.energy, 0);
    let (e50, _) = summary(&|s| s.energy, 1);
    assert!(e50 <= 2.0 * e5 && e5 <= 2.0 * e50, "energy windows {e5} vs {e50}");
    for f in [&(|s: &WindowStats| s.sup_h2) as &dyn Fn(&WindowStats) -> f64, &|s: &WindowStats| s.sup_h4] {
        let (a, sa) = summary(f, 0);
        let (b, sb) = summary(f, 1);
        assert!((a - b).abs() <= 4.0 * (sa * sa + sb * sb).sqrt(), "sup moments {a}±{sa} vs {b}±{sb}");
    }
}
