use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use superstar_core::model::*;
use superstar_core::spillovers::hspill;

/// Maximizes `Θ^{1-ρ} q^ρ - (w/φ) q - f` over `u = ln q` by a coarse scan
/// followed by golden-section refinement.
fn brute_force_profit(phi: f64, p: &ModelParams) -> f64 {
    let obj = |u: f64| p.theta.powf(1.0 - p.rho) * (p.rho * u).exp() - p.w / phi * u.exp() - p.f;
    let mut best = -60.0;
    let mut u = -60.0;
    while u <= 60.0 {
        if obj(u) > obj(best) {
            best = u;
        }
        u += 0.25;
    }
    let (mut a, mut b) = (best - 0.25, best + 0.25);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if obj(c) > obj(d) {
            b = d;
        } else {
            a = c;
        }
    }
    obj(0.5 * (a + b))
}

fn random_params(rng: &mut ChaCha8Rng) -> (ModelParams, SpillExposure, f64) {
    let p = ModelParams {
        rho: rng.random_range(0.1..0.9),
        theta: rng.random_range(0.5..5.0),
        w: rng.random_range(0.5..2.0),
        f: rng.random_range(0.01..2.0),
        alpha: rng.random_range(0.0..0.02),
        tau: rng.random_range(0.0..0.05),
        psi: rng.random_range(0.0..0.05),
        c: rng.random_range(0.5..2.0),
        ..ModelParams::default()
    };
    let e = SpillExposure::new(
        rng.random_range(0.0..100.0),
        rng.random_range(0.0..10.0),
        rng.random_range(0.0..10.0),
    );
    (p, e, rng.random_range(0.1..5.0))
}

#[test]
fn closed_form_profit_matches_numerical_maximum() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let (p, e, lambda) = random_params(&mut rng);
        let phi = productivity_phi(lambda, &e, &p).unwrap();
        let closed = optimal_profit(lambda, &e, &p).unwrap();
        let numeric = brute_force_profit(phi, &p);
        let scale = closed + p.f;
        assert!((closed - numeric).abs() <= 1e-8 * scale, "{closed} vs {numeric}");
    }
}

#[test]
fn mr_equals_mc_at_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let (p, _, phi) = random_params(&mut rng);
        let price = optimal_price(phi, &p).unwrap();
        assert!((p.rho * price - p.w / phi).abs() < 1e-12 * (p.w / phi));
        // price read off the demand curve at the optimal quantity
        let q = optimal_quantity(phi, &p).unwrap();
        let demand_price = (q / p.theta).powf(p.rho - 1.0);
        assert!((demand_price - price).abs() < 1e-10 * price);
    }
}

#[test]
fn profit_strictly_increasing_in_capability() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..500 {
        let (p, e, l1) = random_params(&mut rng);
        let l2 = l1 * rng.random_range(1.001..3.0);
        assert!(optimal_profit(l2, &e, &p).unwrap() > optimal_profit(l1, &e, &p).unwrap());
    }
}

#[test]
fn cutoff_is_the_zero_of_profit() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..1000 {
        let (p, e, _) = random_params(&mut rng);
        let cut = cutoff_capability(&e, &p).unwrap();
        assert!(!cut.degenerate);
        assert!(optimal_profit(cut.lambda, &e, &p).unwrap().abs() < 1e-10);

        // bisection in ln λ
        let (mut lo, mut hi) = (-300.0f64, 300.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if optimal_profit(mid.exp(), &e, &p).unwrap() < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let root = (0.5 * (lo + hi)).exp();
        assert!((root - cut.lambda).abs() <= 1e-9 * cut.lambda);
    }
}

#[test]
fn cutoff_falls_with_horizontal_exposure() {
    let p = ModelParams {
        alpha: 0.01,
        ..ModelParams::default()
    };
    let cuts: Vec<f64> = (0..10)
        .map(|i| {
            cutoff_capability(&SpillExposure::new(10.0 * i as f64, 1.0, 1.0), &p)
                .unwrap()
                .lambda
        })
        .collect();
    assert!(cuts.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn marginal_effect_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let dists = [
        CapabilityDist::LogNormal { mu: 0.0, sigma: 0.5 },
        CapabilityDist::LogNormal { mu: 0.2, sigma: 1.0 },
        CapabilityDist::Pareto { scale: 0.5, shape: 3.0 },
    ];
    for i in 0..100 {
        let p = ModelParams {
            rho: rng.random_range(0.3..0.8),
            f: rng.random_range(0.1..1.0),
            alpha: rng.random_range(0.001..0.02),
            tau: rng.random_range(0.001..0.05),
            psi: rng.random_range(0.001..0.05),
            capability_dist: dists[i % dists.len()],
            ..ModelParams::default()
        };
        let e = SpillExposure::new(
            rng.random_range(1.0..90.0),
            rng.random_range(0.5..10.0),
            rng.random_range(0.5..10.0),
        );
        let channel = Channel::ALL[i % 3];
        let m = spillover_marginal_effect(&e, &p, channel).unwrap();
        let fd = finite_difference_effect(&e, &p, channel, 1e-4).unwrap();
        let scale = m.direct.abs() + m.indirect.abs();
        assert!((m.total - fd).abs() <= 1e-4 * scale, "{i}: {m:?} vs {fd}");
    }
}

#[test]
fn expected_log_productivity_matches_monte_carlo() {
    let p = ModelParams {
        capability_dist: CapabilityDist::LogNormal { mu: 0.1, sigma: 0.7 },
        ..ModelParams::default()
    };
    let e = SpillExposure::new(30.0, 2.0, 1.0);
    let cut = cutoff_capability(&e, &p).unwrap().lambda;
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let (mut n, mut s, mut s2) = (0usize, 0.0, 0.0);
    for _ in 0..10_000_000 {
        let l = p.capability_dist.sample(&mut rng);
        if l >= cut {
            let v = l.ln();
            n += 1;
            s += v;
            s2 += v * v;
        }
    }
    let mean = s / n as f64;
    let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
    let quad = expected_log_productivity(&e, &p).unwrap() - p.spill_shift(&e) - p.c.ln();
    assert!((quad - mean).abs() < 3.0 * se, "{quad} vs {mean} ± {se}");
}

#[test]
fn power_mean_matches_monte_carlo_and_rises_with_cutoff() {
    let p = ModelParams {
        capability_dist: CapabilityDist::LogNormal { mu: 0.0, sigma: 0.6 },
        ..ModelParams::default()
    };
    let sigma = 3.0;
    let phi_star = 0.8;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (mut n, mut s, mut s2) = (0usize, 0.0, 0.0);
    for _ in 0..10_000_000 {
        let x = p.capability_dist.sample(&mut rng);
        if x >= phi_star {
            let v = x.powf(sigma - 1.0);
            n += 1;
            s += v;
            s2 += v * v;
        }
    }
    let m = s / n as f64;
    let se = ((s2 / n as f64 - m * m) / n as f64).sqrt();
    let tilde = aggregate_productivity_tilde(&p, phi_star, sigma, PowerConvention::Standard).unwrap();
    let moment = tilde.powf(sigma - 1.0);
    assert!((moment - m).abs() < 3.0 * se, "{moment} vs {m} ± {se}");

    let path: Vec<f64> = [0.2, 0.5, 0.8, 1.1, 1.5]
        .iter()
        .map(|&t| aggregate_productivity_tilde(&p, t, sigma, PowerConvention::Standard).unwrap())
        .collect();
    assert!(path.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn truncated_distribution_is_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for _ in 0..50 {
        let dist = match rng.random_range(0..3) {
            0 => CapabilityDist::LogNormal {
                mu: rng.random_range(-1.0..1.0),
                sigma: rng.random_range(0.2..1.5),
            },
            1 => CapabilityDist::Pareto {
                scale: rng.random_range(0.2..2.0),
                shape: rng.random_range(1.5..6.0),
            },
            _ => CapabilityDist::Uniform {
                low: 0.0,
                high: rng.random_range(0.5..3.0),
            },
        };
        let p = ModelParams {
            capability_dist: dist,
            ..ModelParams::default()
        };
        let phi_star = rng.random_range(0.05..1.5);
        match equilibrium_distribution(&p, phi_star) {
            Ok(mu) => assert!((mu.total_mass().unwrap() - 1.0).abs() < 1e-10),
            Err(superstar_core::Error::EmptyMarket { .. }) => {}
            Err(e) => panic!("{e}"),
        }
    }
}

#[test]
fn simulator_series_reproduced_from_emitted_panel() {
    let cfg = SimPanelConfig {
        n_firms_initial: 300,
        n_years: 6,
        n_sectors: 4,
        n_provinces: 3,
        ..SimPanelConfig::default()
    };
    let (panel, truth) = simulate_panel(&cfg, &ModelParams::default()).unwrap();
    let h = hspill(&panel, &truth.flags(&panel));
    assert_eq!(h.values.len(), truth.hspill.values.len());
    for (k, v) in &h.values {
        assert_eq!(v.to_bits(), truth.hspill.values[k].to_bits());
    }
    // hand sum of flagged outputs in one cell
    let (cell, idx) = panel.cells().iter().next().unwrap();
    let (mut star, mut all) = (0.0, 0.0);
    for &i in idx {
        let r = &panel.rows()[i];
        all += r.output.unwrap();
        if truth.superstars.contains(&r.firm_id) {
            star += r.output.unwrap();
        }
    }
    assert!((h.values[cell] - 100.0 * star / all).abs() < 1e-12);
}

#[test]
fn simulation_is_thread_count_invariant() {
    let cfg = SimPanelConfig {
        n_firms_initial: 200,
        n_years: 4,
        ..SimPanelConfig::default()
    };
    let p = ModelParams::default();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let (a, _) = one.install(|| simulate_panel(&cfg, &p)).unwrap();
    let (b, _) = four.install(|| simulate_panel(&cfg, &p)).unwrap();
    assert_eq!(a.rows(), b.rows());
}
