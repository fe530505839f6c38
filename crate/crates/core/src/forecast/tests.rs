use super::*;
use crate::models::simulate_discrete;
use crate::stats::norm_pdf;
use rand::Rng;
use rand_distr::StandardNormal;

fn base() -> DiscreteTimeParams {
    DiscreteTimeParams {
        mu_z: -0.5,
        sigma_z: 1.0,
        d: 0.02,
        beta: 0.3,
        tau: 0.1,
        psi0: 0.0,
        psi1: 1.0,
        sigma_bv: 0.3,
        omega: 0.0,
        rho: 0.9,
        sigma_h: 0.2,
        alpha_stable: 1.8,
    }
}

fn linear_gaussian() -> DiscreteTimeParams {
    DiscreteTimeParams {
        mu_z: 0.0,
        sigma_z: 0.0,
        d: 0.0,
        beta: 0.0,
        tau: 0.0,
        alpha_stable: 2.0,
        omega: -0.1,
        ..base()
    }
}

/// Exact filtered moments of `h` given log BV only, for the linear-Gaussian
/// reduction started like the particle filter.
fn kalman(p: &DiscreteTimeParams, y: &[f64], burn_in: usize) -> Vec<(f64, f64)> {
    let q = 2.0 * p.sigma_h * p.sigma_h;
    let rr = p.sigma_bv * p.sigma_bv;
    let mut m = p.omega / (1.0 - p.rho);
    let mut v = q * (1.0 - p.rho.powi(2 * burn_in as i32)) / (1.0 - p.rho * p.rho);
    y.iter()
        .map(|&obs| {
            m = p.omega + p.rho * m;
            v = p.rho * p.rho * v + q;
            let s = p.psi1 * p.psi1 * v + rr;
            let k = v * p.psi1 / s;
            m += k * (obs - p.psi0 - p.psi1 * m);
            v *= 1.0 - k * p.psi1;
            (m, v)
        })
        .collect()
}

#[test]
fn matches_kalman_on_linear_gaussian_reduction() {
    let p = linear_gaussian();
    let path = simulate_discrete(&p, 50, 1).unwrap();
    let opts = FilterOptions {
        particles: 2000,
        measurements: Measurements::BipowerOnly,
        ..FilterOptions::default()
    };
    let f = &bootstrap_filter(&[p], &path.r, &path.log_bv, &opts, 2).unwrap()[0];
    let exact = kalman(&p, &path.log_bv, opts.burn_in);
    for (t, (step, (m, v))) in f.trace().iter().zip(&exact).enumerate() {
        let sd = (v / step.ess).sqrt();
        assert!((step.mean_h - m).abs() < 3.0 * sd, "t={t}: {} vs {m}", step.mean_h);
        assert!((step.var_h - v).abs() < 0.25 * v, "t={t}: {} vs {v}", step.var_h);
    }
}

#[test]
fn precise_measurement_pins_volatility() {
    let p = DiscreteTimeParams {
        sigma_bv: 1e-6,
        alpha_stable: 2.0,
        ..base()
    };
    let path = simulate_discrete(&p, 20, 3).unwrap();
    let opts = FilterOptions {
        particles: 2000,
        ..FilterOptions::default()
    };
    let f = &bootstrap_filter(&[p], &path.r, &path.log_bv, &opts, 4).unwrap()[0];
    for (step, y) in f.trace().iter().zip(&path.log_bv) {
        assert!(
            (step.mean_h - (y - p.psi0) / p.psi1).abs() < 1e-2,
            "{} {} {}",
            step.mean_h,
            y,
            step.ess
        );
    }
}

#[test]
fn weights_and_ess_stay_valid_and_runs_repeat() {
    let p = base();
    let path = simulate_discrete(&p, 60, 5).unwrap();
    let opts = FilterOptions {
        particles: 300,
        ..FilterOptions::default()
    };
    let mut f = ParticleFilter::new(p, opts, 6).unwrap();
    for (&r, &b) in path.r.iter().zip(&path.log_bv) {
        let step = f.step(r, b).unwrap();
        assert!(step.ess >= 1.0 - 1e-9 && step.ess <= 300.0 + 1e-9);
        let c = f.cloud();
        assert!((c.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert!(c.ess >= 1.0 && c.ess <= 300.0 + 1e-9);
    }
    assert!(f.trace().iter().any(|s| s.resampled));
    let again = &bootstrap_filter(&[p], &path.r, &path.log_bv, &opts, 7).unwrap()[0];
    let twice = &bootstrap_filter(&[p], &path.r, &path.log_bv, &opts, 7).unwrap()[0];
    assert_eq!(again.cloud(), twice.cloud());
    let sys = FilterOptions {
        resampling: Resampling::Systematic,
        ..opts
    };
    assert!(bootstrap_filter(&[p], &path.r, &path.log_bv, &sys, 7).is_ok());
}

#[test]
fn impossible_observation_reports_step() {
    let p = base();
    let opts = FilterOptions {
        particles: 100,
        ..FilterOptions::default()
    };
    let err = bootstrap_filter(&[p], &[0.1, 1e300], &[0.0, 0.0], &opts, 1).unwrap_err();
    match err {
        Error::Numerical(m) => assert!(m.contains("observation 1"), "{m}"),
        e => panic!("unexpected {e:?}"),
    }
    let small = FilterOptions { particles: 10, ..opts };
    assert!(matches!(ParticleFilter::new(p, small, 0), Err(Error::Contract(_))));
}

#[test]
fn forecast_equals_direct_sum_over_particles() {
    // with negligible volatility noise the propagated h is ω + ρh exactly
    // enough to recompute every branch from the cloud
    let p = DiscreteTimeParams {
        sigma_h: 1e-13,
        alpha_stable: 2.0,
        tau: 0.3,
        ..base()
    };
    let path = simulate_discrete(&p, 30, 8).unwrap();
    let opts = FilterOptions {
        particles: 200,
        ..FilterOptions::default()
    };
    let draws = [p, DiscreteTimeParams { mu_z: 0.4, ..p }];
    let filters = bootstrap_filter(&draws, &path.r, &path.log_bv, &opts, 9).unwrap();
    let fd = one_step_forecast(&filters, 10).unwrap();
    assert!((fd.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let (yr, yb) = (0.3, -0.2);
    let mut direct = 0.0;
    for f in &filters {
        let q = f.params();
        let c = f.cloud();
        for i in 0..c.len() {
            let h = q.omega + q.rho * c.h[i];
            let delta = q.next_intensity(c.delta[i], c.jumped[i]);
            let bv = norm_pdf((yb - q.psi0 - q.psi1 * h) / q.sigma_bv) / q.sigma_bv;
            let no_jump = norm_pdf(yr / h.exp().sqrt()) / h.exp().sqrt();
            let sj = (h.exp() + q.sigma_z * q.sigma_z).sqrt();
            let jump = norm_pdf((yr - q.mu_z) / sj) / sj;
            direct += c.weights[i] / filters.len() as f64 * bv * ((1.0 - delta) * no_jump + delta * jump);
        }
    }
    let got = fd.log_density(yr, yb).exp();
    assert!((got - direct).abs() <= 1e-10 * direct, "{got} vs {direct}");
}

#[test]
fn forecast_without_jumps_has_one_branch_per_particle() {
    let p = DiscreteTimeParams {
        d: 0.0,
        tau: 0.0,
        ..base()
    };
    let path = simulate_discrete(&p, 10, 11).unwrap();
    let opts = FilterOptions {
        particles: 100,
        ..FilterOptions::default()
    };
    let filters = bootstrap_filter(&[p], &path.r, &path.log_bv, &opts, 12).unwrap();
    let fd = one_step_forecast(&filters, 13).unwrap();
    assert_eq!(fd.len(), 100);
    assert!(fd.mean_r.iter().all(|&m| m == 0.0));
    let g = fd.to_mixture().unwrap();
    assert!((g.log_density(&[0.1, 0.2]).unwrap() - fd.log_density(0.1, 0.2)).abs() < 1e-10);
    assert!(one_step_forecast(&[], 0).is_err());
}

#[test]
fn single_holdout_equals_one_forecast() {
    let p = base();
    let path = simulate_discrete(&p, 41, 14).unwrap();
    let opts = FilterOptions {
        particles: 150,
        ..FilterOptions::default()
    };
    let draws = [p, DiscreteTimeParams { rho: 0.8, ..p }];
    let table = rolling_evaluation(&draws, &path.r, &path.log_bv, 1, &opts, ScoreSet::default(), 15).unwrap();
    let filters = bootstrap_filter(&draws, &path.r[..40], &path.log_bv[..40], &opts, 15).unwrap();
    let fd = one_step_forecast(&filters, forecast_seed(15, 0)).unwrap();
    let fr = fd.marginal_r().unwrap();
    assert_eq!(table.steps.len(), 1);
    assert_eq!(table.mean_r.ls, Some(log_score(&fr, path.r[40])));
    assert_eq!(table.mean_r.crps, Some(crps(&fr, path.r[40])));
    assert!(rolling_evaluation(&draws, &path.r, &path.log_bv, 0, &opts, ScoreSet::default(), 1).is_err());
    let ls_only = rolling_evaluation(&draws, &path.r, &path.log_bv, 3, &opts, ScoreSet::log_only(), 1).unwrap();
    assert!(ls_only.mean_log_bv.ls.is_some() && ls_only.mean_log_bv.qs.is_none());
}

#[test]
fn standard_normal_score_constants() {
    let f = ScalarMixture::normal(0.0, 1.0).unwrap();
    assert!((log_score(&f, 0.0) + 0.918939).abs() < 1e-6);
    // 2φ(0) - 1/(2√π)
    assert!((quadratic_score(&f, 0.0) - 0.5157898).abs() < 1e-7);
    assert!((quadratic_score(&f, 0.0) - 0.515763).abs() < 1e-4);
    assert!((crps(&f, 0.0) + 0.23370).abs() < 1e-5);
}

#[test]
fn point_mass_crps_is_absolute_error() {
    let f = ScalarMixture::normal(0.4, 1e-16).unwrap();
    assert!((crps(&f, 1.7) + 1.3).abs() < 1e-7);
}

#[test]
fn scores_transform_affinely() {
    let (mu, sigma) = (0.7, 2.5);
    let f = ScalarMixture::normal(mu, sigma * sigma).unwrap();
    let z = ScalarMixture::normal(0.0, 1.0).unwrap();
    for y in [-3.0, 0.2, 4.1] {
        let u = (y - mu) / sigma;
        assert!((log_score(&f, y) - (log_score(&z, u) - sigma.ln())).abs() < 1e-12);
        assert!((crps(&f, y) - sigma * crps(&z, u)).abs() < 1e-12);
    }
}

pub(crate) fn random_scalar_mixture(rng: &mut impl Rng, k: usize) -> ScalarMixture {
    let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.1).collect();
    let total: f64 = raw.iter().sum();
    ScalarMixture::new(
        raw.iter().map(|w| w / total).collect(),
        (0..k).map(|_| rng.random_range(-2.0..2.0)).collect(),
        (0..k).map(|_| rng.random_range(0.1..2.0)).collect(),
    )
    .unwrap()
}

fn draw(f: &ScalarMixture, rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut k = f.len() - 1;
    for (j, w) in f.weights.iter().enumerate() {
        acc += w;
        if u < acc {
            k = j;
            break;
        }
    }
    f.means[k] + f.vars[k].sqrt() * rng.sample::<f64, _>(StandardNormal)
}

#[test]
fn closed_forms_match_monte_carlo() {
    let mut rng = crate::rng::seeded(16);
    let n = 100_000;
    for _ in 0..5 {
        let f = random_scalar_mixture(&mut rng, 3);
        let y: f64 = rng.random_range(-2.0..2.0);
        let xs: Vec<f64> = (0..n).map(|_| draw(&f, &mut rng)).collect();
        let ys: Vec<f64> = (0..n).map(|_| draw(&f, &mut rng)).collect();
        let fy = f.log_density(y).exp();
        let qs_terms: Vec<f64> = xs.iter().map(|&x| 2.0 * fy - f.log_density(x).exp()).collect();
        let crps_terms: Vec<f64> = xs
            .iter()
            .zip(&ys)
            .map(|(&x, &x2)| -((x - y).abs() - 0.5 * (x - x2).abs()))
            .collect();
        for (terms, exact) in [(qs_terms, quadratic_score(&f, y)), (crps_terms, crps(&f, y))] {
            let m = crate::stats::moments(&terms);
            let se = (m.var / n as f64).sqrt();
            assert!((m.mean - exact).abs() < 3.0 * se, "{} vs {exact}", m.mean);
        }
    }
}
