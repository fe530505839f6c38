use super::*;
use crate::stats::{log_sum_exp, norm_logpdf};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

fn labels(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("v{i}")).collect()
}

fn scalar(parts: &[(f64, f64, f64)]) -> GaussianMixture {
    GaussianMixture::new(
        labels(1),
        parts
            .iter()
            .map(|&(w, m, v)| (w, DVector::from_element(1, m), DMatrix::from_element(1, 1, v)))
            .collect(),
    )
    .unwrap()
}

pub(crate) fn random_mixture(rng: &mut impl Rng, d: usize, j: usize) -> GaussianMixture {
    let raw: Vec<f64> = (0..j).map(|_| rng.random::<f64>() + 0.2).collect();
    let total: f64 = raw.iter().sum();
    let parts = raw
        .iter()
        .map(|w| {
            let mean = DVector::from_fn(d, |_, _| 2.0 * rng.sample::<f64, _>(StandardNormal));
            let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.7);
            let cov = &a * a.transpose() + DMatrix::identity(d, d) * 0.3;
            (w / total, mean, cov)
        })
        .collect();
    GaussianMixture::new(labels(d), parts).unwrap()
}

#[test]
fn standard_normal_density_at_origin() {
    let g = GaussianMixture::gaussian(labels(2), DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
    let v = g.log_density(&[0.0, 0.0]).unwrap();
    assert!((v - (1.0 / (2.0 * std::f64::consts::PI)).ln()).abs() < 1e-14);
    assert!((v + 1.837877).abs() < 1e-6);
}

#[test]
fn duplicate_components_collapse() {
    let one = scalar(&[(1.0, 0.0, 1.0)]);
    let two = scalar(&[(0.5, 0.0, 1.0), (0.5, 0.0, 1.0)]);
    for x in [-3.0, -0.2, 0.0, 1.7] {
        let a = one.log_density(&[x]).unwrap();
        let b = two.log_density(&[x]).unwrap();
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn two_component_hand_evaluation() {
    let g = scalar(&[(0.3, -1.0, 1.0), (0.7, 1.0, 1.0)]);
    // hand: phi(1) = exp(-1/2)/sqrt(2 pi) = 0.2419707245
    let phi1 = (-0.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let expected = (0.3 * phi1 + 0.7 * phi1).ln();
    let v = g.log_density(&[0.0]).unwrap();
    assert!((v - expected).abs() < 1e-14);
    assert!((v + 1.41894).abs() < 1e-5);
}

#[test]
fn log_density_rejects_wrong_length() {
    let g = scalar(&[(1.0, 0.0, 1.0)]);
    assert!(matches!(g.log_density(&[0.0, 1.0]), Err(Error::Contract(_))));
}

#[test]
fn constructor_validates_invariants() {
    let bad_weights = GaussianMixture::new(labels(1), vec![(0.6, DVector::zeros(1), DMatrix::identity(1, 1))]);
    assert!(matches!(bad_weights, Err(Error::Contract(_))));
    let dup = GaussianMixture::new(
        vec!["a".into(), "a".into()],
        vec![(1.0, DVector::zeros(2), DMatrix::identity(2, 2))],
    );
    assert!(matches!(dup, Err(Error::Contract(_))));
    let asym = GaussianMixture::new(
        labels(2),
        vec![(
            1.0,
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]),
        )],
    );
    assert!(matches!(asym, Err(Error::Contract(_))));
}

#[test]
fn jitter_rescues_rank_deficient_covariance() {
    // rank one: [[1,1],[1,1]]
    let cov = DMatrix::from_element(2, 2, 1.0);
    let g = GaussianMixture::gaussian(labels(2), DVector::zeros(2), cov).unwrap();
    let c = &g.components()[0];
    assert!(c.cov()[(0, 0)] > 1.0 && c.cov()[(0, 0)] < 1.0 + 1e-5);
    assert!(g.log_density(&[0.0, 0.0]).unwrap().is_finite());
}

#[test]
fn negative_definite_covariance_fails_numerically() {
    let cov = DMatrix::from_diagonal_element(2, 2, -1.0);
    let err = GaussianMixture::gaussian(labels(2), DVector::zeros(2), cov).unwrap_err();
    match err {
        Error::Numerical(msg) => assert!(msg.contains("component 0"), "{msg}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn sample_mean_of_standard_normal() {
    let g = GaussianMixture::gaussian(labels(3), DVector::zeros(3), DMatrix::identity(3, 3)).unwrap();
    let xs = g.sample(100_000, 11).unwrap();
    for j in 0..3 {
        let m = xs.column(j).mean();
        // 4 sigma / sqrt(n) = 0.0126
        assert!(m.abs() < 0.02, "coordinate {j} mean {m}");
    }
}

#[test]
fn sample_contract_and_determinism() {
    let g = scalar(&[(0.4, -2.0, 0.5), (0.6, 1.0, 2.0)]);
    assert!(matches!(g.sample(0, 1), Err(Error::Contract(_))));
    assert_eq!(g.sample(50, 9).unwrap(), g.sample(50, 9).unwrap());
    assert_ne!(g.sample(50, 9).unwrap(), g.sample(50, 10).unwrap());
}

#[test]
fn sample_moments_match_mixture_moments() {
    let mut rng = crate::rng::seeded(5);
    let g = random_mixture(&mut rng, 3, 3);
    let n = 100_000;
    let xs = g.sample(n, 77).unwrap();
    let mean = g.mean();
    let cov = g.covariance();
    for j in 0..3 {
        let col = xs.column(j);
        let m = col.mean();
        let se = (cov[(j, j)] / n as f64).sqrt();
        assert!((m - mean[j]).abs() < 5.0 * se, "mean {j}: {m} vs {}", mean[j]);
        let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
        // var of the sample variance ~ (m4 - s^4)/n; bound m4 by the sample
        let m4 = col.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n as f64;
        let se_v = ((m4 - v * v) / n as f64).sqrt();
        assert!((v - cov[(j, j)]).abs() < 5.0 * se_v, "var {j}: {v} vs {}", cov[(j, j)]);
    }
}

#[test]
fn marginalize_identity_and_block() {
    let mut rng = crate::rng::seeded(1);
    let g = random_mixture(&mut rng, 3, 2);
    assert_eq!(g.marginalize(&[0, 1, 2]).unwrap(), g);

    let b = GaussianMixture::gaussian(
        labels(2),
        DVector::from_vec(vec![1.0, 2.0]),
        DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 9.0]),
    )
    .unwrap();
    let m = b.marginalize(&[1]).unwrap();
    assert_eq!(m.labels(), &["v1".to_string()]);
    assert_eq!(m.components()[0].mean()[0], 2.0);
    assert_eq!(m.components()[0].cov()[(0, 0)], 9.0);
    assert!(matches!(g.marginalize(&[0, 0]), Err(Error::Contract(_))));
    assert!(matches!(g.marginalize(&[5]), Err(Error::Contract(_))));
    assert!(matches!(g.marginalize(&[]), Err(Error::Contract(_))));
}

#[test]
fn marginal_matches_quadrature_over_dropped_coordinate() {
    let mut rng = crate::rng::seeded(3);
    for _ in 0..5 {
        let g = random_mixture(&mut rng, 2, 3);
        let m = g.marginalize(&[0]).unwrap();
        // trapezoid in v1 over a wide grid
        let (lo, hi, n) = (-40.0, 40.0, 16_001);
        let h = (hi - lo) / (n - 1) as f64;
        for x in [-2.0, 0.0, 0.7, 3.1] {
            let mut acc = 0.0;
            for k in 0..n {
                let y = lo + k as f64 * h;
                let f = g.density(&[x, y]).unwrap();
                acc += if k == 0 || k == n - 1 { 0.5 * f } else { f };
            }
            let quad = acc * h;
            let exact = m.density(&[x]).unwrap();
            assert!((quad - exact).abs() < 1e-4, "x={x}: {quad} vs {exact}");
        }
    }
}

#[test]
fn condition_independent_coordinates() {
    let g = GaussianMixture::gaussian(labels(2), DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
    let c = g.condition(&IndexPartition::new(vec![0], vec![1]), &[0.0]).unwrap();
    assert_eq!(c.components()[0].mean()[0], 0.0);
    assert_eq!(c.components()[0].cov()[(0, 0)], 1.0);
}

#[test]
fn condition_bivariate_textbook() {
    let g = GaussianMixture::gaussian(
        labels(2),
        DVector::zeros(2),
        DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]),
    )
    .unwrap();
    let c = g.condition(&IndexPartition::new(vec![0], vec![1]), &[1.0]).unwrap();
    assert!((c.components()[0].mean()[0] - 0.5).abs() < 1e-15);
    assert!((c.components()[0].cov()[(0, 0)] - 0.75).abs() < 1e-15);
}

#[test]
fn condition_uses_target_block_mean() {
    // X has mean 5 and is independent of W; the leading term must be mu_x
    let g = GaussianMixture::gaussian(labels(2), DVector::from_vec(vec![5.0, -3.0]), DMatrix::identity(2, 2)).unwrap();
    let c = g.condition(&IndexPartition::new(vec![0], vec![1]), &[-3.0]).unwrap();
    assert_eq!(c.components()[0].mean()[0], 5.0);
}

#[test]
fn condition_errors() {
    let g = GaussianMixture::gaussian(labels(2), DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
    let p = IndexPartition::new(vec![0], vec![1]);
    assert!(matches!(g.condition(&p, &[0.0, 1.0]), Err(Error::Contract(_))));
    let overlap = IndexPartition::new(vec![0], vec![0]);
    assert!(matches!(g.condition(&overlap, &[0.0]), Err(Error::Contract(_))));
}

fn chain_rule_check(g: &GaussianMixture, rng: &mut impl Rng, points: usize) -> f64 {
    let d = g.dim();
    let mut idx: Vec<usize> = (0..d).collect();
    idx.shuffle(rng);
    let split = rng.random_range(1..d);
    let part = IndexPartition::new(idx[..split].to_vec(), idx[split..].to_vec());
    let marg_w = g.marginalize(&part.w_idx).unwrap();
    let cond = g.conditioner(&part).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let u: Vec<f64> = g
            .sample_one(rng)
            .iter()
            .map(|v| v + rng.random::<f64>() - 0.5)
            .collect();
        let x: Vec<f64> = part.x_idx.iter().map(|&i| u[i]).collect();
        let w: Vec<f64> = part.w_idx.iter().map(|&i| u[i]).collect();
        let joint = g.log_density(&u).unwrap();
        let lhs = marg_w.log_density(&w).unwrap() + cond.condition(&w).unwrap().log_density(&x).unwrap();
        // relative density error ~ |Δ log|
        worst = worst.max(((lhs - joint).exp() - 1.0).abs());
    }
    worst
}

#[test]
fn chain_rule_random_mixtures() {
    let mut rng = crate::rng::seeded(99);
    for _ in 0..10 {
        let g = random_mixture(&mut rng, 4, 3);
        let err = chain_rule_check(&g, &mut rng, 100);
        assert!(err <= 1e-10, "relative error {err}");
    }
}

#[test]
fn conditional_weights_survive_extreme_values() {
    // plain densities of W underflow here; log-space weights must not
    let mut rng = crate::rng::seeded(4);
    let g = random_mixture(&mut rng, 12, 4);
    let p = IndexPartition::new(vec![0, 1], (2..12).collect());
    let w = vec![30.0; 10];
    let c = g.condition(&p, &w).unwrap();
    let total: f64 = c.weights().iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn pool_endpoints_and_idempotence() {
    let a = scalar(&[(0.3, -1.0, 1.0), (0.7, 2.0, 0.5)]);
    let b = scalar(&[(1.0, 0.5, 2.0)]);
    assert_eq!(GaussianMixture::pool(&a, &b, 1.0).unwrap(), a);
    assert_eq!(GaussianMixture::pool(&a, &b, 0.0).unwrap(), b);
    let n = scalar(&[(1.0, 0.0, 1.0)]);
    let half = GaussianMixture::pool(&n, &n, 0.5).unwrap();
    for x in [-2.0, 0.0, 1.3] {
        let d0 = n.density(&[x]).unwrap();
        let d1 = half.density(&[x]).unwrap();
        assert!((d0 - d1).abs() <= 1e-15 * d0);
    }
    assert!(matches!(GaussianMixture::pool(&a, &b, 1.5), Err(Error::Contract(_))));
    let other = b.relabel(vec!["z".into()]).unwrap();
    assert!(matches!(
        GaussianMixture::pool(&a, &other, 0.5),
        Err(Error::Contract(_))
    ));
}

#[test]
fn kl_gaussian_fixtures() {
    let z = DVector::zeros(1);
    let one = DVector::from_element(1, 1.0);
    let i = DMatrix::identity(1, 1);
    assert_eq!(kl_gaussian(&z, &i, &z, &i).unwrap(), 0.0);
    assert!((kl_gaussian(&one, &i, &z, &i).unwrap() - 0.5).abs() < 1e-15);
    let two = DMatrix::from_element(1, 1, 2.0);
    let expected = 0.5 * (2.0 - 1.0 - 2f64.ln());
    let v = kl_gaussian(&z, &two, &z, &i).unwrap();
    assert!((v - expected).abs() < 1e-15);
    assert!((v - 0.153426).abs() < 1e-6);
    let bad = DMatrix::from_element(1, 1, -1.0);
    assert!(matches!(kl_gaussian(&z, &bad, &z, &i), Err(Error::Numerical(_))));
    assert!(matches!(
        kl_gaussian(&z, &i, &DVector::zeros(2), &i),
        Err(Error::Contract(_))
    ));
}

#[test]
fn kl_mixture_identities() {
    let mut rng = crate::rng::seeded(8);
    let f = random_mixture(&mut rng, 3, 4);
    assert_eq!(kl_mixture(&f, &f).unwrap(), 0.0);
    let a = scalar(&[(1.0, 1.0, 1.0)]);
    let b = scalar(&[(1.0, 0.0, 1.0)]);
    assert!((kl_mixture(&a, &b).unwrap() - 0.5).abs() < 1e-15);
    let g = random_mixture(&mut rng, 2, 2);
    assert!(matches!(kl_mixture(&f, &g), Err(Error::Contract(_))));
}

#[test]
fn kl_mixture_matches_frozen_variational_value() {
    // independent evaluation of the variational formula in double precision
    let f = scalar(&[(0.4, -1.0, 0.5), (0.6, 1.5, 1.2)]);
    let g = scalar(&[(0.5, 0.0, 1.0), (0.5, 2.0, 0.7)]);
    assert!((kl_mixture(&f, &g).unwrap() - 0.24419327554752268).abs() < 1e-12);
}

#[test]
fn kl_mixture_close_to_monte_carlo_when_separated() {
    let mut rng = crate::rng::seeded(21);
    for rep in 0..5 {
        let mut draw = |w: f64, c: f64| (w, c + rng.random_range(-1.0..1.0), rng.random_range(0.3..2.0));
        let f = scalar(&[draw(0.4, -10.0), draw(0.6, 10.0)]);
        let g = scalar(&[draw(0.5, -10.0), draw(0.5, 10.0)]);
        let n = 200_000;
        let xs = f.sample(n, 1000 + rep).unwrap();
        let mc = xs
            .column(0)
            .iter()
            .map(|&x| f.log_density(&[x]).unwrap() - g.log_density(&[x]).unwrap())
            .sum::<f64>()
            / n as f64;
        let approx = kl_mixture(&f, &g).unwrap();
        assert!((approx - mc).abs() < 0.05, "rep {rep}: {approx} vs {mc}");
    }
}

#[test]
fn json_round_trip_and_version_check() {
    let mut rng = crate::rng::seeded(2);
    let g = random_mixture(&mut rng, 3, 2);
    let back = GaussianMixture::from_json(&g.to_json().unwrap()).unwrap();
    for (a, b) in g.components().iter().zip(back.components()) {
        assert_eq!(a.mean(), b.mean());
        assert_eq!(a.cov(), b.cov());
        assert_eq!(a.weight(), b.weight());
    }
    let mut doc = serde_json::to_value(g.to_doc()).unwrap();
    doc["version"] = 2.into();
    match GaussianMixture::from_json(&doc.to_string()) {
        Err(Error::SchemaVersion {
            found: 2, expected: 1, ..
        }) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn scalar_cdf_and_quantile() {
    let g = scalar(&[(0.5, -1.0, 1.0), (0.5, 3.0, 0.25)]);
    for p in [0.001, 0.2, 0.5, 0.9, 0.999] {
        let q = g.quantile_1d(p).unwrap();
        assert!((g.cdf_1d(q).unwrap() - p).abs() < 1e-12);
    }
}

fn arb_mixture() -> impl Strategy<Value = GaussianMixture> {
    (2usize..5, 1usize..4, any::<u64>()).prop_map(|(d, j, seed)| {
        let mut rng = crate::rng::seeded(seed);
        random_mixture(&mut rng, d, j)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pool_is_pointwise_convex_combination(a in arb_mixture(), gamma in 0.0f64..=1.0, seed in any::<u64>()) {
        let mut rng = crate::rng::seeded(seed);
        let b = random_mixture(&mut rng, a.dim(), 2);
        let p = GaussianMixture::pool(&a, &b, gamma).unwrap();
        let total: f64 = p.weights().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for _ in 0..5 {
            let u: Vec<f64> = a.sample_one(&mut rng).iter().copied().collect();
            let lhs = p.density(&u).unwrap();
            let rhs = gamma * a.density(&u).unwrap() + (1.0 - gamma) * b.density(&u).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300) + 1e-300);
        }
    }

    #[test]
    fn marginalize_commutes_with_condition(g in arb_mixture(), seed in any::<u64>()) {
        // condition X|W then keep a subset of X == marginalize to (subset ∪ W) then condition
        let d = g.dim();
        prop_assume!(d >= 3);
        let mut rng = crate::rng::seeded(seed);
        let w_idx = vec![d - 1];
        let x_idx: Vec<usize> = (0..d - 1).collect();
        let keep = vec![0usize];
        let w = vec![rng.random_range(-2.0..2.0)];
        let route_a = g
            .condition(&IndexPartition::new(x_idx, w_idx.clone()), &w)
            .unwrap()
            .marginalize(&keep)
            .unwrap();
        let sub = g.marginalize(&[0, d - 1]).unwrap();
        let route_b = sub.condition(&IndexPartition::new(vec![0], vec![1]), &w).unwrap();
        for _ in 0..5 {
            let x = [rng.random_range(-4.0..4.0)];
            let a = route_a.log_density(&x).unwrap();
            let b = route_b.log_density(&x).unwrap();
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn kl_gaussian_nonnegative(seed in any::<u64>()) {
        let mut rng = crate::rng::seeded(seed);
        let f = random_mixture(&mut rng, 3, 1);
        let g = random_mixture(&mut rng, 3, 1);
        let (a, b) = (&f.components()[0], &g.components()[0]);
        let v = kl_gaussian(a.mean(), a.cov(), b.mean(), b.cov()).unwrap();
        prop_assert!(v >= -1e-12);
        prop_assert_eq!(kl_mixture(&f, &g).unwrap(), v.max(0.0));
    }
}

#[test]
fn scalar_log_density_agrees_with_direct_formula() {
    let g = scalar(&[(0.25, 0.3, 0.4), (0.75, -1.0, 2.5)]);
    for x in [-3.0, 0.0, 2.0] {
        let direct = log_sum_exp(&[
            0.25f64.ln() + norm_logpdf(x, 0.3, 0.4),
            0.75f64.ln() + norm_logpdf(x, -1.0, 2.5),
        ]);
        assert!((g.log_density(&[x]).unwrap() - direct).abs() < 1e-14);
    }
}

#[test]
fn pool_curve_matches_direct_kl_bitwise() {
    let mut rng = crate::rng::seeded(31);
    for _ in 0..5 {
        let a = random_mixture(&mut rng, 2, 3);
        let b = random_mixture(&mut rng, 2, 2).relabel(a.labels().to_vec()).unwrap();
        let gammas = [0.0, 1e-15, 0.01, 0.37, 0.5, 1.0 - 1e-15, 1.0];
        let curve = kl_pool_curve(&a, &b, &gammas).unwrap();
        for (g, c) in gammas.iter().zip(&curve) {
            let direct = kl_mixture(&GaussianMixture::pool(&a, &b, *g).unwrap(), &b).unwrap();
            assert_eq!(c.to_bits(), direct.to_bits(), "gamma {g}");
        }
        assert_eq!(curve[0], 0.0);
        assert_eq!(curve[6].to_bits(), kl_mixture(&a, &b).unwrap().to_bits());
    }
}
