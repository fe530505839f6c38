//! Every posterior and diagnostic reuses one fitted joint; none refits.

use modcut::fit::{build_transform, em_fit_calls, select_model, FitConfig};
use modcut::models::{simulate_table, ConjugateModel, Simulator};
use modcut::modular::{
    choose_gamma, conflict_check, cut_posterior, default_grid, full_posterior, smi_posterior, ModularProblem,
    DEFAULT_ALPHA,
};

#[test]
fn inference_after_one_fit_never_calls_em() {
    let model = ConjugateModel::default();
    let (table, _) = simulate_table(&model, 5_000, 3).unwrap();
    let transform = build_transform(&table, &model.analytic_cdfs(), &Default::default()).unwrap();
    let (z, _) = transform.to_normal(&table).unwrap();
    let cfg = FitConfig {
        j_max: 2,
        n_restarts: 1,
        ..FitConfig::default()
    };
    let joint = select_model(&z, &cfg).unwrap().best.mixture;
    let prob = ModularProblem::from_blocks(joint.labels(), &model.blocks()).unwrap();
    let s = [0.2, -0.4];

    let before = em_fit_calls();
    full_posterior(&joint, &prob, &s).unwrap();
    cut_posterior(&joint, &prob, &s).unwrap();
    for g in [0.0, 0.3, 1.0] {
        smi_posterior(&joint, &prob, &s, g).unwrap();
    }
    conflict_check(&joint, &prob, &s, 100, 1).unwrap();
    choose_gamma(&joint, &prob, &s, DEFAULT_ALPHA, &default_grid(), 100, 1).unwrap();
    assert_eq!(em_fit_calls(), before);
}
