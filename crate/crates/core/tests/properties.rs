use proptest::prelude::*;

use fairmask::baselines;
use fairmask::data::{self, SyntheticSpec};
use fairmask::fairness::{self, mask_spec_for};
use fairmask::model::{sigmoid, Activation, DenseLayer, Family, MaskSpec, MlpParams, Parameters};
use fairmask::models::{hinge_objective, logistic_objective, predict_base_scores, predict_decisions};
use fairmask::{Dataset, FamilySpec, ScoreModel, TrainConfig};

fn finite() -> impl Strategy<Value = f64> {
    -1e6..1e6f64
}

fn any_model() -> impl Strategy<Value = ScoreModel> {
    let linear = (prop::collection::vec(finite(), 1..6), finite(), prop::bool::ANY).prop_map(|(w, b, svm)| {
        ScoreModel::linear(if svm { Family::LinearSvm } else { Family::Logistic }, w, b)
    });
    let constant = (0.0..=1.0f64, 1..6usize).prop_map(|(v, w)| ScoreModel::constant(v, w));
    let mlp = (1..4usize, 1..4usize, prop::bool::ANY, any::<u64>()).prop_map(|(inp, hid, relu, seed)| {
        let arch = fairmask::MlpArchitecture {
            hidden_layers: vec![hid],
            activation: if relu { Activation::Relu } else { Activation::Sigmoid },
        };
        let shape = fairmask::models::MlpShape::new(inp, &arch);
        ScoreModel {
            family: Family::Mlp,
            parameters: Parameters::Mlp(shape.to_params(&shape.init(seed))),
            tau: 0.0,
            mask: None,
        }
    });
    (prop_oneof![linear, constant, mlp], finite(), prop::bool::ANY).prop_map(|(m, tau, masked)| {
        let mask = masked.then(|| MaskSpec::new(vec![0], vec![1.0]).unwrap());
        m.with_tau(tau / 1e6).with_mask(mask)
    })
}

proptest! {
    #[test]
    fn score_model_text_round_trip(m in any_model()) {
        let text = m.to_text();
        prop_assert_eq!(ScoreModel::from_text(&text).unwrap(), m);
    }

    #[test]
    fn logistic_objective_is_convex(
        a in prop::collection::vec(-5.0..5.0f64, 5),
        b in prop::collection::vec(-5.0..5.0f64, 5),
        lambda in 0.0..=1.0f64,
        seed in 0..20u64,
    ) {
        let d = data::synthesize(&SyntheticSpec { n: 60, seed, ..Default::default() }).unwrap();
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect();
        for f in [logistic_objective, hinge_objective] {
            let fa = f(&d, 0.1, &a[..4], a[4]);
            let fb = f(&d, 0.1, &b[..4], b[4]);
            let fm = f(&d, 0.1, &mix[..4], mix[4]);
            prop_assert!(fm <= lambda * fa + (1.0 - lambda) * fb + 1e-9);
        }
    }

    /// Masking a linear model shifts every logit in a group by the same amount.
    #[test]
    fn mask_equals_logit_shift(seed in 0..50u64) {
        let d = data::synthesize(&SyntheticSpec { n: 80, seed, ..Default::default() }).unwrap();
        let fit = FamilySpec::Logistic.fit(&d, &TrainConfig { epochs: 200, ..Default::default() }).unwrap();
        let spec = mask_spec_for(&d, vec![0.0]).unwrap();
        let masked = fairness::masked_scores(&fit.model, &d, &spec).unwrap();
        let raw = predict_base_scores(&fit.model, &d).unwrap();
        let (w, _) = fit.model.linear_parts().unwrap();
        let logit = |p: f64| (p / (1.0 - p)).ln();
        for i in 0..d.len() {
            let expected = logit(raw[i]) - w[0] * d.row(i)[0];
            prop_assert!((logit(masked[i]) - expected).abs() < 1e-9 * (1.0 + expected.abs()));
        }
    }
}

#[test]
fn xor_with_hand_built_network() {
    // h1 = relu(x + y - 1), h2 = relu(x + y); out = 20*(h2 - 2*h1) - 10
    let params = MlpParams {
        activation: Activation::Relu,
        layers: vec![
            DenseLayer { inputs: 2, outputs: 2, weights: vec![1.0, 1.0, 1.0, 1.0], biases: vec![-1.0, 0.0] },
            DenseLayer { inputs: 2, outputs: 1, weights: vec![-40.0, 20.0], biases: vec![-10.0] },
        ],
    };
    let model = ScoreModel { family: Family::Mlp, parameters: Parameters::Mlp(params), tau: 0.0, mask: None };
    for (x, y, want) in [(0.0, 0.0, 0), (0.0, 1.0, 1), (1.0, 0.0, 1), (1.0, 1.0, 0)] {
        assert_eq!(model.decide(&[x, y]).unwrap(), want, "({x}, {y})");
    }
    let s = model.base_score(&[1.0, 0.0]).unwrap();
    assert!((s - sigmoid(10.0)).abs() < 1e-15);
}

#[test]
fn svm_beats_every_point_on_a_coarse_grid() {
    let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![0.0, (i as f64 - 20.0) / 5.0]).collect();
    let labels: Vec<u8> = (0..40).map(|i| u8::from(i >= 18 && i != 25)).collect();
    let d = Dataset::new(rows, labels, vec![0]).unwrap();
    let cfg = TrainConfig { l2_penalty: 0.05, epochs: 20_000, ..Default::default() };
    let fit = FamilySpec::LinearSvm.fit(&d, &cfg).unwrap();
    let (w, b) = fit.model.linear_parts().unwrap();
    let trained = hinge_objective(&d, cfg.l2_penalty, w, b);
    let mut best = f64::INFINITY;
    for i in -100..=100 {
        for k in -100..=100 {
            let (wx, bb) = (i as f64 * 0.05, k as f64 * 0.05);
            best = best.min(hinge_objective(&d, cfg.l2_penalty, &[0.0, wx], bb));
        }
    }
    assert!(trained <= best + 1e-3, "trained {trained} vs grid {best}");
    assert!(w[1] > 0.0);
}

#[test]
fn toy_sensitive_weight_is_negative_for_both_linear_families() {
    let d = data::toy_table2();
    for family in [FamilySpec::Logistic, FamilySpec::LinearSvm] {
        let fit = family.fit(&d, &TrainConfig::default()).unwrap();
        let (w, _) = fit.model.linear_parts().unwrap();
        assert!(w[0] < 0.0, "{:?}: {}", family.family(), w[0]);
    }
}

#[test]
fn unconstrained_fits_at_least_as_well_as_omit_sensitive() {
    for seed in 0..5 {
        let d = data::synthesize(&SyntheticSpec { n: 400, seed, ..Default::default() }).unwrap();
        let cfg = TrainConfig { epochs: 5000, ..Default::default() };
        let full = baselines::unconstrained(&d, &FamilySpec::Logistic, &cfg).unwrap();
        let omit = baselines::omit_sensitive(&d, &FamilySpec::Logistic, &cfg).unwrap();
        let (w, b) = omit.model.linear_parts().unwrap();
        let omit_loss = logistic_objective(&d, cfg.l2_penalty, w, b);
        assert!(full.final_loss() <= omit_loss + 1e-6, "seed {seed}: {} > {omit_loss}", full.final_loss());
    }
}

#[test]
fn uncorrelated_proxy_barely_changes_decisions() {
    // with no group difference in base rates and no proxying, masking is nearly a no-op
    let spec = SyntheticSpec {
        n: 3000,
        rho: 0.0,
        base_rate_protected: 0.4,
        base_rate_unprotected: 0.4,
        seed: 21,
        ..Default::default()
    };
    let d = data::synthesize(&spec).unwrap();
    let s = fairmask::split_dataset(&d, [0.6, 0.2, 0.2], 21).unwrap();
    let spec = mask_spec_for(&s.train, vec![0.0]).unwrap();
    let ttm = fairness::train_then_mask(&s.train, &s.validation, &spec, &FamilySpec::Logistic, &TrainConfig::default(), None)
        .unwrap();
    let a = predict_decisions(&ttm.model, &s.test).unwrap();
    // same offset on both sides isolates the effect of masking
    let reference = ttm.reference.model.clone().with_tau(ttm.model.tau);
    let b = predict_decisions(&reference, &s.test).unwrap();
    let agree = a.iter().zip(&b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64;
    assert!(agree >= 0.95, "agreement {agree}");
}

#[test]
fn separable_data_is_classified_and_ranked() {
    let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![(i % 2) as f64, i as f64 / 10.0 - 1.5]).collect();
    let labels: Vec<u8> = (0..30).map(|i| u8::from(i >= 15)).collect();
    let d = Dataset::new(rows, labels.clone(), vec![0]).unwrap();
    let spec = mask_spec_for(&d, vec![0.0]).unwrap();
    for family in [FamilySpec::Logistic, FamilySpec::LinearSvm] {
        let ttm = fairness::train_then_mask(&d, &d, &spec, &family, &TrainConfig { epochs: 5000, ..Default::default() }, None)
            .unwrap();
        assert_eq!(predict_decisions(&ttm.model, &d).unwrap(), labels, "{:?}", family.family());
        let scores = predict_base_scores(&ttm.model, &d).unwrap();
        for parity in 0..2 {
            let g: Vec<f64> = scores.iter().skip(parity).step_by(2).copied().collect();
            assert!(g.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
