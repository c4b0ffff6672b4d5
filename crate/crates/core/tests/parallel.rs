use avuc_core::bayes::{BnnModel, Checkpoint, Posterior};
use avuc_core::metrics::{evaluate, EvalOptions};
use avuc_core::par::Exec;
use avuc_core::shiftlab::{make_two_moons, Split};
use avuc_core::trainer::{fit, Method, TrainConfig};
use avuc_core::uncertainty::{mc_logits, mc_predict_with};

#[test]
fn monte_carlo_logits_identical_across_modes() {
    let data = make_two_moons(300, 0.2, 3).unwrap();
    let model = BnnModel::new(2, &[16, 16], 2, Posterior::MeanField, 3).unwrap();
    let a = mc_logits(&model, &data.features, 24, 77, Exec::Auto).unwrap();
    let b = mc_logits(&model, &data.features, 24, 77, Exec::Sequential).unwrap();
    assert_eq!(a, b);
}

#[test]
fn evaluation_report_identical_across_modes() {
    let data = make_two_moons(400, 0.2, 4).unwrap();
    let mut cfg = TrainConfig::new(Method::SviAvuc, 6, 32, 0.01);
    cfg.seed = 4;
    cfg.hidden = vec![16];
    let model = fit(&data, &cfg).unwrap().model;
    let test = data.subset(Split::Test);
    let labels = test.class_labels().unwrap();
    let opts = EvalOptions::default();
    let ra = evaluate(&mc_predict_with(&model, &test.features, 16, 9, 1.5, Exec::Auto).unwrap(), &labels, None, &opts).unwrap();
    let rb = evaluate(&mc_predict_with(&model, &test.features, 16, 9, 1.5, Exec::Sequential).unwrap(), &labels, None, &opts).unwrap();
    assert_eq!(serde_json::to_string(&ra).unwrap(), serde_json::to_string(&rb).unwrap());
}

#[test]
fn training_is_reproducible_to_the_byte() {
    let data = make_two_moons(300, 0.2, 5).unwrap();
    for method in [Method::Svi, Method::SviAuAvuc, Method::Vanilla] {
        let mut cfg = TrainConfig::new(method, 5, 32, 0.01);
        cfg.seed = 5;
        cfg.hidden = vec![8];
        cfg.mc_train_samples = 2;
        let run = || {
            let out = fit(&data, &cfg).unwrap();
            Checkpoint::from_model(&out.model, out.u_th, 1.0).to_json().unwrap()
        };
        assert_eq!(run(), run(), "{method}");
    }
}
