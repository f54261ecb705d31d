//! End-to-end training behavior on mid-sized instances.

use angsync::eval::mse;
use angsync::gnn::{forward_loss, parameter_init, train, LossKind, PgdConfig, TrainConfig};
use angsync::spectral::spectral_rn_sync;
use angsync::synth::{gen_offset_graph, GroundTruthOption, MeasurementModel, SyntheticConfig};

#[test]
fn noiseless_training_preserves_exact_features() {
    // with exact input features the trained model must not destroy them
    let (g, gt) = gen_offset_graph(&SyntheticConfig {
        model: MeasurementModel::ErdosRenyi,
        n: 100,
        p: 0.3,
        k: 1,
        eta: 0.0,
        option: GroundTruthOption::Gamma,
        seed: 0,
    })
    .unwrap();
    let tcfg = TrainConfig {
        loss: LossKind::Upset,
        seed: 0,
        ..Default::default()
    };
    let out = train(&g, None, 1, &tcfg, &PgdConfig::default()).unwrap();
    let m = mse(&out.angles.column(0), &gt.angles.column(0)).unwrap();
    assert!(m <= 1e-3, "trained noiseless mse = {m}");
}

#[test]
fn sum_loss_equals_upset_plus_cycle() {
    let (g, _) = gen_offset_graph(&SyntheticConfig {
        model: MeasurementModel::ErdosRenyi,
        n: 30,
        p: 0.5,
        k: 2,
        eta: 0.2,
        option: GroundTruthOption::Gamma,
        seed: 1,
    })
    .unwrap();
    let x = spectral_rn_sync(&g, 2).unwrap().into_inner();
    let (emb, head) = parameter_init(5, 2, 2, 8, 8);
    let pcfg = PgdConfig::default();
    let upset = forward_loss(&g, &x, &emb, &head, &pcfg, LossKind::Upset).unwrap();
    let cycle = forward_loss(&g, &x, &emb, &head, &pcfg, LossKind::Cycle).unwrap();
    let sum = forward_loss(&g, &x, &emb, &head, &pcfg, LossKind::Sum).unwrap();
    assert!((sum - (upset + cycle)).abs() < 1e-10);

    let weighted = forward_loss(&g, &x, &emb, &head, &pcfg, LossKind::Weighted(0.5)).unwrap();
    assert!((weighted - (cycle + 0.5 * upset)).abs() < 1e-10);
}

#[test]
fn early_stopping_respects_patience() {
    let (g, _) = gen_offset_graph(&SyntheticConfig {
        model: MeasurementModel::ErdosRenyi,
        n: 30,
        p: 0.5,
        k: 1,
        eta: 0.3,
        option: GroundTruthOption::Gamma,
        seed: 2,
    })
    .unwrap();
    let tcfg = TrainConfig {
        max_epochs: 400,
        patience: 10,
        ..Default::default()
    };
    let out = train(&g, None, 1, &tcfg, &PgdConfig::default()).unwrap();
    // stopped no later than best epoch + patience
    assert!(out.loss_trace.len() <= out.best_epoch + 1 + 10);
}
