use egean::lab::{generate_world, sample_observations, WorldSpec};
use egean::model::{Ablation, EgeanModel, ModelConfig, EMBEDDING_NAME};
use egean::train::{evaluate, export_embeddings, fit, LabelSource, TrainConfig, TrainData, TrainError};

fn small_data(seed: u64) -> TrainData {
    let spec = WorldSpec {
        n_users: 60,
        n_items: 60,
        ..WorldSpec::random(1500, 6, 1.0, seed)
    };
    let w = generate_world(&spec).unwrap();
    TrainData::from_world(&w, &sample_observations(&w, seed + 1))
}

fn quick(seed: u64) -> TrainConfig {
    TrainConfig {
        pretrain_epochs: 2,
        epochs: 3,
        batch_size: 256,
        seed,
        ..Default::default()
    }
}

fn train(data: &TrainData, model_cfg: ModelConfig, cfg: &TrainConfig) -> (EgeanModel, egean::train::MetricsReport) {
    let mut m = EgeanModel::new(model_cfg, data.schema.clone(), cfg.seed).unwrap();
    let r = fit(&mut m, data, cfg).unwrap();
    (m, r)
}

#[test]
fn fit_freezes_the_shared_table_and_fills_the_report() {
    let data = small_data(1);
    let (m, r) = train(&data, ModelConfig::default(), &quick(1));
    assert_eq!(r.embedding_checksum_before, r.embedding_checksum_after);
    assert!(!r.trainable_parameters.iter().any(|n| n == EMBEDDING_NAME));
    assert_eq!(r.epochs.len(), 4);
    assert_eq!(r.evaluation.cvr_auc_labels, LabelSource::Oracle);
    assert_eq!(r.evaluation.cvr_auc_rows, data.len());
    for a in [r.evaluation.cvr_auc, r.evaluation.ctcvr_auc] {
        assert!((0.0..=1.0).contains(&a));
    }
    assert_eq!(r.config_hash.len(), 64);
    assert_eq!(evaluate(&m, &data).unwrap(), r.evaluation);
}

#[test]
fn identical_inputs_give_identical_reports() {
    let data = small_data(2);
    let (_, a) = train(&data, ModelConfig::default(), &quick(2));
    let (_, b) = train(&data, ModelConfig::default(), &quick(2));
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let (_, c) = train(&data, ModelConfig::default(), &quick(3));
    assert_ne!(a.config_hash, c.config_hash);
}

#[test]
fn total_loss_falls_over_ten_epochs() {
    let data = small_data(4);
    let cfg = TrainConfig {
        epochs: 10,
        ..quick(4)
    };
    let (_, r) = train(&data, ModelConfig::default(), &cfg);
    let first = r.epochs.first().unwrap().total_loss;
    let last = r.epochs.last().unwrap().total_loss;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn untrained_model_ranks_at_chance() {
    let w = generate_world(&WorldSpec::random(10_000, 8, 1.0, 9)).unwrap();
    let data = TrainData::from_world(&w, &sample_observations(&w, 10));
    // a single draw can correlate with the bucketed covariates, so average over initialisations
    let aucs: Vec<f64> = (0..8)
        .map(|s| {
            let m = EgeanModel::new(ModelConfig::default(), data.schema.clone(), s).unwrap();
            evaluate(&m, &data).unwrap().cvr_auc
        })
        .collect();
    let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
    assert!((mean - 0.5).abs() < 0.05, "{aucs:?}");
}

#[test]
fn disabling_metric_learning_matches_zero_mmd_weight() {
    let data = small_data(5);
    let off = ModelConfig {
        ablation: Ablation {
            metric_learning_on: false,
            ..Ablation::default()
        },
        ..ModelConfig::default()
    };
    let (_, a) = train(&data, off, &quick(5));
    let zero = TrainConfig {
        alpha_mmd: 0.0,
        ..quick(5)
    };
    let (_, b) = train(&data, ModelConfig::default(), &zero);
    assert_eq!(a.epochs, b.epochs);
    assert_eq!(a.evaluation, b.evaluation);
    assert_eq!(a.trainable_parameters, b.trainable_parameters);
}

#[test]
fn without_exposure_network_pretraining_is_skipped() {
    let data = small_data(6);
    let cfg = ModelConfig {
        ablation: Ablation::without("without-EN").unwrap(),
        ..ModelConfig::default()
    };
    let fresh = EgeanModel::new(cfg.clone(), data.schema.clone(), 6).unwrap();
    let (_, r) = train(&data, cfg, &quick(6));
    assert!(r.pretrain.unwrap().skipped);
    assert_eq!(r.embedding_checksum_before, fresh.store().get(fresh.embedding_id()).checksum());
}

#[test]
fn exploding_learning_rate_aborts_with_diagnostics() {
    let data = small_data(7);
    let cfg = TrainConfig {
        learning_rate: 1e300,
        ..quick(7)
    };
    let mut m = EgeanModel::new(ModelConfig::default(), data.schema.clone(), 7).unwrap();
    match fit(&mut m, &data, &cfg) {
        Err(TrainError::NonFinite { diagnostics, .. }) => assert!(!diagnostics.is_empty()),
        other => panic!("expected a non-finite abort, got {other:?}"),
    }
}

#[test]
fn exported_embeddings_round_trip() {
    let data = small_data(8);
    let (m, _) = train(&data, ModelConfig::default(), &quick(8));
    let mut buf = Vec::new();
    export_embeddings(&m, &data, &mut buf).unwrap();
    let mut rdr = csv::Reader::from_reader(buf.as_slice());
    let width = m.embedding_width();
    assert_eq!(rdr.headers().unwrap().len(), 3 + width);
    let (shared, cvr) = m.embeddings(&data.codes(), data.len(), 512).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2 * data.len());
    for row in &rows {
        let i: usize = row[0].parse().unwrap();
        assert_eq!(&row[2] == "1", data.records[i].click);
        let src = if &row[1] == "shared" { &shared } else { &cvr };
        for k in 0..width {
            let v: f64 = row[3 + k].parse().unwrap();
            assert!((v - src[i * width + k]).abs() < 1e-9);
        }
    }
}
