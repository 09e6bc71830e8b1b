use flock::eval::{evaluate, EvalOptions, FilterIndex};
use flock::kg::{composition_dataset, Dataset};
use flock::model::{Flock, ModelConfig};
use flock::train::{train, TrainConfig, TripleSource};

fn small_model() -> ModelConfig {
    ModelConfig {
        walk_length: 6,
        base_walks: 4,
        update_steps: 1,
        heads: 1,
        head_dim: 4,
        ensemble: 1,
        ..ModelConfig::default()
    }
}

fn small_train() -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        negatives: 4,
        batch_size: 2,
        steps: 6,
        val_every: Some(3),
        ..TrainConfig::default()
    }
}

fn run(ds: &Dataset, out: Option<&std::path::Path>) -> (Flock, Vec<f64>) {
    let mut model = Flock::new(small_model(), 7).unwrap();
    let cfg = small_train();
    let source = TripleSource::new(&ds.graph, &ds.train, model.config.task, cfg.negatives, true);
    let filter = FilterIndex::new(ds.train.iter().chain(&ds.valid).chain(&ds.test));
    let validator = |m: &Flock| {
        Ok(evaluate(m, &ds.graph, &ds.valid, &filter, &EvalOptions::default())?
            .0
            .mrr)
    };
    let report = train(&mut model, &source, &cfg, Some(&validator), out).unwrap();
    assert_eq!(report.log.len(), cfg.steps);
    assert!(report.log.iter().all(|r| r.loss.is_finite()));
    (model, report.log.iter().map(|r| r.loss).collect())
}

fn values(m: &Flock) -> Vec<f64> {
    m.params.iter().flat_map(|(_, p)| p.tensor.data().to_vec()).collect()
}

#[test]
fn training_is_deterministic() {
    let ds = composition_dataset(1, 30, 90, 4).unwrap();
    let (a, la) = run(&ds, None);
    let (b, lb) = run(&ds, None);
    assert_eq!(la, lb);
    assert_eq!(values(&a), values(&b));
}

#[test]
fn checkpoint_reproduces_evaluation() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = composition_dataset(2, 30, 90, 4).unwrap();
    let (model, _) = run(&ds, Some(tmp.path()));
    let saved = tmp.path().join("best.ckpt");
    assert!(saved.is_file());
    assert!(tmp.path().join("train_log.csv").is_file());

    let loaded = Flock::load(&saved).unwrap();
    assert_eq!(values(&loaded), values(&model));
    assert_eq!(loaded.config, model.config);

    let filter = FilterIndex::new(ds.train.iter().chain(&ds.valid).chain(&ds.test));
    let opts = EvalOptions {
        passes: 2,
        seed: 5,
        ..EvalOptions::default()
    };
    let (ma, ra) = evaluate(&model, &ds.graph, &ds.test, &filter, &opts).unwrap();
    let (mb, rb) = evaluate(&loaded, &ds.graph, &ds.test, &filter, &opts).unwrap();
    assert_eq!(ma.mrr, mb.mrr);
    assert_eq!(ra.len(), 2 * ds.test.len());
    assert!(ra.iter().zip(&rb).all(|(x, y)| x.rank == y.rank));
    assert!(ra.iter().all(|r| r.rank >= 1.0 && r.rank <= r.candidates as f64));
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let ds = composition_dataset(3, 30, 90, 4).unwrap();
    let mut model = Flock::new(small_model(), 1).unwrap();
    let before = values(&model);
    let cfg = TrainConfig {
        lr: 0.0,
        ..small_train()
    };
    let source = TripleSource::new(&ds.graph, &ds.train, model.config.task, cfg.negatives, true);
    train(&mut model, &source, &cfg, None, None).unwrap();
    assert_eq!(values(&model), before);
}
