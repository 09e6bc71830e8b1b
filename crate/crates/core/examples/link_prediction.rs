//! Trains on a small synthetic family graph whose `grandparent_of` facts
//! follow from `parent_of`, then ranks held-out facts with filtering and
//! prints the top candidates of one query.

use flock::eval::{evaluate, EvalOptions, FilterIndex};
use flock::kg::{composition_dataset, Query};
use flock::model::{Flock, ModelConfig};
use flock::train::{train, TrainConfig, TripleSource};
use flock::walk::GraphView;

fn main() -> flock::Result<()> {
    let ds = composition_dataset(0, 80, 200, 12)?;
    let cfg = ModelConfig {
        head_dim: 8,
        update_steps: 3,
        walk_length: 12,
        base_walks: 16,
        ensemble: 4,
        ..Default::default()
    };
    let mut model = Flock::new(cfg, 0)?;
    let source = TripleSource::new(&ds.graph, &ds.train, model.config.task, 32, true);
    let tc = TrainConfig {
        lr: 2e-3,
        steps: 300,
        batch_size: 4,
        negatives: 32,
        ..Default::default()
    };
    let report = train(&mut model, &source, &tc, None, None)?;
    println!("final loss {:.4}", report.log.last().map_or(f64::NAN, |r| r.loss));

    let filter = FilterIndex::new(ds.train.iter().chain(&ds.valid).chain(&ds.test));
    let opts = EvalOptions {
        passes: 4,
        ..Default::default()
    };
    let (metrics, _) = evaluate(&model, &ds.graph, &ds.test, &filter, &opts)?;
    println!("test {}", metrics.to_json());

    let t = ds.test[0];
    let q = Query::entity(t.head, t.rel);
    let scores = model.predict(&GraphView::new(&ds.graph), &q, 4, 0)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let g = &ds.graph;
    println!(
        "({}, {}, ?), held-out answer {}:",
        g.entity_name(t.head),
        g.relation_name(t.rel),
        g.entity_name(t.tail)
    );
    for &c in order.iter().take(5) {
        println!("  {:<4} {:.3}", g.entity_name(c), scores[c]);
    }
    Ok(())
}
