//! Generates the PETALS benchmark, checks the symmetry certificate of every
//! instance and scores the relation-invariant baseline.
//!
//! With `--train` it also trains a small model for a few minutes and
//! reports its accuracy.

use flock::model::{Flock, ModelConfig};
use flock::petals::{baseline_scores, certify, generate_benchmark, model_scores, petals_accuracy, PetalsSource};
use flock::train::{train, TrainConfig};

fn main() -> flock::Result<()> {
    let bench = generate_benchmark(0)?;
    println!("{} instances", bench.len());
    let inst = &bench[57];
    let g = &inst.graph;
    println!(
        "instance 57: scheme {}, petal length {}, stem length {}, {} nodes, {} edges",
        inst.params.scheme,
        inst.params.petal_len,
        inst.params.stem_len,
        g.num_entities(),
        g.num_triples()
    );
    println!(
        "  query ({}, {}, ?), true target {}, false target {}",
        g.entity_name(inst.stem_node),
        g.relation_name(0),
        g.entity_name(inst.t1),
        g.entity_name(inst.t2)
    );
    let certified = bench.iter().map(certify).filter(|c| c.is_ok()).count();
    println!("certificates verified: {certified}/{}", bench.len());
    let base: Vec<(f64, f64)> = bench.iter().enumerate().map(|(k, i)| baseline_scores(i, k)).collect();
    println!("relation-invariant baseline accuracy: {}", petals_accuracy(&base));

    if std::env::args().any(|a| a == "--train") {
        let cfg = ModelConfig {
            walk_length: 16,
            base_walks: 16,
            ..Default::default()
        };
        let mut model = Flock::new(cfg, 0)?;
        let tc = TrainConfig {
            steps: 120,
            batch_size: 4,
            ..Default::default()
        };
        train(&mut model, &PetalsSource { instances: &bench }, &tc, None, None)?;
        let acc = petals_accuracy(&model_scores(&model, &bench, 4, 0)?);
        println!("trained model accuracy (P = 4): {acc:.3}");
    }
    Ok(())
}
