//! Samples query-conditioned walks on a small graph, prints their
//! anonymized records, and compares empirical walk frequencies with the
//! exact law.

use std::collections::HashMap;

use flock::kg::{KnowledgeGraph, Query};
use flock::record::{format_record, record};
use flock::rng::walk_rng;
use flock::walk::{GraphView, Scenario};
use num_traits::ToPrimitive;

fn main() -> flock::Result<()> {
    let names = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let triples = [(0, 0, 1), (1, 1, 2), (2, 0, 3), (3, 1, 0), (1, 0, 3), (3, 0, 4)]
        .iter()
        .map(|&(h, r, t)| flock::kg::Triple::new(h, r, t))
        .collect();
    let g = KnowledgeGraph::with_names(
        names(&["ann", "bob", "cat", "dan", "eve"]),
        names(&["knows", "likes"]),
        triples,
    )?;
    let view = GraphView::new(&g);
    let q = Query::entity(0, 0);

    let batch = view.sample_walk_batch(&q, 2, 4, 7)?;
    println!("{} walks for an entity query with n = 2:", batch.walks.len());
    for (w, sc) in batch.walks.iter().zip(&batch.scenarios) {
        let path: Vec<&str> = w.nodes().map(|v| g.entity_name(v)).collect();
        println!("  {sc:?}: {}", path.join(" -> "));
        println!("      {}", format_record(&record(w, &q)));
    }

    println!("\nquery-head walks of length 3, exact vs empirical (100000 samples):");
    let exact = view.enumerate_walk_distribution(&q, Scenario::QueryHead, 3, 10_000)?;
    let mut counts: HashMap<_, usize> = HashMap::new();
    let samples = 100_000;
    for i in 0..samples {
        let w = view.sample_walk(&q, Scenario::QueryHead, 3, &mut walk_rng(1, i))?;
        *counts.entry(w).or_default() += 1;
    }
    for (w, p) in &exact {
        let path: Vec<&str> = w.nodes().map(|v| g.entity_name(v)).collect();
        let freq = counts.get(w).copied().unwrap_or(0) as f64 / samples as f64;
        println!(
            "  {:<28} {:>6} = {:.4}   observed {freq:.4}",
            path.join(" -> "),
            p.to_string(),
            p.to_f64().unwrap_or(0.0)
        );
    }
    Ok(())
}
