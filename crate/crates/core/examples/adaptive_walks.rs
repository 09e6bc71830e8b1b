//! Adapts the walk count to graphs of other sizes and measures how walk
//! length affects edge coverage.

use flock::kg::composition_dataset;
use flock::walk::{adapt_walk_count, cover_probe, GraphView, WalkCountPolicy};

fn main() -> flock::Result<()> {
    let policy = WalkCountPolicy::new(128, 15_000.0, 250_000.0);
    for (v, e) in [(15_000, 250_000), (3_000, 20_000), (40_000, 900_000), (200, 1_000)] {
        println!(
            "{v:>6} entities, {e:>7} triples -> n = {}",
            adapt_walk_count(&policy, v, e)?
        );
    }

    let ds = composition_dataset(0, 10, 30, 2)?;
    let view = GraphView::new(&ds.graph);
    println!("\ncover statistics on a {}-node graph:", ds.graph.num_entities());
    println!("l,cover_fraction,mean_steps_to_cover");
    for p in cover_probe(&view, &[8, 16, 32, 64, 128], 1000, 0)? {
        println!("{},{:.3},{:.1}", p.length, p.cover_fraction, p.mean_steps_to_cover);
    }
    Ok(())
}
