//! Checks that recordings, walk probabilities, pooling and expected scores
//! are unchanged by random relabellings, and that a recorder keeping raw
//! ids is caught.

use flock::record::RecordingScheme;
use flock::verify::{asymmetric_case, check_deterministic_invariance, check_distributional_invariance, InvarianceCase};
use flock::FlockError;

fn main() -> flock::Result<()> {
    for seed in 0..5 {
        let case = InvarianceCase::random(seed, 6, 3)?;
        let det = check_deterministic_invariance(&case, RecordingScheme::Anonymous)?;
        let dist = match check_distributional_invariance(&case, RecordingScheme::Anonymous, seed) {
            Ok(d) => format!("{d:.1e}"),
            Err(FlockError::Budget(_)) => "skipped (too many walk tuples)".into(),
            Err(e) => return Err(e),
        };
        println!(
            "case {seed}: {} nodes, {} triples, l = {}: {} walks agree: {}, max |dE| = {dist}",
            case.graph.num_entities(),
            case.graph.num_triples(),
            case.walk_length,
            det.walks_checked,
            det.passed()
        );
    }
    let case = asymmetric_case()?;
    let det = check_deterministic_invariance(&case, RecordingScheme::RawIds)?;
    let dist = check_distributional_invariance(&case, RecordingScheme::RawIds, 0)?;
    println!(
        "raw-id recorder: {}",
        det.witness.unwrap_or_else(|| "not caught".into())
    );
    println!("raw-id recorder: max |dE| = {dist:.3}");
    Ok(())
}
