//! Central finite-difference checks of every tape operation, layer and the
//! full training loss.

use flock::verify::gradient_suite;

fn main() -> flock::Result<()> {
    let reports = gradient_suite(0)?;
    for r in &reports {
        println!(
            "{:<28} {:.2e}  (< {:.0e}: {})",
            r.name,
            r.error,
            r.tolerance,
            r.passed()
        );
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    println!("{failed} of {} checks failed", reports.len());
    Ok(())
}
