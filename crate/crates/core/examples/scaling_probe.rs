//! Times ensembled prediction while doubling the walk count, the walk
//! length and the number of passes.

use flock::verify::scaling_suite;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() -> flock::Result<()> {
    for line in scaling_suite(0)?.lines {
        println!("{line}");
    }
    Ok(())
}
