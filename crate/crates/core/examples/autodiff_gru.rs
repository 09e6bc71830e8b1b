//! Fits a GRU with a linear read-out to a running-sum task using the
//! crate's reverse-mode autodiff and AdamW.
//!
//! Each sequence holds 6 random numbers; the target at every step is the
//! sum so far.

use flock::nn::layers::{Gru, Linear};
use flock::nn::{AdamW, AdamWConfig, Graph, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> flock::Result<()> {
    let (steps, batch, hidden) = (6, 16, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let gru = Gru::new(&mut store, "gru", 1, hidden, &mut rng)?;
    let readout = Linear::new(&mut store, "readout", hidden, 1, true, &mut rng)?;
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: 1e-2,
            ..Default::default()
        },
        &store,
    );
    for it in 0..=400 {
        // Time-major rows: row t * batch + i is step t of sequence i.
        let xs: Vec<f64> = (0..steps * batch).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let mut ys = vec![0.0; steps * batch];
        for i in 0..batch {
            let mut acc = 0.0;
            for t in 0..steps {
                acc += xs[t * batch + i];
                ys[t * batch + i] = acc;
            }
        }
        let mut g = Graph::with_params(&store);
        let x = g.input(Tensor::new(vec![steps * batch, 1], xs)?);
        let y = g.input(Tensor::new(vec![steps * batch, 1], ys)?);
        let h = gru.forward(&mut g, x, steps, batch, false, None)?;
        let pred = readout.forward(&mut g, h)?;
        let err = g.sub(pred, y)?;
        let sq = g.mul(err, err)?;
        let loss = g.mean(sq);
        if it % 50 == 0 {
            println!("iteration {it:>3}: mse {:.5}", g.value(loss).data()[0]);
        }
        let grads = g.backward(loss)?.into_params();
        opt.step(&mut store, &grads)?;
    }
    Ok(())
}
