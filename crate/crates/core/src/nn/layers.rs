//! Parameterised building blocks on top of [`Graph`].
//!
//! A layer owns only [`ParamId`]s; values live in a [`ParamStore`] and are
//! pulled into a graph on every forward call.

use rand::Rng;

use super::graph::{Graph, Var};
use super::param::{ParamId, ParamStore};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.add_glorot(format!("{name}.w"), fan_in, fan_out, 1.0, rng)?;
        let b = if bias {
            Some(store.add_zeros(format!("{name}.b"), &[1, fan_out])?)
        } else {
            None
        };
        Ok(Self { w, b })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let y = g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.w).chain(self.b).collect()
    }
}

/// Row-wise RMS normalisation with a learned gain (initialised to 1).
#[derive(Clone, Debug)]
pub struct RmsNorm {
    pub gain: ParamId,
    pub eps: f64,
}

impl RmsNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, eps: f64) -> Result<Self> {
        let gain = store.add(format!("{name}.gain"), super::Tensor::filled(&[1, dim], 1.0))?;
        Ok(Self { gain, eps })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let gain = g.param(self.gain);
        g.rms_norm(x, gain, self.eps)
    }
}

/// Gated feed-forward block `(x W1 * swish(x W2)) W3`.
#[derive(Clone, Debug)]
pub struct SwiGlu {
    pub w1: ParamId,
    pub w2: ParamId,
    pub w3: ParamId,
}

impl SwiGlu {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            w1: store.add_glorot(format!("{name}.w1"), dim, hidden, 1.0, rng)?,
            w2: store.add_glorot(format!("{name}.w2"), dim, hidden, 1.0, rng)?,
            w3: store.add_glorot(format!("{name}.w3"), hidden, dim, 1.0, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let (w1, w2, w3) = (g.param(self.w1), g.param(self.w2), g.param(self.w3));
        let a = g.matmul(x, w1)?;
        let b = g.matmul(x, w2)?;
        let gate = g.swish(b);
        let h = g.mul(a, gate)?;
        g.matmul(h, w3)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.w1, self.w2, self.w3]
    }
}

/// Two linear layers with a swish in between.
#[derive(Clone, Debug)]
pub struct Mlp2 {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp2 {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        hidden: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            hidden: Linear::new(store, &format!("{name}.0"), fan_in, hidden, true, rng)?,
            out: Linear::new(store, &format!("{name}.1"), hidden, fan_out, true, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let h = self.hidden.forward(g, x)?;
        let h = g.swish(h);
        self.out.forward(g, h)
    }
}

/// One direction of a GRU: input projection to the three gates plus the
/// recurrent matrices consumed by [`Graph::gru_scan`].
#[derive(Clone, Debug)]
pub struct Gru {
    pub input: Linear,
    pub u_zr: ParamId,
    pub u_n: ParamId,
    pub hidden: usize,
}

impl Gru {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, fan_in: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            input: Linear::new(store, &format!("{name}.w"), fan_in, 3 * hidden, true, rng)?,
            u_zr: store.add_glorot(format!("{name}.u_zr"), hidden, 2 * hidden, 1.0, rng)?,
            u_n: store.add_glorot(format!("{name}.u_n"), hidden, hidden, 1.0, rng)?,
            hidden,
        })
    }

    /// `x` is time-major: row `t * batch + i` is step `t` of sequence `i`.
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        x: Var,
        steps: usize,
        batch: usize,
        reverse: bool,
        h0: Option<Var>,
    ) -> Result<Var> {
        let xw = self.input.forward(g, x)?;
        let (u_zr, u_n) = (g.param(self.u_zr), g.param(self.u_n));
        g.gru_scan(xw, u_zr, u_n, h0, steps, batch, reverse)
    }
}

/// Forward and backward GRUs whose outputs are concatenated and projected
/// back to the hidden size.
#[derive(Clone, Debug)]
pub struct BiGru {
    pub fwd: Gru,
    pub bwd: Gru,
    pub proj: Linear,
}

impl BiGru {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, fan_in: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            fwd: Gru::new(store, &format!("{name}.fwd"), fan_in, hidden, rng)?,
            bwd: Gru::new(store, &format!("{name}.bwd"), fan_in, hidden, rng)?,
            proj: Linear::new(store, &format!("{name}.proj"), 2 * hidden, hidden, true, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, steps: usize, batch: usize) -> Result<Var> {
        let f = self.fwd.forward(g, x, steps, batch, false, None)?;
        let b = self.bwd.forward(g, x, steps, batch, true, None)?;
        let both = g.concat(&[f, b], 1)?;
        self.proj.forward(g, both)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn swiglu_scalar_case() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = SwiGlu::new(&mut store, "s", 1, 1, &mut rng).unwrap();
        for id in s.params() {
            *store.tensor_mut(id) = Tensor::scalar(1.0);
        }
        let mut g = Graph::with_params(&store);
        let x = g.input(Tensor::scalar(1.0));
        let y = s.forward(&mut g, x).unwrap();
        let expected = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((g.value(y).item() - expected).abs() < 1e-15);
        assert!((expected - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn swiglu_zero_gate_weights_give_zero() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = SwiGlu::new(&mut store, "s", 3, 6, &mut rng).unwrap();
        *store.tensor_mut(s.w2) = Tensor::zeros(&[3, 6]);
        let mut g = Graph::with_params(&store);
        let x = g.input(Tensor::from_rows(&[&[0.3, -1.0, 2.0]]));
        let y = s.forward(&mut g, x).unwrap();
        assert!(g.value(y).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_position_bigru_sees_same_input_both_ways() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bi = BiGru::new(&mut store, "g", 2, 2, &mut rng).unwrap();
        // Make both directions share weights; a length-1 sequence must then
        // give identical forward and backward states.
        for (src, dst) in [
            (bi.fwd.input.w, bi.bwd.input.w),
            (bi.fwd.input.b.unwrap(), bi.bwd.input.b.unwrap()),
            (bi.fwd.u_zr, bi.bwd.u_zr),
            (bi.fwd.u_n, bi.bwd.u_n),
        ] {
            *store.tensor_mut(dst) = store.tensor(src).clone();
        }
        let mut g = Graph::with_params(&store);
        let x = g.input(Tensor::from_rows(&[&[0.5, -0.25]]));
        let f = bi.fwd.forward(&mut g, x, 1, 1, false, None).unwrap();
        let b = bi.bwd.forward(&mut g, x, 1, 1, true, None).unwrap();
        assert_eq!(g.value(f), g.value(b));
    }
}
