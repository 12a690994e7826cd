//! Parameterized building blocks on top of the tape.

use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::params::truncated_normal;
use crate::numerics::{Bound, ParamId, ParamTree, Scalar, Tape, Tensor, Var};

/// Weight initialisation: truncated normal with std `1/sqrt(d_in)` or a fixed std.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeightInit {
    FanIn,
    Fixed(f64),
}

impl WeightInit {
    pub fn std(self, d_in: usize) -> f64 {
        match self {
            WeightInit::FanIn => 1.0 / (d_in.max(1) as f64).sqrt(),
            WeightInit::Fixed(s) => s,
        }
    }
}

/// Affine map `x W^T + b`. Weight decays, bias does not.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        tree: &mut ParamTree<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        init: WeightInit,
        rng: &mut R,
    ) -> Result<Linear> {
        let w = tree.add(format!("{name}.weight"), truncated_normal(d_out, d_in, init.std(d_in), rng), true)?;
        let b = tree.add(format!("{name}.bias"), Tensor::zeros(1, d_out), false)?;
        Ok(Linear { w, b })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        tape.linear(x, p.var(self.w), Some(p.var(self.b)))
    }
}

/// Layer normalization with learned gain (init 1) and bias (init 0).
#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(tree: &mut ParamTree<T>, name: &str, d: usize, decay_eligible: bool) -> Result<LayerNorm> {
        let gain = tree.add(format!("{name}.gain"), Tensor::filled(1, d, T::one()), decay_eligible)?;
        let bias = tree.add(format!("{name}.bias"), Tensor::zeros(1, d), decay_eligible)?;
        Ok(LayerNorm { gain, bias })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        tape.layer_norm(x, p.var(self.gain), p.var(self.bias))
    }
}

/// Two-layer perceptron with GELU and dropout after the activation.
#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        tree: &mut ParamTree<T>,
        name: &str,
        d_in: usize,
        hidden: usize,
        d_out: usize,
        init: WeightInit,
        rng: &mut R,
    ) -> Result<Mlp> {
        Ok(Mlp {
            fc1: Linear::new(tree, &format!("{name}.fc1"), d_in, hidden, init, rng)?,
            fc2: Linear::new(tree, &format!("{name}.fc2"), hidden, d_out, init, rng)?,
        })
    }

    pub fn forward<T: Scalar, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
        dropout: f64,
        rng: &mut R,
        training: bool,
    ) -> Result<Var> {
        let h = self.fc1.forward(tape, p, x)?;
        let h = tape.gelu(h);
        let h = tape.dropout(h, dropout, rng, training)?;
        self.fc2.forward(tape, p, h)
    }
}

/// Multi-head attention with query, key, value and output projections.
#[derive(Clone, Copy, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        tree: &mut ParamTree<T>,
        name: &str,
        d: usize,
        heads: usize,
        init: WeightInit,
        rng: &mut R,
    ) -> Result<MultiHeadAttention> {
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!("width {d} not divisible by {heads} heads")));
        }
        Ok(MultiHeadAttention {
            q: Linear::new(tree, &format!("{name}.q"), d, d, init, rng)?,
            k: Linear::new(tree, &format!("{name}.k"), d, d, init, rng)?,
            v: Linear::new(tree, &format!("{name}.v"), d, d, init, rng)?,
            o: Linear::new(tree, &format!("{name}.o"), d, d, init, rng)?,
            heads,
        })
    }

    /// Query row `seg[j]` attends over key/value row `j`. Rows without keys
    /// yield the output bias only; callers mask them.
    pub fn forward_segments<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        queries: Var,
        keys: Var,
        values: Var,
        seg: Rc<Vec<usize>>,
    ) -> Result<Var> {
        let q = self.q.forward(tape, p, queries)?;
        let k = self.k.forward(tape, p, keys)?;
        let v = self.v.forward(tape, p, values)?;
        let a = tape.segment_attention(q, k, v, seg, self.heads)?;
        self.o.forward(tape, p, a)
    }
}

/// Attention of a single `1 x d` query over `n x d` keys and values.
pub fn multi_head_attention<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    attn: &MultiHeadAttention,
    query: Var,
    keys: Var,
    values: Var,
) -> Result<Var> {
    let n = tape.shape(keys)[0];
    if n == 0 {
        return Err(Error::shape("attention", "empty key set"));
    }
    if tape.shape(query)[0] != 1 || tape.shape(values)[0] != n {
        return Err(Error::shape("attention", "expected one query and matching key/value counts"));
    }
    attn.forward_segments(tape, p, query, keys, values, Rc::new(vec![0; n]))
}
