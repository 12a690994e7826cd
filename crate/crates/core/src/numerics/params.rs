//! Named parameter storage and binding onto a tape.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::{Gradients, Scalar, Tape, Tensor, Var};

/// Index of a leaf inside its [`ParamTree`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct ParamLeaf<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub decay_eligible: bool,
}

/// Ordered collection of uniquely named leaves.
#[derive(Clone, Debug)]
pub struct ParamTree<T> {
    leaves: Vec<ParamLeaf<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamTree<T> {
    fn default() -> Self {
        ParamTree::new()
    }
}

impl<T: Scalar> ParamTree<T> {
    pub fn new() -> ParamTree<T> {
        ParamTree {
            leaves: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>, decay_eligible: bool) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.by_name.insert(name.clone(), self.leaves.len());
        self.leaves.push(ParamLeaf {
            name,
            tensor,
            decay_eligible,
        });
        Ok(ParamId(self.leaves.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn leaves(&self) -> &[ParamLeaf<T>] {
        &self.leaves
    }

    pub fn leaves_mut(&mut self) -> &mut [ParamLeaf<T>] {
        &mut self.leaves
    }

    pub fn leaf(&self, id: ParamId) -> &ParamLeaf<T> {
        &self.leaves[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.leaves[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.leaves[id.0].tensor
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn scalar_count(&self) -> usize {
        self.leaves.iter().map(|l| l.tensor.len()).sum()
    }

    /// Copy of the tree in another precision.
    pub fn cast<U: Scalar>(&self) -> ParamTree<U> {
        ParamTree {
            leaves: self
                .leaves
                .iter()
                .map(|l| ParamLeaf {
                    name: l.name.clone(),
                    tensor: l.tensor.cast(),
                    decay_eligible: l.decay_eligible,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Every leaf placed on `tape` as a differentiable input.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self.leaves.iter().map(|l| tape.leaf(l.tensor.clone())).collect(),
        }
    }

    /// Every leaf placed on `tape` as a constant.
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self.leaves.iter().map(|l| tape.constant(l.tensor.clone())).collect(),
        }
    }

    /// Per-leaf gradients in tree order; untouched leaves get zeros.
    pub fn collect_grads(&self, bound: &Bound, grads: &mut Gradients<T>) -> Vec<Tensor<T>> {
        self.leaves
            .iter()
            .zip(&bound.vars)
            .map(|(l, &v)| {
                grads
                    .take(v)
                    .unwrap_or_else(|| Tensor::zeros(l.tensor.rows(), l.tensor.cols()))
            })
            .collect()
    }
}

/// Mapping from [`ParamId`] to the tape variable holding it.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

pub const INIT_STD: f64 = 0.02;

/// Normal(0, std) samples redrawn until they fall within two standard deviations.
pub fn truncated_normal<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Tensor<T> {
    let normal = Normal::new(0.0, std).expect("positive std");
    let data = (0..rows * cols)
        .map(|_| loop {
            let x: f64 = normal.sample(rng);
            if x.abs() <= 2.0 * std {
                break T::from_f64_lossy(x);
            }
        })
        .collect();
    Tensor::from_vec(rows, cols, data).expect("shape")
}
