//! Reverse-mode gradient tape over the kernels in [`super::ops`].

use std::collections::HashMap;

use super::ops::{self, GroupNormStats};
use super::{Grads, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(String),
    Conv2d { x: Var, w: Var, b: Var, stride: usize, padding: usize },
    Linear { x: Var, w: Var, b: Var },
    GroupNorm { x: Var, gamma: Var, beta: Var, stats: GroupNormStats },
    Silu(Var),
    AvgPool2(Var),
    Upsample2(Var),
    Concat(Var, Var),
    AddChannelBias { x: Var, bias: Var },
    Add(Var, Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
}

/// Result of [`Tape::backward`].
pub struct Backward<T> {
    pub params: Grads<T>,
    leaves: HashMap<Var, Tensor<T>>,
}

impl<T: Scalar> Backward<T> {
    /// Gradient with respect to an input leaf, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v)
    }
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        let value = store
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))?
            .clone();
        Ok(self.push(value, Op::Param(name.to_string())))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let y = ops::conv2d(self.value(x), self.value(w), self.value(b), stride, padding)?;
        Ok(self.push(y, Op::Conv2d { x, w, b, stride, padding }))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = ops::linear(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(y, Op::Linear { x, w, b }))
    }

    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        let (y, stats) = ops::group_norm(self.value(x), self.value(gamma), self.value(beta), groups, 1e-5)?;
        Ok(self.push(y, Op::GroupNorm { x, gamma, beta, stats }))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let y = ops::silu(self.value(x));
        self.push(y, Op::Silu(x))
    }

    pub fn avgpool2(&mut self, x: Var) -> Result<Var> {
        let y = ops::avgpool2(self.value(x))?;
        Ok(self.push(y, Op::AvgPool2(x)))
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let y = ops::upsample2_nearest(self.value(x))?;
        Ok(self.push(y, Op::Upsample2(x)))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::concat_channels(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Concat(a, b)))
    }

    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let y = ops::add_channel_bias(self.value(x), self.value(bias))?;
        Ok(self.push(y, Op::AddChannelBias { x, bias }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b))?;
        Ok(self.push(y, Op::Add(a, b)))
    }

    /// Propagates `seed` (the gradient of some scalar with respect to `out`)
    /// back through the tape.
    pub fn backward(&self, out: Var, seed: Tensor<T>) -> Result<Backward<T>> {
        if seed.shape() != self.value(out).shape() {
            return Err(Error::shape("backward", self.value(out).shape(), seed.shape()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=out.0).map(|_| None).collect();
        grads[out.0] = Some(seed);
        let mut result = Backward {
            params: Grads::new(),
            leaves: HashMap::new(),
        };

        fn acc<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        }

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    result.leaves.insert(Var(idx), g);
                }
                Op::Param(name) => result.params.accumulate(name, g)?,
                &Op::Conv2d { x, w, b, stride, padding } => {
                    let cg = ops::conv2d_backward(self.value(x), self.value(w), &g, stride, padding)?;
                    acc(&mut grads, x, cg.input)?;
                    acc(&mut grads, w, cg.kernel)?;
                    acc(&mut grads, b, cg.bias)?;
                }
                &Op::Linear { x, w, b } => {
                    let (dx, dw, db) = ops::linear_backward(self.value(x), self.value(w), &g)?;
                    acc(&mut grads, x, dx)?;
                    acc(&mut grads, w, dw)?;
                    acc(&mut grads, b, db)?;
                }
                Op::GroupNorm { x, gamma, beta, stats } => {
                    let (dx, dg, db) =
                        ops::group_norm_backward(self.value(*x), self.value(*gamma), stats, &g)?;
                    acc(&mut grads, *x, dx)?;
                    acc(&mut grads, *gamma, dg)?;
                    acc(&mut grads, *beta, db)?;
                }
                &Op::Silu(x) => acc(&mut grads, x, ops::silu_backward(self.value(x), &g)?)?,
                &Op::AvgPool2(x) => acc(&mut grads, x, ops::avgpool2_backward(&g)?)?,
                &Op::Upsample2(x) => acc(&mut grads, x, ops::upsample2_backward(&g)?)?,
                &Op::Concat(a, b) => {
                    let ca = self.value(a).shape()[1];
                    let (ga, gb) = ops::split_channels(&g, ca)?;
                    acc(&mut grads, a, ga)?;
                    acc(&mut grads, b, gb)?;
                }
                &Op::AddChannelBias { x, bias } => {
                    acc(&mut grads, bias, ops::channel_bias_backward(&g)?)?;
                    acc(&mut grads, x, g)?;
                }
                &Op::Add(a, b) => {
                    acc(&mut grads, a, g.clone())?;
                    acc(&mut grads, b, g)?;
                }
            }
        }
        Ok(result)
    }
}
