use std::collections::BTreeMap;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// A trainable tensor with its Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub step: u64,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let m = Tensor::zeros(value.shape());
        let v = Tensor::zeros(value.shape());
        Self { value, m, v, step: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Named parameters, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.params.insert(name.into(), Param::new(value));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name).map(|p| &mut p.value)
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, p)| (k.as_str(), &p.value))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// One Adam update with bias correction.
    ///
    /// Every gradient is validated before any parameter moves, so a rejected
    /// step leaves the store untouched. Parameters without a gradient are
    /// left alone.
    pub fn adam_step(&mut self, grads: &Grads<T>, lr: f64, cfg: &AdamConfig) -> Result<()> {
        for (name, g) in grads.iter() {
            let p = self
                .params
                .get(name)
                .ok_or_else(|| Error::InvalidArgument(format!("gradient for unknown parameter `{name}`")))?;
            if p.value.shape() != g.shape() {
                return Err(Error::shape("adam_step", p.value.shape(), g.shape()));
            }
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(name.to_string()));
            }
        }
        for (name, g) in grads.iter() {
            let p = self.params.get_mut(name).expect("validated above");
            p.step += 1;
            let t = p.step as i32;
            let c1 = 1.0 - cfg.beta1.powi(t);
            let c2 = 1.0 - cfg.beta2.powi(t);
            let values = p.value.data_mut();
            let ms = p.m.data_mut();
            let vs = p.v.data_mut();
            for i in 0..values.len() {
                let gi = g.data()[i].as_f64();
                let m = cfg.beta1 * ms[i].as_f64() + (1.0 - cfg.beta1) * gi;
                let v = cfg.beta2 * vs[i].as_f64() + (1.0 - cfg.beta2) * gi * gi;
                let update = lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
                ms[i] = T::from_f64_lossy(m);
                vs[i] = T::from_f64_lossy(v);
                values[i] = T::from_f64_lossy(values[i].as_f64() - update);
            }
        }
        Ok(())
    }
}

/// Gradients keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Grads<T> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn new() -> Self {
        Self { map: BTreeMap::new() }
    }

    pub fn accumulate(&mut self, name: &str, grad: Tensor<T>) -> Result<()> {
        match self.map.get_mut(name) {
            Some(existing) => existing.add_assign(&grad),
            None => {
                self.map.insert(name.to_string(), grad);
                Ok(())
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.map.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn scale(&mut self, factor: T) {
        for g in self.map.values_mut() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::new(&[values.len()], values.to_vec()).unwrap());
        s
    }

    fn grads(values: &[f64]) -> Grads<f64> {
        let mut g = Grads::new();
        g.accumulate("w", Tensor::new(&[values.len()], values.to_vec()).unwrap())
            .unwrap();
        g
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = store(&[1.0, -2.0, 3.0]);
        s.adam_step(&grads(&[0.0; 3]), 0.1, &AdamConfig::default()).unwrap();
        assert_eq!(s.get("w").unwrap().data(), &[1.0, -2.0, 3.0]);
        assert_eq!(s.param("w").unwrap().step, 1);
    }

    #[test]
    fn constant_gradient_moves_by_lr() {
        let mut s = store(&[0.0]);
        let lr = 0.01;
        let mut prev = 0.0;
        let mut last = 0.0;
        for _ in 0..2000 {
            s.adam_step(&grads(&[0.37]), lr, &AdamConfig::default()).unwrap();
            let now = s.get("w").unwrap().data()[0];
            last = prev - now;
            prev = now;
        }
        assert!((last - lr).abs() < 1e-6 * lr.max(1.0), "step {last}");
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = store(&[1.0, 2.0]);
        let err = s
            .adam_step(&grads(&[f64::NAN, 0.0]), 0.1, &AdamConfig::default())
            .unwrap_err();
        assert!(err.to_string().contains("`w`"));
        assert_eq!(s.get("w").unwrap().data(), &[1.0, 2.0]);
        assert!(s.adam_step(&grads(&[1.0]), 0.1, &AdamConfig::default()).is_err());
    }

    #[test]
    fn matches_scalar_reference_trajectory() {
        // Reference Adam written out per scalar, independent of the store.
        fn reference(mut p: f64, grad: impl Fn(f64, usize) -> f64, steps: usize, lr: f64) -> f64 {
            let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
            let (mut m, mut v) = (0.0, 0.0);
            for t in 1..=steps {
                let g = grad(p, t);
                m = b1 * m + (1.0 - b1) * g;
                v = b2 * v + (1.0 - b2) * g * g;
                let mhat = m / (1.0 - b1.powi(t as i32));
                let vhat = v / (1.0 - b2.powi(t as i32));
                p -= lr * mhat / (vhat.sqrt() + eps);
            }
            p
        }
        let init = [0.5, -1.5, 2.0];
        let grad = |p: f64, t: usize| 2.0 * p + 0.1 * t as f64;
        let lr = 0.05;
        let mut s = store(&init);
        for t in 1..=5 {
            let cur: Vec<f64> = s.get("w").unwrap().data().iter().map(|&p| grad(p, t)).collect();
            s.adam_step(&grads(&cur), lr, &AdamConfig::default()).unwrap();
        }
        for (i, &p0) in init.iter().enumerate() {
            let want = reference(p0, grad, 5, lr);
            assert!((s.get("w").unwrap().data()[i] - want).abs() < 1e-10);
        }
    }
}
