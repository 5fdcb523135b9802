use std::collections::BTreeMap;

use crate::error::{Result, StedError};
use crate::nn::ParamStore;
use crate::tensor::{Real, Tensor};

/// Adam with bias correction and optional global-norm gradient clipping.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    step: u64,
    m: BTreeMap<String, Tensor<T>>,
    v: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Default for Adam<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Adam<T> {
    pub fn new() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(10.0),
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Global L2 norm of a gradient set.
    pub fn global_norm(grads: &BTreeMap<String, Tensor<T>>) -> f64 {
        grads
            .values()
            .flat_map(|g| g.data().iter())
            .map(|v| {
                let v = v.as_f64();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Applies one update. Returns the pre-clip gradient norm.
    pub fn step(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &BTreeMap<String, Tensor<T>>,
        lr: f64,
    ) -> Result<f64> {
        let norm = Self::global_norm(grads);
        if !norm.is_finite() {
            return Err(StedError::Numerical(format!("gradient norm is {norm}")));
        }
        let scale = match self.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (ob1, ob2) = (T::lit(1.0 - self.beta1), T::lit(1.0 - self.beta2));
        let step_size = T::lit(lr / bc1);
        let bc2_sqrt = T::lit(bc2.sqrt());
        let eps = T::lit(self.eps);
        let scale = T::lit(scale);
        for (name, g) in grads {
            let p = params.require_mut(name)?;
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gv = gv * scale;
                *mv = b1 * *mv + ob1 * gv;
                *vv = b2 * *vv + ob2 * gv * gv;
                *pv -= step_size * *mv / ((*vv).sqrt() / bc2_sqrt + eps);
            }
        }
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = ParamStore::<f64>::new();
        p.insert("a", Tensor::full([1, 1, 1, 2], 1.0));
        let mut g = BTreeMap::new();
        g.insert("a".to_string(), Tensor::from_vec([1, 1, 1, 2], vec![0.5, -2.0]).unwrap());
        let mut adam = Adam::new();
        adam.step(&mut p, &g, 0.1).unwrap();
        let d = p.get("a").unwrap().data();
        assert!((d[0] - 0.9).abs() < 1e-6);
        assert!((d[1] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_is_stationary() {
        let mut p = ParamStore::<f32>::new();
        p.insert("a", Tensor::full([1, 1, 2, 2], 0.25));
        let before = p.clone();
        let mut g = BTreeMap::new();
        g.insert("a".to_string(), Tensor::zeros([1, 1, 2, 2]));
        Adam::new().step(&mut p, &g, 1e-3).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = BTreeMap::new();
        g.insert("a".to_string(), Tensor::<f64>::full([1, 1, 1, 4], 100.0));
        assert!((Adam::global_norm(&g) - 200.0).abs() < 1e-9);
        let mut p = ParamStore::new();
        p.insert("a", Tensor::zeros([1, 1, 1, 4]));
        assert!(Adam::new().step(&mut p, &g, 1e-3).is_ok());
        let mut bad = g.clone();
        bad.get_mut("a").unwrap().data_mut()[0] = f64::NAN;
        assert!(Adam::new().step(&mut p, &bad, 1e-3).is_err());
    }
}
