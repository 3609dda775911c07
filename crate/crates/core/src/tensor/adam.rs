use super::{Gradients, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept per parameter tensor.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    pub config: AdamConfig,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    step: u64,
}

impl<F: Scalar> Adam<F> {
    pub fn new(config: AdamConfig, store: &ParamStore<F>) -> Self {
        let zeros = || store.iter().map(|(_, t)| vec![F::zero(); t.len()]).collect();
        Adam {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, store: &mut ParamStore<F>, grads: &Gradients<F>) -> Result<()> {
        if grads.grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::shape(
                "adam_update",
                &[store.len()],
                &[grads.grads.len(), self.m.len()],
            ));
        }
        for id in store.ids() {
            let n = store.get(id).len();
            let (gl, ml, vl) = (grads.get(id).len(), self.m[id.0].len(), self.v[id.0].len());
            if gl != n || ml != n || vl != n {
                return Err(Error::shape("adam_update", &[n], &[gl, ml, vl]));
            }
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let (one_b1, one_b2) = (F::lit(1.0 - c.beta1), F::lit(1.0 - c.beta2));
        let bc1 = F::lit(1.0 - c.beta1.powf(self.step as f64));
        let bc2 = F::lit(1.0 - c.beta2.powf(self.step as f64));
        let (lr, eps) = (F::lit(c.lr), F::lit(c.eps));
        for id in store.ids() {
            let g = grads.get(id);
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Moments and step counter as named tensors for checkpointing.
    pub fn export(&self, store: &ParamStore<F>) -> Vec<(String, Tensor<F>)> {
        let mut out = Vec::with_capacity(2 * store.len() + 1);
        for (i, (name, t)) in store.iter().enumerate() {
            let [r, c] = t.shape();
            out.push((format!("adam.m/{name}"), Tensor::from_vec(r, c, self.m[i].clone()).expect("sized")));
            out.push((format!("adam.v/{name}"), Tensor::from_vec(r, c, self.v[i].clone()).expect("sized")));
        }
        // split into two exactly-representable halves so f32 keeps the count
        let lo = (self.step & 0xFFFF) as f64;
        let hi = (self.step >> 16) as f64;
        out.push(("adam.step".into(), Tensor::row_vector(vec![F::lit(lo), F::lit(hi)])));
        out
    }

    pub fn import(&mut self, store: &ParamStore<F>, records: &mut Vec<(String, Tensor<F>)>) -> Result<()> {
        let mut take = |name: &str| -> Result<Tensor<F>> {
            let pos = records
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::Incompatible {
                    missing: vec![name.to_string()],
                    unexpected: vec![],
                })?;
            Ok(records.swap_remove(pos).1)
        };
        for (i, (name, t)) in store.iter().enumerate() {
            let m = take(&format!("adam.m/{name}"))?;
            let v = take(&format!("adam.v/{name}"))?;
            if m.shape() != t.shape() || v.shape() != t.shape() {
                return Err(Error::shape("adam import", &t.shape(), &m.shape()));
            }
            self.m[i] = m.into_data();
            self.v[i] = v.into_data();
        }
        let s = take("adam.step")?;
        let d = s.data();
        if d.len() != 2 {
            return Err(Error::Format("adam.step must hold two values".into()));
        }
        self.step = (d[0].as_f64() as u64) | ((d[1].as_f64() as u64) << 16);
        Ok(())
    }
}

/// Scale gradients so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<F: Scalar>(grads: &mut Gradients<F>, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(F::lit(max_norm / norm));
    }
    norm
}
