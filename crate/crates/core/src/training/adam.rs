use crate::model::{Checkpoint, Param};

pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments for one network, flattened over its parameters in
/// `params_mut` order. Allocated on the first step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Adam {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn step(&mut self, params: Vec<&mut Param>, lr: f64, beta1: f64, beta2: f64) {
        let total: usize = params.iter().map(|p| p.len()).sum();
        if self.m.len() != total {
            self.m = vec![0.0; total];
            self.v = vec![0.0; total];
        }
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let mut off = 0;
        for p in params {
            let m = &mut self.m[off..off + p.len()];
            let v = &mut self.v[off..off + p.len()];
            for (((w, &g), m), v) in p.value.iter_mut().zip(&p.grad).zip(m).zip(v) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            }
            off += p.len();
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub generator: Adam,
    pub discriminator: Adam,
}

impl OptimizerState {
    pub(crate) fn to_extras(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        for (name, adam) in [("generator", &self.generator), ("discriminator", &self.discriminator)] {
            out.push((format!("adam.{name}.t"), vec![adam.t as f64]));
            out.push((format!("adam.{name}.m"), adam.m.clone()));
            out.push((format!("adam.{name}.v"), adam.v.clone()));
        }
        out
    }

    pub(crate) fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, String> {
        let g_len = ckpt.params.generator.param_count();
        let d_len = ckpt.params.discriminator.param_count();
        let load = |name: &str, len: usize| -> Result<Adam, String> {
            let Some(t) = ckpt.extra(&format!("adam.{name}.t")) else {
                return Ok(Adam::default());
            };
            let m = ckpt.extra(&format!("adam.{name}.m")).unwrap_or_default().to_vec();
            let v = ckpt.extra(&format!("adam.{name}.v")).unwrap_or_default().to_vec();
            let t = t.first().copied().unwrap_or(0.0);
            if t > 0.0 && (m.len() != len || v.len() != len) {
                return Err(format!("{name} optimizer moments do not match the model"));
            }
            Ok(Adam { t: t as u64, m, v })
        };
        Ok(OptimizerState {
            generator: load("generator", g_len)?,
            discriminator: load("discriminator", d_len)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first update is lr * sign(g).
        let mut p = Param::constant(vec![3], 1.0);
        p.grad = vec![0.5, -2.0, 0.0];
        let mut adam = Adam::default();
        adam.step(vec![&mut p], 0.1, 0.5, 0.999);
        assert!((p.value[0] - 0.9).abs() < 1e-6);
        assert!((p.value[1] - 1.1).abs() < 1e-6);
        assert_eq!(p.value[2], 1.0);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn zero_lr_is_a_no_op() {
        let mut p = Param::constant(vec![2], 0.3);
        p.grad = vec![1.0, -1.0];
        Adam::default().step(vec![&mut p], 0.0, 0.5, 0.999);
        assert_eq!(p.value, vec![0.3, 0.3]);
    }
}
