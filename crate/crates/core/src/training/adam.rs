use crate::error::{Error, Result};
use crate::nn::{ParamKind, Params};
use crate::tensor::{c64, ComplexTensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Bias-corrected Adam. Real and imaginary parts are separate coordinates,
/// so the second moment stores `(re^2, im^2)` averages in one complex tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub step: u64,
    pub m: Vec<ComplexTensor>,
    pub v: Vec<ComplexTensor>,
}

impl Adam {
    pub fn new<P: Params>(params: &P, lr: f64) -> Self {
        let mut m = Vec::new();
        params.visit("", &mut |_, t, _| m.push(ComplexTensor::zeros(t.dims())));
        Adam {
            lr,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn step<P: Params>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let mut gs = Vec::with_capacity(self.m.len());
        grads.visit("", &mut |_, t, _| gs.push(t.clone()));
        if gs.len() != self.m.len() {
            return Err(Error::config(format!(
                "{} gradient tensors for {} optimizer slots",
                gs.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        let lr = self.lr;
        let mut i = 0;
        let mut err = None;
        let (ms, vs) = (&mut self.m, &mut self.v);
        params.visit_mut("", &mut |name, p, kind| {
            let g = &gs[i];
            let (m, v) = (&mut ms[i], &mut vs[i]);
            i += 1;
            if p.dims() != g.dims() || p.dims() != m.dims() {
                err.get_or_insert_with(|| Error::shape(p.dims(), g.dims(), format!("gradient of {name}")));
                return;
            }
            let update = |m: &mut f64, v: &mut f64, g: f64| {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                lr * (*m / bc1) / ((*v / bc2).sqrt() + EPSILON)
            };
            for (((p, g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                let dre = update(&mut m.re, &mut v.re, g.re);
                let dim = match kind {
                    ParamKind::Complex => update(&mut m.im, &mut v.im, g.im),
                    ParamKind::Real => 0.0,
                };
                *p -= c64::new(dre, dim);
            }
        });
        err.map_or(Ok(()), Err)
    }
}
