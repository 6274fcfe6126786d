//! Adam optimizer with standard defaults, keyed by parameter path so the
//! moment buffers survive independent of model structure.

use std::collections::HashMap;

use ndarray::ArrayD;

use super::Param;

pub struct Adam {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u64,
    moments: HashMap<String, (ArrayD<f32>, ArrayD<f32>)>,
}

impl Adam {
    pub fn new() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Begin a step; returns the bias-correction factors for this step.
    fn begin(&mut self) -> (f32, f32) {
        self.step += 1;
        let t = self.step as i32;
        (
            1.0 - self.beta1.powi(t),
            1.0 - self.beta2.powi(t),
        )
    }

    /// Apply one update across all parameters. `visit` must call the given
    /// closure once per parameter with a stable path, in a stable order.
    pub fn step_with(
        &mut self,
        lr: f32,
        visit: impl FnOnce(&mut dyn FnMut(&str, &mut Param)),
    ) {
        let (bc1, bc2) = self.begin();
        let (beta1, beta2, eps) = (self.beta1, self.beta2, self.eps);
        let moments = &mut self.moments;
        visit(&mut |path, param| {
            let (m, v) = moments
                .entry(path.to_string())
                .or_insert_with(|| {
                    (
                        ArrayD::zeros(param.value.raw_dim()),
                        ArrayD::zeros(param.value.raw_dim()),
                    )
                });
            azip_update(m, v, param, beta1, beta2, bc1, bc2, eps, lr);
        });
    }
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new()
    }
}

#[allow(clippy::too_many_arguments)]
fn azip_update(
    m: &mut ArrayD<f32>,
    v: &mut ArrayD<f32>,
    param: &mut Param,
    beta1: f32,
    beta2: f32,
    bc1: f32,
    bc2: f32,
    eps: f32,
    lr: f32,
) {
    let ms = m.as_slice_mut().expect("contiguous moment");
    let vs = v.as_slice_mut().expect("contiguous moment");
    let ps = param.value.as_slice_mut().expect("contiguous param");
    let gs = param.grad.as_slice().expect("contiguous grad");
    for i in 0..ps.len() {
        let g = gs[i];
        ms[i] = beta1 * ms[i] + (1.0 - beta1) * g;
        vs[i] = beta2 * vs[i] + (1.0 - beta2) * g * g;
        let m_hat = ms[i] / bc1;
        let v_hat = vs[i] / bc2;
        ps[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction, the first Adam step is ~lr * sign(grad).
        let mut p = Param::new(ndarray::ArrayD::zeros(IxDyn(&[2])));
        p.grad[IxDyn(&[0])] = 3.0;
        p.grad[IxDyn(&[1])] = -0.25;
        let mut adam = Adam::new();
        adam.step_with(0.1, |f| f("p", &mut p));
        assert!((p.value[IxDyn(&[0])] + 0.1).abs() < 1e-4);
        assert!((p.value[IxDyn(&[1])] - 0.1).abs() < 1e-4);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Param::new(ndarray::ArrayD::from_elem(IxDyn(&[1]), 5.0f32));
        let mut adam = Adam::new();
        for _ in 0..2000 {
            let x = p.value[IxDyn(&[0])];
            p.grad[IxDyn(&[0])] = 2.0 * (x - 1.5);
            adam.step_with(0.05, |f| f("p", &mut p));
            p.zero_grad();
        }
        assert!((p.value[IxDyn(&[0])] - 1.5).abs() < 1e-2);
    }
}
