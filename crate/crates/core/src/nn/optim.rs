use super::{Param, Real};

/// Adaptive-moment optimizer with the usual defaults
/// (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Apply one update from the accumulated gradients, then clear them.
    /// Parameters must be passed in the same order on every call.
    pub fn step(&mut self, params: Vec<&mut Param<T>>) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "optimizer parameter list changed");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - self.beta1), T::lit(1.0 - self.beta2));
        let step_size = T::lit(self.lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(self.eps);
        for (k, p) in params.into_iter().enumerate() {
            if p.frozen {
                continue;
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + one_b1 * g;
                v[i] = b2 * v[i] + one_b2 * g * g;
                p.value[i] -= step_size * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
            }
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic() {
        let mut p = Param::<f64>::zeros("x", vec![2]);
        p.value = vec![3.0, -2.0];
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            p.grad = p.value.iter().map(|v| 2.0 * v).collect();
            opt.step(vec![&mut p]);
        }
        assert!(p.value.iter().all(|v| v.abs() < 1e-2), "{:?}", p.value);
    }

    #[test]
    fn frozen_untouched() {
        let mut p = Param::<f32>::zeros("x", vec![3]);
        p.value = vec![1.0, 2.0, 3.0];
        p.frozen = true;
        p.grad = vec![1.0; 3];
        let mut opt = Adam::new(0.1);
        opt.step(vec![&mut p]);
        assert_eq!(p.value, vec![1.0, 2.0, 3.0]);
    }
}
