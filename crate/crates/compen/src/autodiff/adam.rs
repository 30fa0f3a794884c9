use super::tensor::{Scalar, Tensor};

/// Named learnable tensor with Adam moment buffers.
pub struct Parameter<E: Scalar> {
    pub name: String,
    pub tensor: Tensor<E>,
    adam_m: Vec<E>,
    adam_v: Vec<E>,
    step_count: u64,
}

impl<E: Scalar> Parameter<E> {
    pub fn new(name: impl Into<String>, shape: &[usize], data: Vec<E>) -> Self {
        let tensor = Tensor::leaf(shape, data);
        let n = tensor.numel();
        Parameter {
            name: name.into(),
            tensor,
            adam_m: vec![E::ZERO; n],
            adam_v: vec![E::ZERO; n],
            step_count: 0,
        }
    }

    pub fn zero_grad(&self) {
        self.tensor.zero_grad();
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Replaces the values and resets optimizer state.
    pub fn load(&mut self, data: &[E]) {
        self.tensor.set_values(data);
        self.adam_m.fill(E::ZERO);
        self.adam_v.fill(E::ZERO);
        self.step_count = 0;
    }

    pub fn cast<F: Scalar>(&self) -> Parameter<F> {
        Parameter::new(
            self.name.clone(),
            self.tensor.shape(),
            self.tensor.cast::<F>().values(),
        )
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// One bias-corrected Adam update over the populated gradients.
///
/// The weight decay is decoupled: parameters shrink by `lr * wd * p`
/// independently of the moment normalization, so a zero-gradient parameter
/// decays by exactly that amount per step.
pub fn adam_step<E: Scalar>(params: &mut [&mut Parameter<E>], cfg: &AdamConfig) {
    for p in params.iter_mut() {
        let grad = match p.tensor.grad() {
            Some(g) => g,
            None => vec![E::ZERO; p.tensor.numel()],
        };
        p.step_count += 1;
        let t = p.step_count as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let (m, v) = (&mut p.adam_m, &mut p.adam_v);
        p.tensor.update_values(|data| {
            for i in 0..data.len() {
                let g = grad[i].to_f64();
                let mi = cfg.beta1 * m[i].to_f64() + (1.0 - cfg.beta1) * g;
                let vi = cfg.beta2 * v[i].to_f64() + (1.0 - cfg.beta2) * g * g;
                m[i] = E::from_f64(mi);
                v[i] = E::from_f64(vi);
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                let mut x = data[i].to_f64();
                x -= cfg.lr * cfg.weight_decay * x;
                x -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
                data[i] = E::from_f64(x);
            }
        });
    }
}
