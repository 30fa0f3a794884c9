//! Small layer containers shared by the warp-refinement and photometric
//! networks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{conv2d, conv_transpose2d, Parameter, Scalar, Tensor};

/// Kaiming-style fan-in uniform bound for ReLU stacks.
fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

pub fn uniform_init<E: Scalar>(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<E> {
    (0..n)
        .map(|_| E::from_f64(rng.gen_range(-bound..bound)))
        .collect()
}

pub struct Conv2d<E: Scalar> {
    pub weight: Parameter<E>,
    pub bias: Parameter<E>,
    pub stride: usize,
    pub padding: usize,
}

impl<E: Scalar> Conv2d<E> {
    pub fn kaiming(
        name: &str,
        rng: &mut ChaCha8Rng,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let bound = kaiming_bound(cin * k * k);
        Conv2d {
            weight: Parameter::new(
                format!("{name}.weight"),
                &[cout, cin, k, k],
                uniform_init(rng, cout * cin * k * k, bound),
            ),
            bias: Parameter::new(format!("{name}.bias"), &[cout], vec![E::ZERO; cout]),
            stride,
            padding,
        }
    }

    /// All weights and biases uniform in [-scale, scale].
    pub fn small(
        name: &str,
        rng: &mut ChaCha8Rng,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        scale: f64,
    ) -> Self {
        Conv2d {
            weight: Parameter::new(
                format!("{name}.weight"),
                &[cout, cin, k, k],
                uniform_init(rng, cout * cin * k * k, scale),
            ),
            bias: Parameter::new(
                format!("{name}.bias"),
                &[cout],
                uniform_init(rng, cout, scale),
            ),
            stride,
            padding,
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Tensor<E> {
        conv2d(
            x,
            &self.weight.tensor,
            Some(&self.bias.tensor),
            self.stride,
            self.padding,
        )
    }

    pub fn zero(&mut self) {
        let wn = self.weight.tensor.numel();
        let bn = self.bias.tensor.numel();
        self.weight.load(&vec![E::ZERO; wn]);
        self.bias.load(&vec![E::ZERO; bn]);
    }
}

pub struct ConvTranspose2d<E: Scalar> {
    pub weight: Parameter<E>,
    pub bias: Parameter<E>,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl<E: Scalar> ConvTranspose2d<E> {
    #[allow(clippy::too_many_arguments)]
    pub fn kaiming(
        name: &str,
        rng: &mut ChaCha8Rng,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Self {
        let bound = kaiming_bound(cin * k * k);
        ConvTranspose2d {
            weight: Parameter::new(
                format!("{name}.weight"),
                &[cin, cout, k, k],
                uniform_init(rng, cin * cout * k * k, bound),
            ),
            bias: Parameter::new(format!("{name}.bias"), &[cout], vec![E::ZERO; cout]),
            stride,
            padding,
            output_padding,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn small(
        name: &str,
        rng: &mut ChaCha8Rng,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
        scale: f64,
    ) -> Self {
        ConvTranspose2d {
            weight: Parameter::new(
                format!("{name}.weight"),
                &[cin, cout, k, k],
                uniform_init(rng, cin * cout * k * k, scale),
            ),
            bias: Parameter::new(
                format!("{name}.bias"),
                &[cout],
                uniform_init(rng, cout, scale),
            ),
            stride,
            padding,
            output_padding,
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Tensor<E> {
        conv_transpose2d(
            x,
            &self.weight.tensor,
            Some(&self.bias.tensor),
            self.stride,
            self.padding,
            self.output_padding,
        )
    }

    pub fn zero(&mut self) {
        let wn = self.weight.tensor.numel();
        let bn = self.bias.tensor.numel();
        self.weight.load(&vec![E::ZERO; wn]);
        self.bias.load(&vec![E::ZERO; bn]);
    }
}
