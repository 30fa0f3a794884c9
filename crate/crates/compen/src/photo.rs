//! Photometric compensation network: a siamese encoder shared between the
//! warped surface image and the input image, feature subtraction at three
//! levels, and a decoder with low-level skip paths. The surface branch can
//! be baked to fixed biases for inference.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{adam_step, backward, concat_batch, no_grad, AdamConfig, Parameter, Scalar, Tensor};
use crate::error::TrainError;
use crate::imaging::ImageRGB;
use crate::loss::{loss, LossKind};
use crate::nn::{Conv2d, ConvTranspose2d};

/// Which of the three surface-feature subtractions are active. `s1` and
/// `s2` are the low-level ones, `s3` the deepest.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SkipEnable {
    pub s1: bool,
    pub s2: bool,
    pub s3: bool,
}

impl SkipEnable {
    pub const ALL: SkipEnable = SkipEnable {
        s1: true,
        s2: true,
        s3: true,
    };
    pub const NONE: SkipEnable = SkipEnable {
        s1: false,
        s2: false,
        s3: false,
    };
}

impl Default for SkipEnable {
    fn default() -> Self {
        SkipEnable::ALL
    }
}

/// Cached encoder feature maps of the warped surface image at the three
/// subtraction levels.
pub struct SurfaceBiases<E: Scalar> {
    pub f1: Tensor<E>,
    pub f2: Tensor<E>,
    pub f3: Tensor<E>,
}

pub struct PhotoNet<E: Scalar> {
    pub e1: Conv2d<E>,
    pub e2: Conv2d<E>,
    pub e3: Conv2d<E>,
    pub d1: ConvTranspose2d<E>,
    pub d2: ConvTranspose2d<E>,
    pub d3: Conv2d<E>,
    pub j1: Conv2d<E>,
    pub j2: Conv2d<E>,
    pub k2: Conv2d<E>,
}

impl<E: Scalar> PhotoNet<E> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = &mut rng;
        let mut net = PhotoNet {
            e1: Conv2d::kaiming("photo.e1", r, 3, 32, 3, 2, 1),
            e2: Conv2d::kaiming("photo.e2", r, 32, 64, 3, 2, 1),
            e3: Conv2d::kaiming("photo.e3", r, 64, 128, 3, 1, 1),
            d1: ConvTranspose2d::kaiming("photo.d1", r, 128, 64, 3, 2, 1, 1),
            d2: ConvTranspose2d::kaiming("photo.d2", r, 64, 32, 2, 2, 0, 0),
            d3: Conv2d::kaiming("photo.d3", r, 32, 3, 3, 1, 1),
            j1: Conv2d::kaiming("photo.j1", r, 32, 64, 3, 1, 1),
            j2: Conv2d::kaiming("photo.j2", r, 64, 128, 3, 1, 1),
            k2: Conv2d::kaiming("photo.k2", r, 3, 3, 3, 1, 1),
        };
        // Residual output head: the image-level skip starts near identity
        // and the last decoder conv small, so the fresh net maps inputs to
        // roughly themselves instead of into the clamp's dead corners.
        let mut k2w: Vec<E> = net
            .k2
            .weight
            .tensor
            .values()
            .iter()
            .map(|&v| v * E::from_f64(0.25))
            .collect();
        for c in 0..3 {
            k2w[(c * 3 + c) * 9 + 4] += E::ONE;
        }
        net.k2.weight.load(&k2w);
        let d3w: Vec<E> = net
            .d3
            .weight
            .tensor
            .values()
            .iter()
            .map(|&v| v * E::from_f64(0.1))
            .collect();
        net.d3.weight.load(&d3w);
        net
    }

    /// A net whose forward is exactly the identity on its input: all
    /// weights zero except a unit center tap in the image-level skip.
    pub fn identity() -> Self {
        let mut net = Self::new(0);
        for p in net.parameters_mut() {
            let n = p.tensor.numel();
            p.load(&vec![E::ZERO; n]);
        }
        let mut k2w = vec![E::ZERO; 3 * 3 * 9];
        for c in 0..3 {
            k2w[(c * 3 + c) * 9 + 4] = E::ONE;
        }
        net.k2.weight.load(&k2w);
        net
    }

    /// Multi-level feature pyramid of one image batch. Both branches use
    /// this single code path, so weight sharing is structural.
    pub fn encode(&self, img: &Tensor<E>) -> (Tensor<E>, Tensor<E>, Tensor<E>) {
        assert_eq!(img.shape().len(), 4, "encode: expected [N,3,H,W]");
        assert_eq!(img.shape()[1], 3, "encode: expected 3 channels");
        assert!(
            img.shape()[2] % 4 == 0 && img.shape()[3] % 4 == 0,
            "encode: spatial size {}x{} not divisible by 4",
            img.shape()[2],
            img.shape()[3]
        );
        let f1 = self.e1.forward(img).relu();
        let f2 = self.e2.forward(&f1).relu();
        let f3 = self.e3.forward(&f2).relu();
        (f1, f2, f3)
    }

    /// Backbone with surface features subtracted at the enabled levels.
    /// Surface features may be batch-1 while the input is batched.
    pub fn forward_with_features(
        &self,
        x: &Tensor<E>,
        surface: &SurfaceBiases<E>,
        skips: SkipEnable,
    ) -> Tensor<E> {
        let (x1, x2, x3) = self.encode(x);
        let h1 = if skips.s1 { x1.sub(&surface.f1) } else { x1 };
        let h2 = if skips.s2 { x2.sub(&surface.f2) } else { x2 };
        let h3 = if skips.s3 { x3.sub(&surface.f3) } else { x3 };
        let m = h3.add(&self.j2.forward(&h2));
        let u = self.d1.forward(&m).relu();
        let u = u.add(&self.j1.forward(&h1));
        let u = self.d2.forward(&u).relu();
        let y = self.d3.forward(&u).add(&self.k2.forward(x));
        y.clamp01()
    }

    /// Two-branch forward from the warped surface image.
    pub fn forward(&self, x: &Tensor<E>, surface_img: &Tensor<E>, skips: SkipEnable) -> Tensor<E> {
        let (f1, f2, f3) = self.encode(surface_img);
        self.forward_with_features(x, &SurfaceBiases { f1, f2, f3 }, skips)
    }

    /// Caches the surface branch so inference needs only the backbone.
    pub fn bake_surface(&self, surface_img: &Tensor<E>) -> SurfaceBiases<E> {
        no_grad(|| {
            let (f1, f2, f3) = self.encode(surface_img);
            SurfaceBiases { f1, f2, f3 }
        })
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<E>> {
        vec![
            &mut self.e1.weight,
            &mut self.e1.bias,
            &mut self.e2.weight,
            &mut self.e2.bias,
            &mut self.e3.weight,
            &mut self.e3.bias,
            &mut self.d1.weight,
            &mut self.d1.bias,
            &mut self.d2.weight,
            &mut self.d2.bias,
            &mut self.d3.weight,
            &mut self.d3.bias,
            &mut self.j1.weight,
            &mut self.j1.bias,
            &mut self.j2.weight,
            &mut self.j2.bias,
            &mut self.k2.weight,
            &mut self.k2.bias,
        ]
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor<E>)> {
        let params: Vec<&Parameter<E>> = vec![
            &self.e1.weight,
            &self.e1.bias,
            &self.e2.weight,
            &self.e2.bias,
            &self.e3.weight,
            &self.e3.bias,
            &self.d1.weight,
            &self.d1.bias,
            &self.d2.weight,
            &self.d2.bias,
            &self.d3.weight,
            &self.d3.bias,
            &self.j1.weight,
            &self.j1.bias,
            &self.j2.weight,
            &self.j2.bias,
            &self.k2.weight,
            &self.k2.bias,
        ];
        params
            .into_iter()
            .map(|p| (p.name.clone(), p.tensor.clone()))
            .collect()
    }

    /// Total learnable scalar count.
    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Training record entry: iteration index and loss value.
pub type TrainCurve = Vec<(usize, f64)>;

/// Photometric pre-initialization: trains the net as an identity
/// autoencoder with a zero surface input, so compensation starts from a
/// reproduce-the-input prior.
pub fn pre_init(
    net: &mut PhotoNet<f32>,
    images: &[ImageRGB],
    iterations: usize,
    batch: usize,
    seed: u64,
) -> Result<TrainCurve, TrainError> {
    if images.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let tensors: Vec<Tensor<f32>> = images.iter().map(|im| im.to_tensor()).collect();
    let (h, w) = (images[0].height(), images[0].width());
    let zero_surface = Tensor::<f32>::zeros(&[1, 3, h, w]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = AdamConfig {
        lr: 1e-3,
        weight_decay: 1e-4,
        ..Default::default()
    };
    let mut curve = TrainCurve::new();
    let mut order: Vec<usize> = (0..tensors.len()).collect();
    let mut cursor = order.len();
    for iter in 0..iterations {
        let mut parts = Vec::with_capacity(batch.min(tensors.len()));
        for _ in 0..batch.min(tensors.len()) {
            if cursor >= order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            parts.push(tensors[order[cursor]].clone());
            cursor += 1;
        }
        let x = concat_batch(&parts);
        let (f1, f2, f3) = net.encode(&zero_surface);
        let pred = net.forward_with_features(&x, &SurfaceBiases { f1, f2, f3 }, SkipEnable::ALL);
        let l = loss(&pred, &x, LossKind::L1Ssim);
        let lv = l.item() as f64;
        if !lv.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                iteration: iter,
                last_checkpoint: 0,
            });
        }
        for p in net.parameters_mut() {
            p.zero_grad();
        }
        backward(&l);
        adam_step(&mut net.parameters_mut(), &cfg);
        curve.push((iter, lv));
    }
    Ok(curve)
}
