//! Differentiable image reconstruction losses.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{conv2d, Scalar, Tensor};
use crate::imaging::{gaussian_window_11, SSIM_C1, SSIM_C2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    L1,
    L2,
    Ssim,
    L1Ssim,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LossKind::L1 => "l1",
            LossKind::L2 => "l2",
            LossKind::Ssim => "ssim",
            LossKind::L1Ssim => "l1+ssim",
        };
        f.write_str(s)
    }
}

impl FromStr for LossKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "l1" => Ok(LossKind::L1),
            "l2" => Ok(LossKind::L2),
            "ssim" => Ok(LossKind::Ssim),
            "l1+ssim" | "l1_ssim" => Ok(LossKind::L1Ssim),
            other => Err(format!(
                "unknown loss kind {other:?} (expected l1, l2, ssim or l1+ssim)"
            )),
        }
    }
}

/// Mean structural dissimilarity, 1 - mean(SSIM map), over all fully valid
/// 11x11 windows; shares the Gaussian kernel with the reference metric.
pub fn ssim_loss<E: Scalar>(pred: &Tensor<E>, target: &Tensor<E>) -> Tensor<E> {
    assert_eq!(pred.shape(), target.shape(), "ssim_loss: shape mismatch");
    let (n, c, h, w) = (
        pred.shape()[0],
        pred.shape()[1],
        pred.shape()[2],
        pred.shape()[3],
    );
    assert!(h >= 11 && w >= 11, "ssim_loss: {h}x{w} smaller than the window");
    let kern = Tensor::<E>::new(
        &[1, 1, 11, 11],
        gaussian_window_11().iter().map(|&v| E::from_f64(v)).collect(),
    );
    let x = pred.reshape(&[n * c, 1, h, w]);
    let y = target.reshape(&[n * c, 1, h, w]);
    let mu_x = conv2d(&x, &kern, None, 1, 0);
    let mu_y = conv2d(&y, &kern, None, 1, 0);
    let xx = conv2d(&x.mul(&x), &kern, None, 1, 0);
    let yy = conv2d(&y.mul(&y), &kern, None, 1, 0);
    let xy = conv2d(&x.mul(&y), &kern, None, 1, 0);
    let mu_xy = mu_x.mul(&mu_y);
    let var_x = xx.sub(&mu_x.mul(&mu_x));
    let var_y = yy.sub(&mu_y.mul(&mu_y));
    let cov = xy.sub(&mu_xy);
    let c1 = E::from_f64(SSIM_C1);
    let c2 = E::from_f64(SSIM_C2);
    let num = mu_xy
        .mul_scalar(E::from_f64(2.0))
        .add_scalar(c1)
        .mul(&cov.mul_scalar(E::from_f64(2.0)).add_scalar(c2));
    let den = mu_x
        .mul(&mu_x)
        .add(&mu_y.mul(&mu_y))
        .add_scalar(c1)
        .mul(&var_x.add(&var_y).add_scalar(c2));
    num.div(&den).mean().mul_scalar(E::from_f64(-1.0)).add_scalar(E::ONE)
}

/// Image reconstruction loss of the selected kind; inputs are [N,C,H,W].
pub fn loss<E: Scalar>(pred: &Tensor<E>, target: &Tensor<E>, kind: LossKind) -> Tensor<E> {
    assert_eq!(pred.shape(), target.shape(), "loss: shape mismatch");
    match kind {
        LossKind::L1 => pred.sub(target).abs().mean(),
        LossKind::L2 => {
            let d = pred.sub(target);
            d.mul(&d).mean()
        }
        LossKind::Ssim => ssim_loss(pred, target),
        LossKind::L1Ssim => {
            let l1 = pred.sub(target).abs().mean();
            l1.add(&ssim_loss(pred, target))
        }
    }
}
