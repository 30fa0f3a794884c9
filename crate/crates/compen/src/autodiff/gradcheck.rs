//! Central finite-difference gradient checking, run at f64.

use super::tensor::{backward, Tensor};

pub const FD_EPSILON: f64 = 1e-3;
pub const FD_MAX_REL_ERR: f64 = 1e-4;
pub const FD_ABS_FLOOR: f64 = 1e-6;

/// Worst relative error between analytic and finite-difference gradients.
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Checks `d loss / d inputs[i]` against central finite differences for the
/// listed coordinates of each input. `f` must rebuild the graph from the
/// same leaves on every call.
pub fn check_gradients<F>(
    f: F,
    inputs: &[Tensor<f64>],
    coords: &[Vec<usize>],
) -> GradCheckReport
where
    F: Fn(&[Tensor<f64>]) -> Tensor<f64>,
{
    assert_eq!(inputs.len(), coords.len());
    for t in inputs {
        t.zero_grad();
    }
    let loss = f(inputs);
    assert_eq!(loss.numel(), 1, "gradient check requires a scalar loss");
    backward(&loss);
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for (i, input) in inputs.iter().enumerate() {
        for &j in &coords[i] {
            let orig = input.value_at(j);
            let mut probe = input.values();
            probe[j] = orig + FD_EPSILON;
            input.set_values(&probe);
            let up = f(inputs).item();
            probe[j] = orig - FD_EPSILON;
            input.set_values(&probe);
            let down = f(inputs).item();
            probe[j] = orig;
            input.set_values(&probe);

            let numeric = (up - down) / (2.0 * FD_EPSILON);
            let a = analytic[i][j];
            let denom = a.abs().max(numeric.abs()).max(FD_ABS_FLOOR);
            let rel = (a - numeric).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
            checked += 1;
        }
    }
    GradCheckReport {
        max_rel_err: max_rel,
        checked,
    }
}

/// Convenience: checks every coordinate of every input.
pub fn check_all_gradients<F>(f: F, inputs: &[Tensor<f64>]) -> GradCheckReport
where
    F: Fn(&[Tensor<f64>]) -> Tensor<f64>,
{
    let coords: Vec<Vec<usize>> = inputs.iter().map(|t| (0..t.numel()).collect()).collect();
    check_gradients(f, inputs, &coords)
}
