//! Dense kernels for the models: shaped arrays, the neural tensor layer,
//! first-order optimizers and a finite-difference gradient checker.

mod gradcheck;
mod ntl;
mod optim;
mod tensor;

pub use gradcheck::finite_diff_check;
pub use ntl::{ntl_backward, ntl_forward, NtlForward, NtlGradients, NtlParams};
pub use optim::{apply_update, OptimizerMode, OptimizerState, ParamBlock};
pub use tensor::Tensor;

/// Logistic function, stable for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `-ln σ(x)`, the per-triple pairwise ranking loss.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    softplus(-x)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_and_loss_edges() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) <= 1.0 && sigmoid(-800.0) >= 0.0);
        assert!((neg_log_sigmoid(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((neg_log_sigmoid(3.0) + sigmoid(3.0).ln()).abs() < 1e-14);
        assert!(neg_log_sigmoid(30.0) > 0.0);
        assert!((neg_log_sigmoid(-50.0) - 50.0).abs() < 1e-12);
    }
}
