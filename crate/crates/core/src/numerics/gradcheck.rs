/// Largest relative error between the analytic gradient returned by `f` at
/// `x` and central differences `(f(x+εe) − f(x−εe)) / 2ε`.
///
/// `f` returns `(value, gradient)`. The relative error of each coordinate
/// uses `max(|analytic|, |numeric|, 1e-8)` as denominator.
pub fn finite_diff_check<F>(f: F, x: &[f64], eps: f64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(x);
    assert_eq!(analytic.len(), x.len(), "gradient length must match x");
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for j in 0..x.len() {
        probe[j] = x[j] + eps;
        let plus = f(&probe).0;
        probe[j] = x[j] - eps;
        let minus = f(&probe).0;
        probe[j] = x[j];
        let numeric = (plus - minus) / (2.0 * eps);
        let denom = analytic[j].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[j] - numeric).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let w = [0.5, -2.0, 3.25];
        let f = |x: &[f64]| (x.iter().zip(&w).map(|(a, b)| a * b).sum(), w.to_vec());
        assert!(finite_diff_check(f, &[1.0, 2.0, -1.0], 1e-5) < 1e-9);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let f = |x: &[f64]| (x[0] * x[0], vec![x[0]]);
        assert!(finite_diff_check(f, &[1.0], 1e-5) > 0.4);
    }
}
