use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sigmoid, Tensor};
use crate::error::{Error, Result};

/// Weights of one neural tensor layer scoring a pair of `d`-vectors:
///
/// `σ(hᵀ z)`, `z_m = e_uᵀ W1[m] e_i + (W2 [e_u; e_i])_m + b_m`, `m = 0..k`.
///
/// `w1` is stored slice-major with shape `[k, d, d]`, `w2` as `[k, 2d]`.
/// Cached forward pass of one layer evaluation.
#[derive(Clone, Debug)]
pub struct NtlForward {
    pub z: Vec<f64>,
    pub out: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNtl")]
pub struct NtlParams {
    pub w1: Tensor,
    pub w2: Tensor,
    pub b: Tensor,
    pub h: Tensor,
}

#[derive(Deserialize)]
struct RawNtl {
    w1: Tensor,
    w2: Tensor,
    b: Tensor,
    h: Tensor,
}

impl TryFrom<RawNtl> for NtlParams {
    type Error = Error;

    fn try_from(raw: RawNtl) -> Result<Self> {
        let p = NtlParams {
            w1: raw.w1,
            w2: raw.w2,
            b: raw.b,
            h: raw.h,
        };
        p.validate()?;
        Ok(p)
    }
}

impl NtlParams {
    pub fn zeros(d: usize, k: usize) -> Self {
        NtlParams {
            w1: Tensor::zeros(&[k, d, d]),
            w2: Tensor::zeros(&[k, 2 * d]),
            b: Tensor::zeros(&[k]),
            h: Tensor::zeros(&[k]),
        }
    }

    /// Weights from `uniform(-1/√d, 1/√d)`, bias zero.
    pub fn init(d: usize, k: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        NtlParams {
            w1: Tensor::uniform(&[k, d, d], bound, rng),
            w2: Tensor::uniform(&[k, 2 * d], bound, rng),
            b: Tensor::zeros(&[k]),
            h: Tensor::uniform(&[k], bound, rng),
        }
    }

    pub fn d(&self) -> usize {
        self.w1.shape()[1]
    }

    pub fn k(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn validate(&self) -> Result<()> {
        let (k, d) = match self.w1.shape() {
            &[k, d, d2] if d == d2 && k >= 1 && d >= 1 => (k, d),
            _ => {
                return Err(Error::Config(format!(
                    "w1 must have shape [k, d, d] with k, d >= 1, got {:?}",
                    self.w1.shape()
                )))
            }
        };
        let checks: [(&'static str, &Tensor, Vec<usize>); 3] = [
            ("w2", &self.w2, vec![k, 2 * d]),
            ("b", &self.b, vec![k]),
            ("h", &self.h, vec![k]),
        ];
        for (name, t, shape) in checks {
            if t.shape() != shape.as_slice() {
                return Err(Error::Config(format!(
                    "{name} must have shape {shape:?}, got {:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    fn check_inputs(&self, e_u: &[f64], e_i: &[f64]) -> Result<()> {
        let d = self.d();
        for (what, v) in [("e_u", e_u), ("e_i", e_i)] {
            if v.len() != d {
                return Err(Error::Dimension {
                    what,
                    expected: d,
                    got: v.len(),
                });
            }
        }
        Ok(())
    }

    /// The pre-projection vector `z` (length `k`).
    pub fn pre_activation(&self, e_u: &[f64], e_i: &[f64]) -> Vec<f64> {
        let (d, k) = (self.d(), self.k());
        let w1 = self.w1.data();
        let w2 = self.w2.data();
        let mut z = self.b.data().to_vec();
        for (m, zm) in z.iter_mut().enumerate() {
            let slice = &w1[m * d * d..(m + 1) * d * d];
            let mut acc = 0.0;
            for (a, &ua) in e_u.iter().enumerate() {
                let row = &slice[a * d..(a + 1) * d];
                acc += ua * row.iter().zip(e_i).map(|(w, x)| w * x).sum::<f64>();
            }
            let lin = &w2[m * 2 * d..(m + 1) * 2 * d];
            acc += lin[..d].iter().zip(e_u).map(|(w, x)| w * x).sum::<f64>();
            acc += lin[d..].iter().zip(e_i).map(|(w, x)| w * x).sum::<f64>();
            *zm += acc;
        }
        debug_assert_eq!(z.len(), k);
        z
    }

    /// Layer output in `(0, 1)`; inputs are not shape-checked.
    pub fn score(&self, e_u: &[f64], e_i: &[f64]) -> f64 {
        let z = self.pre_activation(e_u, e_i);
        sigmoid(super::dot(self.h.data(), &z))
    }

    /// Adds `upstream · ∂out/∂θ` to `grads` and the embedding gradients to
    /// `de_u` / `de_i`. Returns the forward output.
    pub fn accumulate_backward(
        &self,
        e_u: &[f64],
        e_i: &[f64],
        upstream: f64,
        grads: &mut NtlGradients,
        de_u: &mut [f64],
        de_i: &mut [f64],
    ) -> f64 {
        let fwd = self.forward(e_u, e_i);
        self.backward(e_u, e_i, &fwd, upstream, grads, de_u, de_i);
        fwd.out
    }

    /// Forward pass keeping the pre-activations for a later [`Self::backward`].
    pub fn forward(&self, e_u: &[f64], e_i: &[f64]) -> NtlForward {
        let z = self.pre_activation(e_u, e_i);
        let out = sigmoid(super::dot(self.h.data(), &z));
        NtlForward { z, out }
    }

    /// Same as [`Self::accumulate_backward`] but reuses a cached forward pass.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        e_u: &[f64],
        e_i: &[f64],
        fwd: &NtlForward,
        upstream: f64,
        grads: &mut NtlGradients,
        de_u: &mut [f64],
        de_i: &mut [f64],
    ) {
        let d = self.d();
        let (z, out) = (&fwd.z, fwd.out);
        let h = self.h.data();
        let g = upstream * out * (1.0 - out);
        if g == 0.0 {
            return;
        }
        let w1 = self.w1.data();
        let w2 = self.w2.data();
        for (m, &zm) in z.iter().enumerate() {
            grads.h[m] += g * zm;
            let dz = g * h[m];
            grads.b[m] += dz;
            let slice = &w1[m * d * d..(m + 1) * d * d];
            let gslice = &mut grads.w1[m * d * d..(m + 1) * d * d];
            for a in 0..d {
                let row = &slice[a * d..(a + 1) * d];
                let grow = &mut gslice[a * d..(a + 1) * d];
                let ua = e_u[a];
                let mut row_dot = 0.0;
                for b in 0..d {
                    row_dot += row[b] * e_i[b];
                    grow[b] += dz * ua * e_i[b];
                    de_i[b] += dz * ua * row[b];
                }
                de_u[a] += dz * row_dot;
            }
            let lin = &w2[m * 2 * d..(m + 1) * 2 * d];
            let glin = &mut grads.w2[m * 2 * d..(m + 1) * 2 * d];
            for a in 0..d {
                glin[a] += dz * e_u[a];
                glin[d + a] += dz * e_i[a];
                de_u[a] += dz * lin[a];
                de_i[a] += dz * lin[d + a];
            }
        }
    }

    /// Parameters flattened in `w1, w2, b, h` order.
    pub fn to_flat(&self) -> Vec<f64> {
        [&self.w1, &self.w2, &self.b, &self.h]
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    pub fn from_flat(d: usize, k: usize, flat: &[f64]) -> Result<Self> {
        let mut p = NtlParams::zeros(d, k);
        let n = p.n_params();
        if flat.len() != n {
            return Err(Error::Dimension {
                what: "flat NTL parameters",
                expected: n,
                got: flat.len(),
            });
        }
        let mut off = 0;
        for t in [&mut p.w1, &mut p.w2, &mut p.b, &mut p.h] {
            let len = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + len]);
            off += len;
        }
        Ok(p)
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.w2.len() + self.b.len() + self.h.len()
    }
}

/// Gradients with the same layout as [`NtlParams`], plus the two input
/// embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct NtlGradients {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b: Vec<f64>,
    pub h: Vec<f64>,
    pub e_u: Vec<f64>,
    pub e_i: Vec<f64>,
}

impl NtlGradients {
    pub fn zeros(d: usize, k: usize) -> Self {
        NtlGradients {
            w1: vec![0.0; k * d * d],
            w2: vec![0.0; k * 2 * d],
            b: vec![0.0; k],
            h: vec![0.0; k],
            e_u: vec![0.0; d],
            e_i: vec![0.0; d],
        }
    }

    pub fn clear(&mut self) {
        for v in [&mut self.w1, &mut self.w2, &mut self.b, &mut self.h, &mut self.e_u, &mut self.e_i] {
            v.fill(0.0);
        }
    }

    /// Parameter gradients in the order of [`NtlParams::to_flat`].
    pub fn params_flat(&self) -> Vec<f64> {
        [&self.w1, &self.w2, &self.b, &self.h]
            .iter()
            .flat_map(|v| v.iter().copied())
            .collect()
    }
}

pub fn ntl_forward(params: &NtlParams, e_u: &[f64], e_i: &[f64]) -> Result<f64> {
    params.check_inputs(e_u, e_i)?;
    Ok(params.score(e_u, e_i))
}

/// Gradients of `upstream · ntl_forward(params, e_u, e_i)`.
pub fn ntl_backward(params: &NtlParams, e_u: &[f64], e_i: &[f64], upstream: f64) -> Result<NtlGradients> {
    params.check_inputs(e_u, e_i)?;
    let mut grads = NtlGradients::zeros(params.d(), params.k());
    let (mut de_u, mut de_i) = (vec![0.0; params.d()], vec![0.0; params.d()]);
    params.accumulate_backward(e_u, e_i, upstream, &mut grads, &mut de_u, &mut de_i);
    grads.e_u = de_u;
    grads.e_i = de_i;
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_give_one_half() {
        let p = NtlParams::zeros(3, 2);
        assert_eq!(ntl_forward(&p, &[1.0, -2.0, 0.5], &[0.3, 0.3, 9.0]).unwrap(), 0.5);
    }

    #[test]
    fn scalar_hand_evaluation() {
        let mut p = NtlParams::zeros(1, 1);
        p.w1.data_mut()[0] = 1.0;
        p.w2.data_mut().copy_from_slice(&[0.5, -0.5]);
        p.b.data_mut()[0] = 0.1;
        p.h.data_mut()[0] = 1.0;
        // s = 2*1*3 + 0.5*2 - 0.5*3 + 0.1 = 5.6
        let expected = 1.0 / (1.0 + (-5.6f64).exp());
        let out = ntl_forward(&p, &[2.0], &[3.0]).unwrap();
        assert!((out - expected).abs() < 1e-15);
        assert!((out - 0.99632).abs() < 1e-5);
    }

    #[test]
    fn symmetric_params_are_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (d, k) = (4, 3);
        let mut p = NtlParams::init(d, k, &mut rng);
        let w1 = p.w1.data_mut();
        for m in 0..k {
            for a in 0..d {
                for b in 0..a {
                    w1[m * d * d + b * d + a] = w1[m * d * d + a * d + b];
                }
            }
        }
        let w2 = p.w2.data_mut();
        for m in 0..k {
            for a in 0..d {
                w2[m * 2 * d + d + a] = w2[m * 2 * d + a];
            }
        }
        let e_u = Tensor::uniform(&[d], 1.0, &mut rng);
        let e_i = Tensor::uniform(&[d], 1.0, &mut rng);
        let ab = ntl_forward(&p, e_u.data(), e_i.data()).unwrap();
        let ba = ntl_forward(&p, e_i.data(), e_u.data()).unwrap();
        assert!((ab - ba).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let p = NtlParams::zeros(2, 1);
        assert!(matches!(ntl_forward(&p, &[1.0], &[1.0, 2.0]), Err(Error::Dimension { .. })));
        assert!(ntl_backward(&p, &[1.0, 2.0], &[1.0], 1.0).is_err());
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = NtlParams::init(3, 2, &mut rng);
        let g = ntl_backward(&p, &[0.1, 0.2, 0.3], &[0.3, -0.2, 0.1], 0.0).unwrap();
        assert_eq!(g, NtlGradients::zeros(3, 2));
    }

    #[test]
    fn h_gradient_is_sigma_prime_times_pre_activation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = NtlParams::init(4, 3, &mut rng);
        let e_u = [0.3, -0.1, 0.7, 0.2];
        let e_i = [-0.4, 0.5, 0.1, 0.9];
        let upstream = 1.7;
        let z = p.pre_activation(&e_u, &e_i);
        let s: f64 = z.iter().zip(p.h.data()).map(|(a, b)| a * b).sum();
        let sp = sigmoid(s) * (1.0 - sigmoid(s));
        let g = ntl_backward(&p, &e_u, &e_i, upstream).unwrap();
        for m in 0..3 {
            assert!((g.h[m] - sp * upstream * z[m]).abs() < 1e-14);
        }
    }

    #[test]
    fn finite_differences_over_params_and_embeddings() {
        let (d, k) = (4, 3);
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = NtlParams::init(d, k, &mut rng);
            let e_u = Tensor::uniform(&[d], 1.0, &mut rng).data().to_vec();
            let e_i = Tensor::uniform(&[d], 1.0, &mut rng).data().to_vec();
            let mut x = p.to_flat();
            x.extend(&e_u);
            x.extend(&e_i);
            let n = p.n_params();
            let f = |v: &[f64]| {
                let q = NtlParams::from_flat(d, k, &v[..n]).unwrap();
                let (eu, ei) = (&v[n..n + d], &v[n + d..]);
                let g = ntl_backward(&q, eu, ei, 1.0).unwrap();
                let mut grad = g.params_flat();
                grad.extend(&g.e_u);
                grad.extend(&g.e_i);
                (ntl_forward(&q, eu, ei).unwrap(), grad)
            };
            let err = finite_diff_check(f, &x, 1e-5);
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn serde_rejects_inconsistent_shapes() {
        let p = NtlParams::zeros(2, 3);
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<NtlParams>(&json).unwrap(), p);
        let bad = json.replacen("\"shape\":[3]", "\"shape\":[2]", 1);
        assert!(serde_json::from_str::<NtlParams>(&bad).is_err());
    }
}
