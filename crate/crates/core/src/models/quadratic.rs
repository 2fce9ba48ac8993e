use nalgebra::{DMatrix, DVector};

use crate::backbone::gradcheck::BoundParams;
use crate::backbone::{NodeId, ParamSet, Rng, Scalar, Tape, Tensor};
use crate::error::{Error, Result};

/// How the hidden squared units are combined into the scalar output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum WeightMode {
    /// One scalar w: f(x) = w·Σⱼ(Wx)ⱼ² + b. The default reading.
    Scalar,
    /// Per-unit weights: f(x) = Σⱼ wⱼ(Wx)ⱼ² + b, behind a switch.
    PerUnit,
}

/// Single-hidden-layer network with a quadratic activation:
/// the sphere-dataset classifier. `sign(f)` is the class decision.
#[derive(Clone, Debug)]
pub struct QuadraticNet<F: Scalar> {
    pub params: ParamSet<F>,
    pub n: usize,
    pub h: usize,
    pub mode: WeightMode,
}

impl<F: Scalar> QuadraticNet<F> {
    pub fn new(n: usize, h: usize, mode: WeightMode, seed: u64) -> Self {
        let mut rng = Rng::derive(seed, "init/quadratic", 0);
        let std = (1.0 / n as f64).sqrt();
        let w: Vec<F> = (0..h * n)
            .map(|_| F::from_f64(rng.normal_f64() * std))
            .collect();
        let mut params = ParamSet::new();
        params.insert("proj", Tensor::new(w, vec![h, n]));
        match mode {
            WeightMode::Scalar => params.insert("out_w", Tensor::new(vec![F::ONE], vec![1])),
            WeightMode::PerUnit => params.insert("out_w", Tensor::new(vec![F::ONE; h], vec![h])),
        }
        params.insert("bias", Tensor::new(vec![F::from_f64(-0.7)], vec![1]));
        QuadraticNet { params, n, h, mode }
    }

    pub fn replace_params(&self, params: ParamSet<F>) -> Self {
        self.params
            .check_same_layout(&params, "quadratic replace_params")
            .expect("parameter layout must match");
        QuadraticNet {
            params,
            ..self.clone()
        }
    }

    /// f(x) for a batch of points laid out `[count, n]`.
    pub fn forward_batch(&self, x: &[F], count: usize) -> Vec<F> {
        assert_eq!(x.len(), count * self.n, "quadratic input shape mismatch");
        let w = &self.params.get("proj").data;
        let out_w = &self.params.get("out_w").data;
        let bias = self.params.get("bias").data[0];
        let mut out = Vec::with_capacity(count);
        for row in x.chunks(self.n) {
            let mut acc = F::ZERO;
            for j in 0..self.h {
                let mut dot = F::ZERO;
                let wrow = &w[j * self.n..(j + 1) * self.n];
                for (a, b) in wrow.iter().zip(row) {
                    dot += *a * *b;
                }
                let scale = match self.mode {
                    WeightMode::Scalar => out_w[0],
                    WeightMode::PerUnit => out_w[j],
                };
                acc += scale * dot * dot;
            }
            out.push(acc + bias);
        }
        out
    }

    pub fn forward_one(&self, x: &[F]) -> F {
        self.forward_batch(x, 1)[0]
    }

    /// Analytic input gradient ∇ₓf = 2·Wᵀ(w ⊙ Wx).
    pub fn input_gradient(&self, x: &[F]) -> Vec<F> {
        assert_eq!(x.len(), self.n);
        let w = &self.params.get("proj").data;
        let out_w = &self.params.get("out_w").data;
        let two = F::from_f64(2.0);
        let mut grad = vec![F::ZERO; self.n];
        for j in 0..self.h {
            let wrow = &w[j * self.n..(j + 1) * self.n];
            let mut dot = F::ZERO;
            for (a, b) in wrow.iter().zip(x) {
                dot += *a * *b;
            }
            let scale = match self.mode {
                WeightMode::Scalar => out_w[0],
                WeightMode::PerUnit => out_w[j],
            };
            let coef = two * scale * dot;
            for (g, a) in grad.iter_mut().zip(wrow) {
                *g += coef * *a;
            }
        }
        grad
    }

    /// Tape builder: f values `[batch]` for an input node `[batch, n]`.
    pub fn value_into(&self, tape: &mut Tape<F>, x: NodeId, bound: &BoundParams) -> NodeId {
        let hidden = tape.linear_no_bias(x, bound.id("proj"));
        let squared = tape.square(hidden);
        let combined = match self.mode {
            WeightMode::Scalar => {
                let summed = tape.sum_rows(squared);
                tape.mul_scalar_node(summed, bound.id("out_w"))
            }
            WeightMode::PerUnit => {
                let batch = tape.shape(x)[0];
                let w_row = tape.reshape(bound.id("out_w"), vec![1, self.h]);
                // broadcast multiply via explicit tiling
                let mut tiled = w_row;
                if batch > 1 {
                    let w_t = tape.value(w_row).clone();
                    let mut data = Vec::with_capacity(batch * self.h);
                    for _ in 0..batch {
                        data.extend_from_slice(&w_t.data);
                    }
                    tiled = tape.constant(Tensor::new(data, vec![batch, self.h]));
                }
                let weighted = tape.mul(squared, tiled);
                tape.sum_rows(weighted)
            }
        };
        tape.add_scalar_node(combined, bound.id("bias"))
    }

    pub fn to_f64(&self) -> QuadraticNet<f64> {
        QuadraticNet {
            params: self.params.cast(),
            n: self.n,
            h: self.h,
            mode: self.mode,
        }
    }
}

/// Diagonalized form f(x) = Σ αᵢ zᵢ² + b with z = R·x.
#[derive(Clone, Debug)]
pub struct CanonicalQuadratic {
    /// Row-major n×n rotation; rows are eigenvectors, z = R·x.
    pub rotation: Vec<f64>,
    /// Eigenvalues sorted descending; entries below the rank threshold are
    /// exactly 0 — the classifier's missing dimensions.
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub n: usize,
}

impl CanonicalQuadratic {
    pub fn to_z(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut z = vec![0.0; self.n];
        for i in 0..self.n {
            let row = &self.rotation[i * self.n..(i + 1) * self.n];
            z[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        z
    }

    pub fn from_z(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.n);
        let mut x = vec![0.0; self.n];
        for i in 0..self.n {
            for j in 0..self.n {
                x[j] += self.rotation[i * self.n + j] * z[i];
            }
        }
        x
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let z = self.to_z(x);
        self.eval_z(&z)
    }

    pub fn eval_z(&self, z: &[f64]) -> f64 {
        self.alpha
            .iter()
            .zip(z)
            .map(|(a, zi)| a * zi * zi)
            .sum::<f64>()
            + self.bias
    }

    pub fn zero_alpha_count(&self) -> usize {
        self.alpha.iter().filter(|&&a| a == 0.0).count()
    }

    /// Indices whose α is exactly zero (sorted ascending).
    pub fn missing_dims(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.alpha[i] == 0.0).collect()
    }
}

/// Eigendecompose M = Wᵀ·diag(w)·W (scalar w collapses to w·WᵀW) so that
/// f(x) ≡ Σ αᵢzᵢ² + b. Eigenvalues with |α| below 1e-9·max|α| are reported as
/// exactly zero.
pub fn canonicalize<F: Scalar>(net: &QuadraticNet<F>) -> Result<CanonicalQuadratic> {
    let n = net.n;
    let w: Vec<f64> = net
        .params
        .get("proj")
        .data
        .iter()
        .map(|v| v.to_f64())
        .collect();
    let out_w: Vec<f64> = net
        .params
        .get("out_w")
        .data
        .iter()
        .map(|v| v.to_f64())
        .collect();
    let bias = net.params.get("bias").data[0].to_f64();

    let mut m = vec![0.0f64; n * n];
    for j in 0..net.h {
        let scale = match net.mode {
            WeightMode::Scalar => out_w[0],
            WeightMode::PerUnit => out_w[j],
        };
        let row = &w[j * n..(j + 1) * n];
        for a in 0..n {
            let ra = scale * row[a];
            for b in 0..n {
                m[a * n + b] += ra * row[b];
            }
        }
    }

    let mat = DMatrix::from_row_slice(n, n, &m);
    let eig = mat
        .try_symmetric_eigen(1e-13, 4096)
        .ok_or_else(|| Error::Eigensolver("symmetric eigendecomposition did not converge".into()))?;
    let values: DVector<f64> = eig.eigenvalues;
    let vectors: DMatrix<f64> = eig.eigenvectors;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap());

    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let threshold = 1e-9 * max_abs;
    let mut alpha = Vec::with_capacity(n);
    let mut rotation = vec![0.0; n * n];
    for (row, &src) in order.iter().enumerate() {
        let v = values[src];
        alpha.push(if v.abs() < threshold { 0.0 } else { v });
        for col in 0..n {
            rotation[row * n + col] = vectors[(col, src)];
        }
    }

    // R must be orthogonal for z = Rx to be a rotation.
    for i in 0..n {
        for j in i..n {
            let dot: f64 = (0..n)
                .map(|k| rotation[i * n + k] * rotation[j * n + k])
                .sum();
            let expect = if i == j { 1.0 } else { 0.0 };
            if (dot - expect).abs() > 1e-6 {
                return Err(Error::Eigensolver(format!(
                    "eigenvectors not orthonormal: <r{i},r{j}> = {dot}"
                )));
            }
        }
    }

    Ok(CanonicalQuadratic {
        rotation,
        alpha,
        bias,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_net(n: usize, h: usize, w_vals: Vec<f64>, out_w: f64, bias: f64) -> QuadraticNet<f64> {
        let net = QuadraticNet::<f64>::new(n, h, WeightMode::Scalar, 0);
        let params = net
            .params
            .with("proj", Tensor::new(w_vals, vec![h, n]))
            .with("out_w", Tensor::new(vec![out_w], vec![1]))
            .with("bias", Tensor::new(vec![bias], vec![1]));
        net.replace_params(params)
    }

    #[test]
    fn identity_projection_direct_arithmetic() {
        // W = I₂, w = 1, b = −0.5, x = (0.6, 0) → 0.36 − 0.5 = −0.14
        let net = direct_net(2, 2, vec![1.0, 0.0, 0.0, 1.0], 1.0, -0.5);
        let f = net.forward_one(&[0.6, 0.0]);
        assert!((f + 0.14).abs() < 1e-12, "f = {f}");
    }

    #[test]
    fn x_zero_returns_bias() {
        let net = QuadraticNet::<f64>::new(5, 4, WeightMode::Scalar, 9);
        let b = net.params.get("bias").data[0];
        assert_eq!(net.forward_one(&[0.0; 5]), b);
    }

    #[test]
    fn diagonal_w_gives_identity_rotation_and_squared_alphas() {
        let net = direct_net(3, 3, vec![2.0, 0.0, 0.0, 0.0, -3.0, 0.0, 0.0, 0.0, 1.0], 1.0, 0.3);
        let canon = canonicalize(&net).unwrap();
        let mut expect = vec![9.0, 4.0, 1.0];
        expect.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (a, e) in canon.alpha.iter().zip(&expect) {
            assert!((a - e).abs() < 1e-9, "alpha {a} vs {e}");
        }
        // rows must be axis-aligned up to sign/permutation
        for i in 0..3 {
            let row = &canon.rotation[i * 3..(i + 1) * 3];
            let big = row.iter().filter(|v| v.abs() > 0.99).count();
            assert_eq!(big, 1, "row {row:?} not axis-aligned");
        }
    }

    #[test]
    fn canonical_form_agrees_with_network_on_random_inputs() {
        // random 6×8 case, 1000 points
        let mut rng = Rng::derive(21, "canon-test", 0);
        let net = QuadraticNet::<f64>::new(8, 6, WeightMode::Scalar, 33);
        let canon = canonicalize(&net).unwrap();
        assert!(canon.zero_alpha_count() >= 2); // rank ≤ 6 in 8 dims
        for _ in 0..1000 {
            let x: Vec<f64> = rng.normal_vec(8);
            let direct = net.forward_one(&x);
            let via_canon = canon.eval(&x);
            assert!(
                (direct - via_canon).abs() < 1e-6,
                "{direct} vs {via_canon}"
            );
        }
    }

    #[test]
    fn per_unit_weight_mode_agrees_with_its_canonical_form() {
        let mut rng = Rng::derive(4, "canon-vec", 0);
        let base = QuadraticNet::<f64>::new(5, 3, WeightMode::PerUnit, 11);
        let params = base
            .params
            .with("out_w", Tensor::new(vec![0.5, -1.5, 2.0], vec![3]));
        let net = base.replace_params(params);
        let canon = canonicalize(&net).unwrap();
        for _ in 0..200 {
            let x: Vec<f64> = rng.normal_vec(5);
            assert!((net.forward_one(&x) - canon.eval(&x)).abs() < 1e-8);
        }
    }

    #[test]
    fn rank_bound_holds_for_wide_input() {
        // h = 9 hidden units in n = 12 dims ⇒ at least 3 zero alphas
        let net = QuadraticNet::<f64>::new(12, 9, WeightMode::Scalar, 2);
        let canon = canonicalize(&net).unwrap();
        assert!(canon.zero_alpha_count() >= 3);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let net = QuadraticNet::<f64>::new(6, 4, WeightMode::Scalar, 8);
        let mut rng = Rng::derive(3, "qgrad", 0);
        let x: Vec<f64> = rng.normal_vec(6);
        let g = net.input_gradient(&x);
        let h = 1e-6;
        for i in 0..6 {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (net.forward_one(&xp) - net.forward_one(&xm)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6, "coord {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn tape_value_agrees_with_direct_forward() {
        use crate::backbone::gradcheck::bind_params;
        let net = QuadraticNet::<f64>::new(7, 5, WeightMode::Scalar, 12);
        let mut rng = Rng::derive(9, "qtape", 0);
        let x: Vec<f64> = rng.normal_vec(14);
        let direct = net.forward_batch(&x, 2);
        let mut tape = Tape::new();
        let bound = bind_params(&mut tape, &net.params, false);
        let xi = tape.constant(Tensor::new(x, vec![2, 7]));
        let f = net.value_into(&mut tape, xi, &bound);
        for (a, b) in tape.value(f).data.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
