//! Value-level kernels shared by the tape and by the free-standing operations.

use super::tensor::Tensor;
use crate::error::{invalid_arg, Result};

/// Probability floor used by [`cross_entropy`] so collapsed distributions stay finite.
pub const PROB_FLOOR: f64 = 1e-12;

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out = W x` for row-major `W` of shape `rows x cols`.
#[inline]
pub(crate) fn matvec(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(w.len(), out.len() * cols);
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o = dot(row, x);
    }
}

/// `dx += W^T dy`.
#[inline]
pub(crate) fn matvec_t_acc(w: &[f64], cols: usize, dy: &[f64], dx: &mut [f64]) {
    for (&d, row) in dy.iter().zip(w.chunks_exact(cols)) {
        if d != 0.0 {
            axpy(d, row, dx);
        }
    }
}

/// `dW += dy x^T`.
#[inline]
pub(crate) fn outer_acc(dw: &mut [f64], cols: usize, dy: &[f64], x: &[f64]) {
    for (&d, row) in dy.iter().zip(dw.chunks_exact_mut(cols)) {
        if d != 0.0 {
            axpy(d, x, row);
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.clear();
    out.extend(logits.iter().map(|&l| (l - max).exp()));
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(invalid_arg("softmax over an empty vector"));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(invalid_arg("softmax input contains non-finite values"));
    }
    let mut out = Vec::with_capacity(logits.len());
    softmax_into(logits, &mut out);
    Ok(out)
}

/// `-ln(max(probs[target], 1e-12))`.
pub fn cross_entropy(probs: &[f64], target: usize) -> Result<f64> {
    let p = probs.get(target).ok_or_else(|| {
        invalid_arg(format!("target {target} outside distribution of size {}", probs.len()))
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Gate pre-activations, post-activation gates and new state of one LSTM step.
pub(crate) struct LstmStep {
    pub xh: Vec<f64>,
    /// Activated gates laid out as `[i, f, g, o]`.
    pub gates: Vec<f64>,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

pub(crate) fn lstm_forward(w: &[f64], b: &[f64], x: &[f64], h: &[f64], c: &[f64]) -> LstmStep {
    let dh = h.len();
    let mut xh = Vec::with_capacity(x.len() + dh);
    xh.extend_from_slice(x);
    xh.extend_from_slice(h);
    let mut gates = vec![0.0; 4 * dh];
    matvec(w, xh.len(), &xh, &mut gates);
    for (g, bias) in gates.iter_mut().zip(b) {
        *g += bias;
    }
    for k in 0..dh {
        gates[k] = sigmoid(gates[k]);
        gates[dh + k] = sigmoid(gates[dh + k]);
        gates[2 * dh + k] = gates[2 * dh + k].tanh();
        gates[3 * dh + k] = sigmoid(gates[3 * dh + k]);
    }
    let mut c_new = vec![0.0; dh];
    let mut tanh_c = vec![0.0; dh];
    let mut h_new = vec![0.0; dh];
    for k in 0..dh {
        c_new[k] = gates[dh + k] * c[k] + gates[k] * gates[2 * dh + k];
        tanh_c[k] = c_new[k].tanh();
        h_new[k] = gates[3 * dh + k] * tanh_c[k];
    }
    LstmStep { xh, gates, h: h_new, c: c_new, tanh_c }
}

/// One LSTM step. `w` is `[4*d_h, d_in + d_h]` with gate blocks `i, f, g, o`; `b` is `[4*d_h]`.
pub fn lstm_cell(
    x: &Tensor,
    h: &Tensor,
    c: &Tensor,
    w: &Tensor,
    b: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let dh = h.len();
    if c.len() != dh {
        return Err(invalid_arg(format!("cell size {} != hidden size {dh}", c.len())));
    }
    let (rows, cols) = w.shape2();
    if w.rank() != 2 || rows != 4 * dh || cols != x.len() + dh {
        return Err(invalid_arg(format!(
            "gate weights {:?} incompatible with d_in={} d_h={dh}",
            w.dims(),
            x.len()
        )));
    }
    if b.len() != 4 * dh {
        return Err(invalid_arg(format!("gate bias has {} values, expected {}", b.len(), 4 * dh)));
    }
    let step = lstm_forward(w.values(), b.values(), x.values(), h.values(), c.values());
    Ok((Tensor::vector(step.h), Tensor::vector(step.c)))
}

/// Bilinear attention: `weights = softmax((W_q q) . (W_k k_j))`, `context = sum_j weights_j k_j`.
///
/// `w_query` is `[d_a, d_q]`, `w_key` is `[d_a, d_k]`, `keys` is `[m, d_k]`.
pub fn attention(
    query: &Tensor,
    keys: &Tensor,
    w_query: &Tensor,
    w_key: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (m, dk) = keys.shape2();
    if keys.rank() != 2 {
        return Err(invalid_arg("attention keys must be a matrix"));
    }
    let (da, dq) = w_query.shape2();
    let (da_k, dk_w) = w_key.shape2();
    if dq != query.len() || dk_w != dk || da != da_k {
        return Err(invalid_arg(format!(
            "attention projections {:?}/{:?} incompatible with query {} and keys {:?}",
            w_query.dims(),
            w_key.dims(),
            query.len(),
            keys.dims()
        )));
    }
    let mut q = vec![0.0; da];
    matvec(w_query.values(), dq, query.values(), &mut q);
    let mut projected = vec![0.0; da];
    let scores: Vec<f64> = (0..m)
        .map(|j| {
            matvec(w_key.values(), dk, keys.row(j), &mut projected);
            dot(&q, &projected)
        })
        .collect();
    let weights = softmax(&scores)?;
    let mut context = vec![0.0; dk];
    for (j, &wj) in weights.iter().enumerate() {
        axpy(wj, keys.row(j), &mut context);
    }
    Ok((Tensor::vector(context), Tensor::vector(weights)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform_and_stable() {
        let p = softmax(&[0.0, 0.0, 0.0]).unwrap();
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1] >= 0.0 && p[1] < 1e-12);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_matches_direct_normalisation() {
        let e: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).collect();
        let z: f64 = e.iter().sum();
        let p = softmax(&[1.0, 2.0, 3.0]).unwrap();
        for (a, b) in p.iter().zip(&e) {
            assert!((a - b / z).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(softmax(&[]).is_err());
        assert!(softmax(&[1.0, f64::NAN]).is_err());
        assert!(softmax(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        assert!(cross_entropy(&[1.0, 0.0], 0).unwrap() <= 1e-9);
        let uniform = [0.25; 4];
        for t in 0..4 {
            assert!((cross_entropy(&uniform, t).unwrap() - 4f64.ln()).abs() < 1e-15);
        }
        assert!((cross_entropy(&[0.1, 0.9], 0).unwrap() - 2.302585092994046).abs() < 1e-12);
        assert!((cross_entropy(&[1.0, 0.0], 1).unwrap() - (-(1e-12f64).ln())).abs() < 1e-9);
        assert!(cross_entropy(&[0.5, 0.5], 2).is_err());
    }

    fn lstm_params(din: usize, dh: usize, fill: f64) -> (Tensor, Tensor) {
        (
            Tensor::matrix(4 * dh, din + dh, vec![fill; 4 * dh * (din + dh)]).unwrap(),
            Tensor::vector(vec![fill; 4 * dh]),
        )
    }

    #[test]
    fn lstm_zero_parameters_give_zero_state() {
        let (w, b) = lstm_params(3, 2, 0.0);
        let x = Tensor::vector(vec![0.3, -1.0, 2.0]);
        let zero = Tensor::vector(vec![0.0; 2]);
        let (h, c) = lstm_cell(&x, &zero, &zero, &w, &b).unwrap();
        assert!(h.values().iter().chain(c.values()).all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_saturated_forget_gate_keeps_cell() {
        let dh = 3;
        let (w, mut b) = lstm_params(2, dh, 0.0);
        for k in 0..dh {
            b.values_mut()[k] = -50.0;
            b.values_mut()[dh + k] = 50.0;
        }
        let x = Tensor::vector(vec![1.0, -1.0]);
        let h = Tensor::vector(vec![0.2, 0.1, -0.4]);
        let c = Tensor::vector(vec![0.7, -1.3, 2.5]);
        let (_, c2) = lstm_cell(&x, &h, &c, &w, &b).unwrap();
        for (a, b) in c2.values().iter().zip(c.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn lstm_rejects_shape_mismatch() {
        let (w, b) = lstm_params(3, 2, 0.1);
        let x = Tensor::vector(vec![0.0; 4]);
        let h = Tensor::vector(vec![0.0; 2]);
        assert!(lstm_cell(&x, &h, &h, &w, &b).is_err());
        let c = Tensor::vector(vec![0.0; 3]);
        let x = Tensor::vector(vec![0.0; 3]);
        assert!(lstm_cell(&x, &h, &c, &w, &b).is_err());
    }

    fn identity(n: usize) -> Tensor {
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            v[i * n + i] = 1.0;
        }
        Tensor::matrix(n, n, v).unwrap()
    }

    #[test]
    fn attention_identical_keys_is_uniform() {
        let keys = Tensor::matrix(3, 2, vec![0.5, -1.0, 0.5, -1.0, 0.5, -1.0]).unwrap();
        let q = Tensor::vector(vec![2.0, 1.0]);
        let (ctx, w) = attention(&q, &keys, &identity(2), &identity(2)).unwrap();
        assert!(w.values().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!((ctx.values()[0] - 0.5).abs() < 1e-15 && (ctx.values()[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn attention_single_key() {
        let keys = Tensor::matrix(1, 2, vec![3.0, 4.0]).unwrap();
        let q = Tensor::vector(vec![-2.0, 1.0]);
        let (ctx, w) = attention(&q, &keys, &identity(2), &identity(2)).unwrap();
        assert_eq!(w.values(), &[1.0]);
        assert_eq!(ctx.values(), &[3.0, 4.0]);
    }

    #[test]
    fn attention_two_keys_scores() {
        // scores (3, 0)
        let keys = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let q = Tensor::vector(vec![3.0, 0.0]);
        let (_, w) = attention(&q, &keys, &identity(2), &identity(2)).unwrap();
        let e3 = 3f64.exp();
        assert!((w.values()[0] - e3 / (e3 + 1.0)).abs() < 1e-15);
        assert!((w.values()[1] - 1.0 / (e3 + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn attention_rejects_empty_keys() {
        assert!(Tensor::matrix(0, 2, vec![]).is_err());
        let keys = Tensor::matrix(1, 3, vec![0.0; 3]).unwrap();
        let q = Tensor::vector(vec![0.0; 2]);
        assert!(attention(&q, &keys, &identity(2), &identity(2)).is_err());
    }
}
