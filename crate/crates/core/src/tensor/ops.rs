//! Forward kernels shared by eager tensor methods and the tape.

use super::gemm::gemm;
use super::Tensor;
use crate::error::{Error, Result};

pub(crate) struct MatmulPlan {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub a_batched: bool,
    pub b_batched: bool,
    pub out_shape: Vec<usize>,
}

pub(crate) fn matmul_plan(a: &[usize], b: &[usize]) -> Result<MatmulPlan> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::shape("matmul", a, b));
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(Error::shape("matmul", a, b));
    }
    let a_lead = &a[..a.len() - 2];
    let b_lead = &b[..b.len() - 2];
    let (lead, a_batched, b_batched) = if b_lead.is_empty() {
        (a_lead, false, false)
    } else if a_lead.is_empty() {
        (b_lead, false, true)
    } else if a_lead == b_lead {
        (a_lead, true, true)
    } else {
        return Err(Error::shape("matmul", a, b));
    };
    let batch = lead.iter().product();
    let mut out_shape = lead.to_vec();
    out_shape.extend([m, n]);
    Ok(MatmulPlan {
        batch,
        m,
        k,
        n,
        a_batched,
        b_batched,
        out_shape,
    })
}

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let p = matmul_plan(&a.shape, &b.shape)?;
    let mut out = vec![0.0; p.out_shape.iter().product()];
    if !p.a_batched && !p.b_batched {
        // b is a plain matrix: fold a's leading dims into rows.
        gemm(p.batch * p.m, p.k, p.n, &a.data, false, &b.data, false, &mut out, false);
    } else {
        for i in 0..p.batch {
            let ao = if p.a_batched { i * p.m * p.k } else { 0 };
            let bo = if p.b_batched { i * p.k * p.n } else { 0 };
            gemm(
                p.m,
                p.k,
                p.n,
                &a.data[ao..ao + p.m * p.k],
                false,
                &b.data[bo..bo + p.k * p.n],
                false,
                &mut out[i * p.m * p.n..(i + 1) * p.m * p.n],
                false,
            );
        }
    }
    Tensor::new(&p.out_shape, out)
}

pub(crate) fn permute(x: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let nd = x.shape.len();
    let mut seen = vec![false; nd];
    if perm.len() != nd || perm.iter().any(|&p| p >= nd || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::shape("permute", &x.shape, perm));
    }
    let mut src_strides = vec![1usize; nd];
    for i in (0..nd.saturating_sub(1)).rev() {
        src_strides[i] = src_strides[i + 1] * x.shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
    let total = x.data.len();
    let mut out = Vec::with_capacity(total);
    if total > 0 {
        let mut idx = vec![0usize; nd];
        let mut off = 0usize;
        for _ in 0..total {
            out.push(x.data[off]);
            for ax in (0..nd).rev() {
                idx[ax] += 1;
                off += strides[ax];
                if idx[ax] < out_shape[ax] {
                    break;
                }
                off -= strides[ax] * out_shape[ax];
                idx[ax] = 0;
            }
        }
    }
    Tensor::new(&out_shape, out)
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Splits a shape around `axis` into (outer, axis, inner) extents.
pub(crate) fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn concat(a: &Tensor, b: &Tensor, axis: usize) -> Result<Tensor> {
    let ok = a.shape.len() == b.shape.len()
        && axis < a.shape.len()
        && a.shape
            .iter()
            .zip(&b.shape)
            .enumerate()
            .all(|(i, (x, y))| i == axis || x == y);
    if !ok {
        return Err(Error::shape("concat", &a.shape, &b.shape));
    }
    let (outer, na, inner) = split_at_axis(&a.shape, axis);
    let nb = b.shape[axis];
    let mut out = Vec::with_capacity(a.data.len() + b.data.len());
    for o in 0..outer {
        out.extend_from_slice(&a.data[o * na * inner..(o + 1) * na * inner]);
        out.extend_from_slice(&b.data[o * nb * inner..(o + 1) * nb * inner]);
    }
    let mut shape = a.shape.clone();
    shape[axis] = na + nb;
    Tensor::new(&shape, out)
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax over the last axis with max subtraction.
pub(crate) fn softmax_lastdim(x: &Tensor) -> Tensor {
    let d = *x.shape.last().unwrap_or(&1);
    let mut out = x.data.clone();
    if d > 0 {
        for row in out.chunks_mut(d) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
    }
    Tensor {
        shape: x.shape.clone(),
        data: out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_reference_values() {
        // x·Φ(x) with Φ from tabulated normal CDF values.
        assert!((gelu(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((gelu(-1.0) + 0.158_655_253_931_457_05).abs() < 1e-15);
        assert_eq!(gelu(0.0), 0.0);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0 && softplus(-800.0) < 1e-300);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_nan_propagates() {
        let x = Tensor::new(&[2, 3], vec![1000.0, 1001.0, 1002.0, 0.0, f64::NAN, 1.0]).unwrap();
        let s = softmax_lastdim(&x);
        let row: f64 = s.data()[..3].iter().sum();
        assert!((row - 1.0).abs() < 1e-15);
        assert!(s.data()[3..].iter().any(|v| v.is_nan()));
    }

    #[test]
    fn matmul_matches_naive_product() {
        let a = Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::new(&[3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[58.0, 64.0, 139.0, 154.0]);
        assert!(matmul(&a, &a).is_err());
    }

    #[test]
    fn permute_and_inverse_round_trip() {
        let x = Tensor::new(&[2, 3, 4], (0..24).map(f64::from).collect()).unwrap();
        let p = permute(&x, &[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.data()[1], 4.0);
        assert_eq!(permute(&p, &inverse_perm(&[2, 0, 1])).unwrap(), x);
    }

    #[test]
    fn concat_along_middle_axis() {
        let a = Tensor::new(&[2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(&[2, 1, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let c = concat(&a, &b, 1).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
    }
}
