//! Temporal 1-D convolution (cross-correlation) with zero same-padding,
//! stride 1, and its exact backward pass.

use crate::tensor::Tensor;

use super::NetError;

/// Forward pass.
///
/// `input` is `[T, c_in]`, `kernel` is `[c_out, c_in, k]`, `bias` is
/// `[c_out]`; the output is `[T, c_out]`. The kernel slides along the time
/// axis; positions outside the sequence read as zero.
pub fn conv1d_forward(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor, NetError> {
    let &[t_len, c_in] = input.shape() else {
        return Err(NetError::ShapeMismatch(format!(
            "conv input must be 2-D, got {:?}",
            input.shape()
        )));
    };
    let &[c_out, kc_in, k] = kernel.shape() else {
        return Err(NetError::ShapeMismatch(format!(
            "conv kernel must be 3-D, got {:?}",
            kernel.shape()
        )));
    };
    if kc_in != c_in || bias.shape() != [c_out] {
        return Err(NetError::ShapeMismatch(format!(
            "conv shapes disagree: input {:?}, kernel {:?}, bias {:?}",
            input.shape(),
            kernel.shape(),
            bias.shape()
        )));
    }
    if t_len < k {
        return Err(NetError::ShapeMismatch(format!(
            "sequence length {t_len} shorter than kernel {k}"
        )));
    }
    let pad = k / 2;
    let x = input.data();
    let w = kernel.data();
    let b = bias.data();
    let mut out = Tensor::zeros(&[t_len, c_out]);
    let o_data = out.data_mut();
    for t in 0..t_len {
        for o in 0..c_out {
            let mut acc = b[o];
            for dk in 0..k {
                let src = t as i64 + dk as i64 - pad as i64;
                if src < 0 || src >= t_len as i64 {
                    continue;
                }
                let src = src as usize;
                let xrow = &x[src * c_in..(src + 1) * c_in];
                let wrow = &w[(o * c_in) * k + dk..];
                // kernel stride over i is k
                let mut s = 0.0;
                for (i, xi) in xrow.iter().enumerate() {
                    s += xi * wrow[i * k];
                }
                acc += s;
            }
            o_data[t * c_out + o] = acc;
        }
    }
    Ok(out)
}

/// Gradients of a scalar objective w.r.t. conv input, kernel, and bias,
/// given the gradient w.r.t. the conv output.
pub fn conv1d_backward(
    input: &Tensor,
    kernel: &Tensor,
    d_out: &Tensor,
    d_input: &mut Tensor,
    d_kernel: &mut Tensor,
    d_bias: &mut Tensor,
) {
    let t_len = input.shape()[0];
    let c_in = input.shape()[1];
    let c_out = kernel.shape()[0];
    let k = kernel.shape()[2];
    let pad = k / 2;
    debug_assert_eq!(d_out.shape(), &[t_len, c_out]);

    let x = input.data();
    let w = kernel.data();
    let g = d_out.data();
    let dx = d_input.data_mut();
    {
        let dw = d_kernel.data_mut();
        for t in 0..t_len {
            for o in 0..c_out {
                let go = g[t * c_out + o];
                if go == 0.0 {
                    continue;
                }
                for dk in 0..k {
                    let src = t as i64 + dk as i64 - pad as i64;
                    if src < 0 || src >= t_len as i64 {
                        continue;
                    }
                    let src = src as usize;
                    for i in 0..c_in {
                        dw[(o * c_in + i) * k + dk] += go * x[src * c_in + i];
                        dx[src * c_in + i] += go * w[(o * c_in + i) * k + dk];
                    }
                }
            }
        }
    }
    let db = d_bias.data_mut();
    for t in 0..t_len {
        for o in 0..c_out {
            db[o] += g[t * c_out + o];
        }
    }
}

/// Elementwise max(0, x).
pub fn relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Chain-rule through ReLU: passes gradient where the pre-activation was
/// strictly positive (subgradient 0 at the kink).
pub fn relu_backward(pre_activation: &Tensor, d_out: &Tensor) -> Tensor {
    let mut d_in = d_out.clone();
    for (d, z) in d_in.data_mut().iter_mut().zip(pre_activation.data()) {
        if *z <= 0.0 {
            *d = 0.0;
        }
    }
    d_in
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn centered_identity_kernel_is_identity() {
        // kernel_size 3, center tap 1: output equals (non-negative) input.
        let input = Tensor::from_vec(&[4, 2], vec![1.0, 2.0, 3.0, 4.0, 0.5, 0.0, 2.5, 1.5]);
        let mut kernel = Tensor::zeros(&[2, 2, 3]);
        // out channel o copies in channel o via center tap
        kernel.data_mut()[(0 * 2 + 0) * 3 + 1] = 1.0;
        kernel.data_mut()[(1 * 2 + 1) * 3 + 1] = 1.0;
        let bias = Tensor::zeros(&[2]);
        let out = conv1d_forward(&input, &kernel, &bias).unwrap();
        assert_eq!(relu(&out).data(), input.data());
    }

    #[test]
    fn hand_convolution_with_zero_padding() {
        let input = Tensor::from_vec(&[3, 1], vec![1.0, 2.0, 3.0]);
        let kernel = Tensor::from_vec(&[1, 1, 3], vec![1.0, 1.0, 1.0]);
        let bias = Tensor::zeros(&[1]);
        let out = conv1d_forward(&input, &kernel, &bias).unwrap();
        assert_eq!(out.data(), &[3.0, 6.0, 5.0]);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let input = Tensor::zeros(&[4, 2]);
        let kernel = Tensor::zeros(&[3, 5, 3]);
        let bias = Tensor::zeros(&[3]);
        assert!(matches!(
            conv1d_forward(&input, &kernel, &bias),
            Err(NetError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (t_len, c_in, c_out, k) = (8, 19, 3, 3);
        let input = Tensor::from_vec(
            &[t_len, c_in],
            (0..t_len * c_in).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let kernel = Tensor::from_vec(
            &[c_out, c_in, k],
            (0..c_out * c_in * k)
                .map(|_| rng.gen_range(-0.5..0.5))
                .collect(),
        );
        let bias = Tensor::from_vec(&[c_out], (0..c_out).map(|_| rng.gen_range(-0.2..0.2)).collect());
        // Scalar objective: weighted sum of outputs.
        let weights: Vec<f64> = (0..t_len * c_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let objective = |inp: &Tensor, ker: &Tensor, b: &Tensor| -> f64 {
            let out = conv1d_forward(inp, ker, b).unwrap();
            out.data().iter().zip(&weights).map(|(a, w)| a * w).sum()
        };

        let d_out = Tensor::from_vec(&[t_len, c_out], weights.clone());
        let mut d_input = Tensor::zeros(&[t_len, c_in]);
        let mut d_kernel = Tensor::zeros(&[c_out, c_in, k]);
        let mut d_bias = Tensor::zeros(&[c_out]);
        conv1d_backward(&input, &kernel, &d_out, &mut d_input, &mut d_kernel, &mut d_bias);

        let h = 1e-6;
        let check = |analytic: f64, fd: f64, what: &str| {
            let denom = analytic.abs().max(fd.abs()).max(1e-6);
            assert!(
                ((analytic - fd) / denom).abs() < 1e-4,
                "{what}: {analytic} vs {fd}"
            );
        };
        for idx in 0..input.len() {
            let mut p = input.clone();
            p.data_mut()[idx] += h;
            let vp = objective(&p, &kernel, &bias);
            p.data_mut()[idx] -= 2.0 * h;
            let vm = objective(&p, &kernel, &bias);
            check(d_input.data()[idx], (vp - vm) / (2.0 * h), "d_input");
        }
        for idx in 0..kernel.len() {
            let mut p = kernel.clone();
            p.data_mut()[idx] += h;
            let vp = objective(&input, &p, &bias);
            p.data_mut()[idx] -= 2.0 * h;
            let vm = objective(&input, &p, &bias);
            check(d_kernel.data()[idx], (vp - vm) / (2.0 * h), "d_kernel");
        }
        for idx in 0..bias.len() {
            let mut p = bias.clone();
            p.data_mut()[idx] += h;
            let vp = objective(&input, &kernel, &p);
            p.data_mut()[idx] -= 2.0 * h;
            let vm = objective(&input, &kernel, &p);
            check(d_bias.data()[idx], (vp - vm) / (2.0 * h), "d_bias");
        }
    }
}
