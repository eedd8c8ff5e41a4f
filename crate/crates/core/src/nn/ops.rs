//! Forward and backward kernels for every primitive the network uses.
//!
//! Layouts are row-major: images are `[H, W, C]`, conv kernels are
//! `[k, k, C_in, C_out]`, dense weights are `[D_in, D_out]`.

use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

fn check_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.shape().len() != rank {
        return Err(Error::shape(op, t.shape(), &vec![0; rank]));
    }
    Ok(())
}

/// Same-padded, stride-1 2-D convolution with zero fill outside the image.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    check_rank("conv2d", input, 3)?;
    check_rank("conv2d", kernel, 4)?;
    let (h, w, cin) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (k, k2, kcin, cout) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    );
    if k != k2 || k % 2 == 0 {
        return Err(Error::config(format!("conv2d kernel must be square and odd, got {k}x{k2}")));
    }
    if kcin != cin {
        return Err(Error::shape("conv2d", input.shape(), kernel.shape()));
    }
    if bias.shape() != [cout] {
        return Err(Error::shape("conv2d bias", bias.shape(), &[cout]));
    }
    let pad = k / 2;
    let x = input.data();
    let kw = kernel.data();
    let mut out = vec![0.0; h * w * cout];
    for r in 0..h {
        for c in 0..w {
            let o_base = (r * w + c) * cout;
            let acc = &mut out[o_base..o_base + cout];
            acc.copy_from_slice(bias.data());
            for dr in 0..k {
                let rr = r + dr;
                if rr < pad || rr - pad >= h {
                    continue;
                }
                let rr = rr - pad;
                for dc in 0..k {
                    let cc = c + dc;
                    if cc < pad || cc - pad >= w {
                        continue;
                    }
                    let cc = cc - pad;
                    let px = &x[(rr * w + cc) * cin..(rr * w + cc + 1) * cin];
                    let k_base = (dr * k + dc) * cin * cout;
                    for (ci, &xv) in px.iter().enumerate() {
                        if xv == 0.0 {
                            continue;
                        }
                        let krow = &kw[k_base + ci * cout..k_base + (ci + 1) * cout];
                        for (a, &kv) in acc.iter_mut().zip(krow) {
                            *a += xv * kv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[h, w, cout], out)
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (h, w, cin) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let k = kernel.shape()[0];
    let cout = kernel.shape()[3];
    if grad_out.shape() != [h, w, cout] {
        return Err(Error::shape("conv2d_backward", grad_out.shape(), &[h, w, cout]));
    }
    let pad = k / 2;
    let x = input.data();
    let kw = kernel.data();
    let go = grad_out.data();
    let mut g_in = vec![0.0; x.len()];
    let mut g_k = vec![0.0; kw.len()];
    let mut g_b = vec![0.0; cout];
    for r in 0..h {
        for c in 0..w {
            let g = &go[(r * w + c) * cout..(r * w + c + 1) * cout];
            for (b, &gv) in g_b.iter_mut().zip(g) {
                *b += gv;
            }
            for dr in 0..k {
                let rr = r + dr;
                if rr < pad || rr - pad >= h {
                    continue;
                }
                let rr = rr - pad;
                for dc in 0..k {
                    let cc = c + dc;
                    if cc < pad || cc - pad >= w {
                        continue;
                    }
                    let cc = cc - pad;
                    let px = (rr * w + cc) * cin;
                    let k_base = (dr * k + dc) * cin * cout;
                    for ci in 0..cin {
                        let xv = x[px + ci];
                        let krow = &kw[k_base + ci * cout..k_base + (ci + 1) * cout];
                        let gkrow = &mut g_k[k_base + ci * cout..k_base + (ci + 1) * cout];
                        let mut gi = 0.0;
                        for o in 0..cout {
                            gi += krow[o] * g[o];
                            gkrow[o] += xv * g[o];
                        }
                        g_in[px + ci] += gi;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(input.shape(), g_in)?,
        Tensor::new(kernel.shape(), g_k)?,
        Tensor::from_vec(g_b),
    ))
}

/// `out = Wᵀ·x + b`.
pub fn dense(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    check_rank("dense", weight, 2)?;
    let (din, dout) = (weight.shape()[0], weight.shape()[1]);
    if input.len() != din {
        return Err(Error::shape("dense", input.shape(), weight.shape()));
    }
    let mut out = match bias {
        Some(b) if b.len() == dout => b.data().to_vec(),
        Some(b) => return Err(Error::shape("dense bias", b.shape(), &[dout])),
        None => vec![0.0; dout],
    };
    let wd = weight.data();
    for (i, &xv) in input.data().iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        let row = &wd[i * dout..(i + 1) * dout];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += xv * wv;
        }
    }
    Ok(Tensor::from_vec(out))
}

/// Gradients of [`dense`]: (input, weight, bias).
pub fn dense_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (din, dout) = (weight.shape()[0], weight.shape()[1]);
    if grad_out.len() != dout {
        return Err(Error::shape("dense_backward", grad_out.shape(), &[dout]));
    }
    let wd = weight.data();
    let g = grad_out.data();
    let mut g_in = vec![0.0; din];
    let mut g_w = vec![0.0; din * dout];
    for (i, &xv) in input.data().iter().enumerate() {
        let row = &wd[i * dout..(i + 1) * dout];
        let grow = &mut g_w[i * dout..(i + 1) * dout];
        let mut acc = 0.0;
        for o in 0..dout {
            acc += row[o] * g[o];
            grow[o] = xv * g[o];
        }
        g_in[i] = acc;
    }
    Ok((
        Tensor::new(input.shape(), g_in)?,
        Tensor::new(weight.shape(), g_w)?,
        grad_out.clone(),
    ))
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

/// ReLU gradient from the forward *output*; the derivative at 0 is 0.
pub fn relu_backward(out: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    out.zip_map(grad_out, |y, g| if y > 0.0 { g } else { 0.0 })
}

pub fn sigmoid_backward(out: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    out.zip_map(grad_out, |y, g| g * y * (1.0 - y))
}

pub fn tanh_backward(out: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    out.zip_map(grad_out, |y, g| g * (1.0 - y * y))
}

/// Max-shifted softmax over a flat score vector.
pub fn softmax(scores: &Tensor) -> Result<Tensor> {
    if let Some(bad) = scores.data().iter().find(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("softmax received non-finite score {bad}")));
    }
    if scores.is_empty() {
        return Err(Error::shape("softmax", scores.shape(), &[1]));
    }
    let max = scores.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.data().iter().map(|&s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Tensor::new(scores.shape(), exps.into_iter().map(|e| e / total).collect())
}

pub fn softmax_backward(out: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let dot: f64 = out.data().iter().zip(grad_out.data()).map(|(y, g)| y * g).sum();
    out.zip_map(grad_out, |y, g| y * (g - dot))
}

/// Weights of one LSTM layer. Gate pre-activations are `z = Wᵀ[x; h] + b`
/// laid out as four `hidden`-wide blocks in the order input, forget, output,
/// candidate.
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LstmParams {
    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0] - self.hidden_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.weight.shape()[1] / 4
    }
}

/// Gate nonlinearity and state update given pre-activations `z` of length `4H`.
/// Returns `(h, c)`.
pub fn lstm_cell(z: &[f64], c_prev: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hd = c_prev.len();
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    for u in 0..hd {
        let i = sigmoid_scalar(z[u]);
        let f = sigmoid_scalar(z[hd + u]);
        let o = sigmoid_scalar(z[2 * hd + u]);
        let g = z[3 * hd + u].tanh();
        c[u] = f * c_prev[u] + i * g;
        h[u] = o * c[u].tanh();
    }
    (h, c)
}

/// Backward of [`lstm_cell`]: returns `(dz, dc_prev)`.
pub fn lstm_cell_backward(
    z: &[f64],
    c_prev: &[f64],
    grad_h: &[f64],
    grad_c: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let hd = c_prev.len();
    let mut dz = vec![0.0; 4 * hd];
    let mut dc_prev = vec![0.0; hd];
    for u in 0..hd {
        let i = sigmoid_scalar(z[u]);
        let f = sigmoid_scalar(z[hd + u]);
        let o = sigmoid_scalar(z[2 * hd + u]);
        let g = z[3 * hd + u].tanh();
        let c = f * c_prev[u] + i * g;
        let tc = c.tanh();
        let dc = grad_c[u] + grad_h[u] * o * (1.0 - tc * tc);
        dz[u] = dc * g * i * (1.0 - i);
        dz[hd + u] = dc * c_prev[u] * f * (1.0 - f);
        dz[2 * hd + u] = grad_h[u] * tc * o * (1.0 - o);
        dz[3 * hd + u] = dc * i * (1.0 - g * g);
        dc_prev[u] = dc * f;
    }
    (dz, dc_prev)
}

/// One forget-gate LSTM step: returns `(h, c)`.
pub fn lstm_step(
    x: &Tensor,
    h_prev: &Tensor,
    c_prev: &Tensor,
    params: &LstmParams,
) -> Result<(Tensor, Tensor)> {
    let hd = params.hidden_dim();
    if h_prev.len() != hd || c_prev.len() != hd {
        return Err(Error::shape("lstm_step state", h_prev.shape(), &[hd]));
    }
    if x.len() != params.input_dim() {
        return Err(Error::shape("lstm_step input", x.shape(), &[params.input_dim()]));
    }
    let mut xh = x.data().to_vec();
    xh.extend_from_slice(h_prev.data());
    let z = dense(&Tensor::from_vec(xh), &params.weight, Some(&params.bias))?;
    let (h, c) = lstm_cell(z.data(), c_prev.data());
    Ok((Tensor::from_vec(h), Tensor::from_vec(c)))
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    let keep = 1.0 - rate;
    let data = (0..len)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    Ok(Tensor::from_vec(data))
}

/// Inverted dropout; identity when `training` is false or `rate` is 0.
pub fn dropout<R: Rng + ?Sized>(
    input: &Tensor,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    if !training || rate == 0.0 {
        return Ok(input.clone());
    }
    let mask = dropout_mask(input.len(), rate, rng)?;
    input.zip_map(&mask.reshape(input.shape())?, |x, m| x * m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_pixel_identity_conv() {
        let x = Tensor::new(&[1, 1, 1], vec![5.0]).unwrap();
        let k = Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d(&x, &k, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn ones_window_sums_to_nine_at_center() {
        let x = Tensor::full(&[3, 3, 1], 1.0);
        let k = Tensor::full(&[3, 3, 1, 1], 1.0);
        let y = conv2d(&x, &k, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.data()[4], 9.0);
        assert_eq!(y.data()[0], 4.0);
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let x = Tensor::zeros(&[3, 3, 2]);
        let k = Tensor::zeros(&[3, 3, 4, 1]);
        let err = conv2d(&x, &k, &Tensor::zeros(&[1])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[3, 3, 2]") && msg.contains("[3, 3, 4, 1]"), "{msg}");
    }

    #[test]
    fn dense_identity_and_zero_weight() {
        let x = Tensor::from_vec(vec![1.0, -2.0, 3.0]);
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        assert_eq!(dense(&x, &eye, Some(&Tensor::zeros(&[3]))).unwrap(), x);
        let b = Tensor::from_vec(vec![0.5, 0.25]);
        assert_eq!(dense(&x, &Tensor::zeros(&[3, 2]), Some(&b)).unwrap(), b);
        assert!(matches!(dense(&x, &Tensor::zeros(&[2, 2]), None), Err(Error::Shape { .. })));
    }

    #[test]
    fn activations_at_reference_points() {
        let x = Tensor::from_vec(vec![-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(sigmoid(&x).data()[1], 0.5);
        assert_eq!(tanh(&x).data()[1], 0.0);
        let g = relu_backward(&relu(&x), &Tensor::full(&[3], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn softmax_reference_values() {
        let y = softmax(&Tensor::from_vec(vec![0.7; 3])).unwrap();
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let y = softmax(&Tensor::from_vec(vec![0.0, 2f64.ln(), 4f64.ln()])).unwrap();
        for (v, want) in y.data().iter().zip([1.0 / 7.0, 2.0 / 7.0, 4.0 / 7.0]) {
            assert!((v - want).abs() < 1e-15);
        }
        let a = softmax(&Tensor::from_vec(vec![1.0, 1.5, 2.0])).unwrap();
        let b = softmax(&Tensor::from_vec(vec![-40.0, -39.5, -39.0])).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-15);
        assert!(matches!(softmax(&Tensor::from_vec(vec![0.0, f64::NAN])), Err(Error::Numerical(_))));
    }

    #[test]
    fn zero_lstm_gives_zero_state() {
        let p = LstmParams {
            weight: Tensor::zeros(&[5, 8]),
            bias: Tensor::zeros(&[8]),
        };
        let (h, c) = lstm_step(&Tensor::from_vec(vec![0.3, -0.1, 0.8]), &Tensor::zeros(&[2]), &Tensor::zeros(&[2]), &p)
            .unwrap();
        assert_eq!(h.data(), &[0.0, 0.0]);
        assert_eq!(c.data(), &[0.0, 0.0]);
    }

    #[test]
    fn saturated_forget_gate_preserves_memory() {
        let hd = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let weight = Tensor::new(&[3 + hd, 4 * hd], (0..5 * 8).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap();
        let mut bias = Tensor::zeros(&[4 * hd]);
        bias.data_mut()[hd..2 * hd].fill(20.0);
        let p = LstmParams { weight, bias };
        let x = Tensor::from_vec(vec![0.2, -0.4, 0.9]);
        let h0 = Tensor::from_vec(vec![0.1, -0.3]);
        let c0 = Tensor::from_vec(vec![0.7, -1.2]);
        let (_, c) = lstm_step(&x, &h0, &c0, &p).unwrap();
        let mut xh = x.data().to_vec();
        xh.extend_from_slice(h0.data());
        let z = dense(&Tensor::from_vec(xh), &p.weight, Some(&p.bias)).unwrap();
        for u in 0..hd {
            let ig = sigmoid_scalar(z.data()[u]) * z.data()[3 * hd + u].tanh();
            assert!((c.data()[u] - (c0.data()[u] + ig)).abs() < 1e-6);
        }
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::full(&[100], 2.0);
        assert_eq!(dropout(&x, 0.0, true, &mut rng).unwrap(), x);
        assert_eq!(dropout(&x, 0.5, false, &mut rng).unwrap(), x);
        assert!(matches!(dropout(&x, 1.0, true, &mut rng), Err(Error::Config(_))));
        let y = dropout(&x, 0.5, true, &mut rng).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 4.0));
    }
}
