//! The finite-difference checker must notice a wrong backward pass.

mod common;

use common::{rand_tensor, rng};
use stdn::nn::{grad_check, ops, GradBuffer, ParamStore, Tensor};

fn flip_spatially(kernel_grad: &Tensor) -> Tensor {
    let s = kernel_grad.shape().to_vec();
    let (k, inner) = (s[0], s[2] * s[3]);
    let src = kernel_grad.data();
    let mut out = vec![0.0; src.len()];
    for r in 0..k {
        for c in 0..k {
            let from = ((k - 1 - r) * k + (k - 1 - c)) * inner;
            out[(r * k + c) * inner..][..inner].copy_from_slice(&src[from..from + inner]);
        }
    }
    Tensor::new(&s, out).unwrap()
}

fn check(corrupt: bool) -> f64 {
    let mut r = rng(41);
    let mut store = ParamStore::new();
    let x = store.add("x", rand_tensor(&[5, 5, 2], &mut r)).unwrap();
    let w = store.add("w", rand_tensor(&[3, 3, 2, 3], &mut r)).unwrap();
    let b = store.add("b", rand_tensor(&[3], &mut r)).unwrap();
    let weights = rand_tensor(&[5, 5, 3], &mut r);
    let f = |ps: &ParamStore| {
        let (xv, wv, bv) = (&ps.get(x).value, &ps.get(w).value, &ps.get(b).value);
        let y = ops::conv2d(xv, wv, bv)?;
        let loss: f64 = y.data().iter().zip(weights.data()).map(|(a, c)| a * c).sum();
        let (gx, gw, gb) = ops::conv2d_backward(xv, wv, &weights)?;
        let gw = if corrupt { flip_spatially(&gw) } else { gw };
        let mut g = GradBuffer::zeros_like(ps);
        g.accumulate(x, &gx)?;
        g.accumulate(w, &gw)?;
        g.accumulate(b, &gb)?;
        Ok((loss, g))
    };
    let report = grad_check(f, &store, 400, 1e-4, 1e-5, &mut rng(42)).unwrap();
    report.max_rel_error
}

#[test]
fn correct_conv_backward_passes() {
    assert!(check(false) < 1e-6);
}

#[test]
fn flipped_kernel_gradient_is_caught() {
    let err = check(true);
    assert!(err > 1e-2, "checker missed a flipped kernel gradient ({err})");
}
