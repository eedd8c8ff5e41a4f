mod common;

use common::{rand_tensor, rand_vec, rng};
use rand::Rng;
use stdn::nn::ops::{self, LstmParams};
use stdn::nn::Tensor;

#[test]
fn conv2d_matches_loop_oracle() {
    let mut r = rng(1);
    for _ in 0..100 {
        let (h, w) = (r.random_range(1..8), r.random_range(1..8));
        let (cin, cout) = (r.random_range(1..5), r.random_range(1..5));
        let k = [1, 3, 5][r.random_range(0..3)];
        let x = rand_tensor(&[h, w, cin], &mut r);
        let kern = rand_tensor(&[k, k, cin, cout], &mut r);
        let b = rand_tensor(&[cout], &mut r);
        let got = ops::conv2d(&x, &kern, &b).unwrap();
        assert!(got.max_abs_diff(&common::conv2d(&x, &kern, &b)) < 1e-10);
    }
}

#[test]
fn dense_matches_loop_oracle() {
    let mut r = rng(2);
    for _ in 0..100 {
        let (din, dout) = (r.random_range(1..20), r.random_range(1..20));
        let x = rand_vec(din, &mut r);
        let w = rand_tensor(&[din, dout], &mut r);
        let b = rand_vec(dout, &mut r);
        let got = ops::dense(&Tensor::from_vec(x.clone()), &w, Some(&Tensor::from_vec(b.clone()))).unwrap();
        let want = common::dense(&x, &w, Some(&b));
        for (a, e) in got.data().iter().zip(&want) {
            assert!((a - e).abs() < 1e-10);
        }
    }
}

#[test]
fn lstm_step_matches_loop_oracle() {
    let mut r = rng(3);
    for _ in 0..100 {
        let (d, hd) = (r.random_range(1..10), r.random_range(1..8));
        let x = rand_vec(d, &mut r);
        let h = rand_vec(hd, &mut r);
        let c = rand_vec(hd, &mut r);
        let p = LstmParams {
            weight: rand_tensor(&[d + hd, 4 * hd], &mut r),
            bias: rand_tensor(&[4 * hd], &mut r),
        };
        let (gh, gc) = ops::lstm_step(
            &Tensor::from_vec(x.clone()),
            &Tensor::from_vec(h.clone()),
            &Tensor::from_vec(c.clone()),
            &p,
        )
        .unwrap();
        let (wh, wc) = common::lstm_step(&x, &h, &c, &p.weight, p.bias.data());
        for (a, e) in gh.data().iter().chain(gc.data()).zip(wh.iter().chain(&wc)) {
            assert!((a - e).abs() < 1e-10);
        }
    }
}

#[test]
fn softmax_matches_oracle() {
    let mut r = rng(4);
    for _ in 0..100 {
        let s: Vec<f64> = (0..r.random_range(1..10)).map(|_| r.random_range(-5.0..5.0)).collect();
        let got = ops::softmax(&Tensor::from_vec(s.clone())).unwrap();
        for (a, e) in got.data().iter().zip(common::softmax(&s)) {
            assert!((a - e).abs() < 1e-10);
        }
        assert!(got.data().iter().all(|&v| v > 0.0));
        assert!((got.sum() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn dropout_keep_fraction_within_binomial_bound() {
    let mut r = rng(5);
    let x = Tensor::full(&[100_000], 1.0);
    let y = ops::dropout(&x, 0.5, true, &mut r).unwrap();
    let kept = y.data().iter().filter(|&&v| v != 0.0).count() as f64 / 1e5;
    assert!((0.49..=0.51).contains(&kept), "{kept}");
}

#[test]
fn every_op_passes_gradient_check() {
    for c in common::op_gradient_suite() {
        assert!(c.max_rel_error < c.expected, "{}: {}", c.op, c.max_rel_error);
    }
}
