//! Straight-line reference implementations used as test oracles. They are
//! written from the layer formulas with plain index loops and share no
//! code with the library kernels.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stdn::data::{FlowStack, Patch, TrainingSample, TripRecord, TripTable};
use stdn::model::{ModelConfig, Stdn, Variant};
use stdn::nn::{grad_check, GradBuffer, Graph, NodeId, ParamStore, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(shape, rand_vec(shape.iter().product(), rng)).unwrap()
}

pub fn tiny_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        patch_size: 3,
        conv_layers: 2,
        filters: 4,
        kernel_size: 3,
        flow_lookback: 2,
        short_len: 2,
        days: 2,
        shifts: 3,
        hidden: 8,
        lambda: 0.5,
        dropout: 0.0,
        externals_dim: 0,
    }
}

pub fn random_sample(c: &ModelConfig, seed: u64) -> TrainingSample {
    let mut r = rng(seed);
    let s = c.patch_size;
    let ch = 2 * c.flow_lookback;
    let patch = |r: &mut ChaCha8Rng| Patch {
        values: rand_tensor(&[s, s, 2], r),
    };
    let short_patches = (0..c.short_len).map(|_| patch(&mut r)).collect();
    let long_patches = (0..c.days).map(|_| (0..c.shifts).map(|_| patch(&mut r)).collect()).collect();
    let stack = |r: &mut ChaCha8Rng| FlowStack {
        values: rand_tensor(&[s, s, ch], r),
        lookback: c.flow_lookback,
    };
    let short_flows = (0..c.short_len).map(|_| stack(&mut r)).collect();
    let long_flows = (0..c.days).map(|_| (0..c.shifts).map(|_| stack(&mut r)).collect()).collect();
    let e = c.externals_dim;
    let short_externals = if e == 0 { Vec::new() } else { (0..c.short_len).map(|_| rand_vec(e, &mut r)).collect() };
    let long_externals = if e == 0 {
        Vec::new()
    } else {
        (0..c.days).map(|_| (0..c.shifts).map(|_| rand_vec(e, &mut r)).collect()).collect()
    };
    let target = [r.random_range(-0.9..0.9), r.random_range(-0.9..0.9)];
    TrainingSample {
        region: 0,
        target_interval: 0,
        short_patches,
        short_flows,
        long_patches,
        long_flows,
        short_externals,
        long_externals,
        target,
        target_raw: [0.0, 0.0],
    }
}

// ---- primitive oracles ----

/// `input [h][w][cin]`, `kernel [k][k][cin][cout]`, zero padding.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Tensor {
    let (h, w, cin) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (k, cout) = (kernel.shape()[0], kernel.shape()[3]);
    let half = (k / 2) as i64;
    let x = |r: i64, c: i64, ch: usize| -> f64 {
        if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
            0.0
        } else {
            input.data()[(r as usize * w + c as usize) * cin + ch]
        }
    };
    let kv = |dr: usize, dc: usize, ci: usize, o: usize| kernel.data()[((dr * k + dc) * cin + ci) * cout + o];
    let mut out = vec![0.0; h * w * cout];
    for r in 0..h {
        for c in 0..w {
            for o in 0..cout {
                let mut acc = bias.data()[o];
                for dr in 0..k {
                    for dc in 0..k {
                        for ci in 0..cin {
                            acc += kv(dr, dc, ci, o) * x(r as i64 + dr as i64 - half, c as i64 + dc as i64 - half, ci);
                        }
                    }
                }
                out[(r * w + c) * cout + o] = acc;
            }
        }
    }
    Tensor::new(&[h, w, cout], out).unwrap()
}

/// `out[j] = b[j] + Σ_i x[i]·W[i][j]`.
pub fn dense(x: &[f64], w: &Tensor, b: Option<&[f64]>) -> Vec<f64> {
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    (0..dout)
        .map(|j| {
            let mut acc = b.map_or(0.0, |b| b[j]);
            for i in 0..din {
                acc += x[i] * w.data()[i * dout + j];
            }
            acc
        })
        .collect()
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Forget-gate LSTM with gate blocks input, forget, output, candidate.
pub fn lstm_step(x: &[f64], h: &[f64], c: &[f64], w: &Tensor, b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hd = h.len();
    let xh: Vec<f64> = x.iter().chain(h).copied().collect();
    let z = dense(&xh, w, Some(b));
    let mut h_new = vec![0.0; hd];
    let mut c_new = vec![0.0; hd];
    for u in 0..hd {
        let i = sigmoid(z[u]);
        let f = sigmoid(z[hd + u]);
        let o = sigmoid(z[2 * hd + u]);
        let g = z[3 * hd + u].tanh();
        c_new[u] = f * c[u] + i * g;
        h_new[u] = o * c_new[u].tanh();
    }
    (h_new, c_new)
}

pub fn lstm_run(steps: &[Vec<f64>], w: &Tensor, b: &[f64], hidden: usize) -> Vec<Vec<f64>> {
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    let mut out = Vec::new();
    for x in steps {
        let (hn, cn) = lstm_step(x, &h, &c, w, b);
        h = hn;
        c = cn;
        out.push(h.clone());
    }
    out
}

/// Unshifted softmax; fine for the moderate scores used in tests.
pub fn softmax(s: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = s.iter().map(|v| v.exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

// ---- model oracle ----

pub fn p<'a>(store: &'a ParamStore, name: &str) -> &'a Tensor {
    &store.by_name(name).unwrap_or_else(|| panic!("missing {name}")).value
}

fn relu_t(t: &Tensor) -> Tensor {
    Tensor::new(t.shape(), t.data().iter().map(|v| v.max(0.0)).collect()).unwrap()
}

/// Gated (or plain) local CNN followed by the projection to `hidden`.
pub fn spatial(model: &Stdn, patch: &Patch, flows: &FlowStack) -> Vec<f64> {
    let c = model.config();
    let ps = model.params();
    let gated = matches!(c.variant, Variant::LstnFgm | Variant::Stdn);
    let mut y = patch.values.clone();
    let mut f = flows.values.clone();
    for k in 1..=c.conv_layers {
        y = relu_t(&conv2d(&y, p(ps, &format!("conv{k}.weight")), p(ps, &format!("conv{k}.bias"))));
        if gated {
            let pre = conv2d(&f, p(ps, &format!("flow_conv{k}.weight")), p(ps, &format!("flow_conv{k}.bias")));
            let gate: Vec<f64> = pre.data().iter().map(|&v| sigmoid(v)).collect();
            y = Tensor::new(y.shape(), y.data().iter().zip(&gate).map(|(a, g)| a * g).collect()).unwrap();
            f = relu_t(&pre);
        }
    }
    let mut rep = dense(y.data(), p(ps, "spatial_fc.weight"), Some(p(ps, "spatial_fc.bias").data()));
    if c.variant == Variant::LstnFi {
        rep.extend_from_slice(flows.values.data());
    }
    rep
}

fn step(model: &Stdn, patch: &Patch, flows: &FlowStack, ext: Option<&Vec<f64>>) -> Vec<f64> {
    let mut v = spatial(model, patch, flows);
    if let Some(e) = ext {
        v.extend_from_slice(e);
    }
    v
}

pub struct OracleOutput {
    pub prediction: [f64; 2],
    pub h_short: Vec<f64>,
    pub h_long: Option<Vec<f64>>,
    /// `alphas[p - 1]`, day `p` back.
    pub alphas: Vec<Vec<f64>>,
}

/// Attention summary per day then the day-level LSTM. `days[p - 1][q]`.
pub fn periodic(model: &Stdn, h_short: &[f64], days: &[Vec<Vec<f64>>], attend: bool) -> (Vec<f64>, Vec<Vec<f64>>) {
    let ps = model.params();
    let hd = model.config().hidden;
    let mut summaries = Vec::new();
    let mut alphas = Vec::new();
    for p_back in (1..=days.len()).rev() {
        let steps = &days[p_back - 1];
        let hs = lstm_run(steps, p(ps, "within_day_lstm.weight"), p(ps, "within_day_lstm.bias").data(), hd);
        if attend {
            let q = dense(h_short, p(ps, "attention.w_x"), Some(p(ps, "attention.b_x").data()));
            let scores: Vec<f64> = hs
                .iter()
                .map(|h| {
                    let k = dense(h, p(ps, "attention.w_h"), None);
                    let act: Vec<f64> = k.iter().zip(&q).map(|(a, b)| (a + b).tanh()).collect();
                    dense(&act, p(ps, "attention.v"), None)[0]
                })
                .collect();
            let a = softmax(&scores);
            let mut sum = vec![0.0; hd];
            for (w, h) in a.iter().zip(&hs) {
                for u in 0..hd {
                    sum[u] += w * h[u];
                }
            }
            summaries.push(sum);
            alphas.push(a);
        } else {
            summaries.push(hs.last().unwrap().clone());
        }
    }
    let out = lstm_run(&summaries, p(ps, "day_lstm.weight"), p(ps, "day_lstm.bias").data(), hd);
    alphas.reverse();
    (out.last().unwrap().clone(), alphas)
}

pub fn head(model: &Stdn, h_short: &[f64], h_long: Option<&[f64]>) -> [f64; 2] {
    let ps = model.params();
    let mut hc = h_short.to_vec();
    if let Some(l) = h_long {
        hc.extend_from_slice(l);
    }
    let z = dense(&hc, p(ps, "head.weight"), Some(p(ps, "head.bias").data()));
    [z[0].tanh(), z[1].tanh()]
}

pub fn forward(model: &Stdn, s: &TrainingSample) -> OracleOutput {
    let c = model.config();
    let ps = model.params();
    let center = c.shifts / 2;
    let ext_short = |k: usize| s.short_externals.get(k);
    let ext_long = |p_back: usize, q: usize| s.long_externals.get(p_back - 1).and_then(|d| d.get(q));
    let mut short_steps = Vec::new();
    if c.variant == Variant::LstnL {
        for p_back in (1..=c.days).rev() {
            short_steps.push(step(
                model,
                &s.long_patches[p_back - 1][center],
                &s.long_flows[p_back - 1][center],
                ext_long(p_back, center),
            ));
        }
    }
    for k in 0..c.short_len {
        short_steps.push(step(model, &s.short_patches[k], &s.short_flows[k], ext_short(k)));
    }
    let h_short = lstm_run(&short_steps, p(ps, "short_lstm.weight"), p(ps, "short_lstm.bias").data(), c.hidden)
        .pop()
        .unwrap();
    let long = match c.variant {
        Variant::LstnSl | Variant::LstnPsam | Variant::Stdn => {
            let attend = c.variant != Variant::LstnSl;
            let qs: Vec<usize> = if attend { (0..c.shifts).collect() } else { vec![center] };
            let days: Vec<Vec<Vec<f64>>> = (1..=c.days)
                .map(|p_back| {
                    qs.iter()
                        .map(|&q| step(model, &s.long_patches[p_back - 1][q], &s.long_flows[p_back - 1][q], ext_long(p_back, q)))
                        .collect()
                })
                .collect();
            Some(periodic(model, &h_short, &days, attend))
        }
        _ => None,
    };
    let (h_long, alphas) = match long {
        Some((h, a)) => (Some(h), a),
        None => (None, Vec::new()),
    };
    OracleOutput {
        prediction: head(model, &h_short, h_long.as_deref()),
        h_short,
        h_long,
        alphas,
    }
}

// ---- data oracles ----

/// Random pre-gridded trips over `n` regions and `m` intervals.
pub fn random_trips(n: usize, m: usize, count: usize, max_travel: usize, seed: u64) -> TripTable {
    let mut r = rng(seed);
    let records = (0..count)
        .map(|_| {
            let depart = r.random_range(0..m);
            let arrive = (depart + r.random_range(0..=max_travel)).min(m - 1);
            TripRecord {
                origin_region: r.random_range(0..n),
                dest_region: r.random_range(0..n),
                depart_interval: depart,
                arrive_interval: arrive,
            }
        })
        .collect();
    TripTable::from_records(records)
}

/// `(start[i][t], end[i][t])` by scanning every record per cell.
pub fn group_by_volume(trips: &TripTable, n: usize, m: usize) -> (Vec<Vec<u32>>, Vec<Vec<u32>>) {
    let mut start = vec![vec![0; m]; n];
    let mut end = vec![vec![0; m]; n];
    for i in 0..n {
        for t in 0..m {
            start[i][t] = trips.records.iter().filter(|r| r.origin_region == i && r.depart_interval == t).count() as u32;
            end[i][t] = trips.records.iter().filter(|r| r.dest_region == i && r.arrive_interval == t).count() as u32;
        }
    }
    (start, end)
}

// ---- gradient suite ----

/// Scalar objective `Σ_k r_k·out_k` of one op, differentiated with respect
/// to every input registered as a parameter. Returns the worst relative
/// error over 200 probes.
pub fn op_grad_error<F>(inputs: Vec<Tensor>, seed: u64, build: F) -> f64
where
    F: Fn(&mut Graph<'_>, &[NodeId]) -> stdn::Result<NodeId>,
{
    let mut store = ParamStore::new();
    let ids: Vec<_> = inputs
        .into_iter()
        .enumerate()
        .map(|(k, t)| store.add(format!("in{k}"), t).unwrap())
        .collect();
    let mut r = rng(seed);
    let projection = {
        let mut g = Graph::new(&store);
        let nodes: Vec<NodeId> = ids.iter().map(|&id| g.param(id)).collect();
        let out = build(&mut g, &nodes).unwrap();
        rand_vec(g.value(out).len(), &mut r)
    };
    let f = |ps: &ParamStore| -> stdn::Result<(f64, GradBuffer)> {
        let mut g = Graph::new(ps);
        let nodes: Vec<NodeId> = ids.iter().map(|&id| g.param(id)).collect();
        let out = build(&mut g, &nodes)?;
        let flat = g.flatten(out)?;
        let w = g.constant(Tensor::new(&[projection.len(), 1], projection.clone())?);
        let y = g.dense(flat, w, None)?;
        let v = g.value(y).data()[0];
        let grads = g.backward(y)?;
        Ok((v, g.param_grads(&grads)))
    };
    grad_check(f, &store, 200, 1.0, 1e-5, &mut r).unwrap().max_rel_error
}

pub struct OpCheck {
    pub op: &'static str,
    pub max_rel_error: f64,
    /// What this op is expected to reach at 64-bit.
    pub expected: f64,
}

/// Every differentiable graph op, each on inputs of model-like shape.
pub fn op_gradient_suite() -> Vec<OpCheck> {
    let mut out = Vec::new();
    let mut push = |op, expected, err| out.push(OpCheck { op, max_rel_error: err, expected });
    let mut r = rng(10);
    let inputs = vec![rand_tensor(&[7, 7, 2], &mut r), rand_tensor(&[3, 3, 2, 4], &mut r), rand_tensor(&[4], &mut r)];
    push("conv2d", 1e-6, op_grad_error(inputs, 11, |g, n| g.conv2d(n[0], n[1], n[2])));

    let inputs = vec![rand_tensor(&[9], &mut r), rand_tensor(&[9, 5], &mut r), rand_tensor(&[5], &mut r)];
    push("dense", 1e-6, op_grad_error(inputs, 13, |g, n| g.dense(n[0], n[1], Some(n[2]))));

    // keep relu inputs away from the kink
    let mut x = rand_tensor(&[12], &mut r);
    x.data_mut().iter_mut().for_each(|v| *v += 0.1f64.copysign(*v));
    push("relu", 1e-7, op_grad_error(vec![x.clone()], 15, |g, n| Ok(g.relu(n[0]))));
    push("sigmoid", 1e-7, op_grad_error(vec![x.clone()], 16, |g, n| Ok(g.sigmoid(n[0]))));
    push("tanh", 1e-7, op_grad_error(vec![x], 17, |g, n| Ok(g.tanh(n[0]))));

    let inputs = vec![rand_tensor(&[3], &mut r), rand_tensor(&[4], &mut r), rand_tensor(&[4], &mut r), rand_tensor(&[4], &mut r)];
    push(
        "softmax+weighted_sum",
        1e-6,
        op_grad_error(inputs, 19, |g, n| {
            let a = g.softmax(n[0])?;
            g.weighted_sum(a, &n[1..])
        }),
    );

    let inputs = vec![rand_tensor(&[2, 3], &mut r), rand_tensor(&[6], &mut r), rand_tensor(&[6], &mut r)];
    push(
        "reshape/mul/add/concat/slice/mul_const",
        1e-7,
        op_grad_error(inputs, 21, |g, n| {
            let a = g.reshape(n[0], &[6])?;
            let m = g.mul(a, n[1])?;
            let s = g.add(m, n[2])?;
            let c = g.concat(&[s, a]);
            let sl = g.slice(c, 2, 7)?;
            g.mul_const(sl, Tensor::from_vec(vec![2.0, 0.0, 1.0, -1.0, 0.5, 3.0, 1.0]))
        }),
    );

    let (d, hd) = (3, 4);
    let mut inputs = vec![rand_tensor(&[d + hd, 4 * hd], &mut r), rand_tensor(&[4 * hd], &mut r)];
    inputs.extend((0..3).map(|_| rand_tensor(&[d], &mut r)));
    push(
        "lstm_cell (3 steps)",
        1e-5,
        op_grad_error(inputs, 23, |g, n| {
            let mut h = g.constant(Tensor::zeros(&[hd]));
            let mut c = g.constant(Tensor::zeros(&[hd]));
            for &x in &n[2..] {
                let xh = g.concat(&[x, h]);
                let z = g.dense(xh, n[0], Some(n[1]))?;
                let hc = g.lstm_cell(z, c)?;
                h = g.slice(hc, 0, hd)?;
                c = g.slice(hc, hd, hd)?;
            }
            Ok(h)
        }),
    );

    push(
        "squared_error",
        1e-7,
        op_grad_error(vec![rand_tensor(&[2], &mut r)], 25, |g, n| g.squared_error(n[0], &[0.3, -0.2], &[0.7, 0.3])),
    );
    out
}

/// Worst relative error of the full model loss for `variant` on the tiny
/// configuration, over several samples.
pub fn model_grad_error(variant: Variant, dropout: f64) -> f64 {
    let cfg = ModelConfig { dropout, ..tiny_config(variant) };
    let m = Stdn::new(cfg, 21).unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let s = random_sample(m.config(), 100 + seed);
        let f = |p: &ParamStore| {
            let mut r = rng(seed);
            m.loss_and_grad_with(p, &s, Some(&mut r))
        };
        let report = grad_check(f, m.params(), 150, 1.0, 1e-5, &mut rng(seed + 50)).unwrap();
        worst = worst.max(report.max_rel_error);
    }
    worst
}
