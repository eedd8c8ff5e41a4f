//! Forward computation of every variant on a [`Graph`].

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{LongPath, ModelConfig, Variant};
use crate::data::{FlowStack, Normalizer, Patch, TrainingSample};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{read_params, write_params};
use crate::nn::ops::dropout_mask;
use crate::nn::{GradBuffer, Graph, NodeId, ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, Copy)]
struct Affine {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Attention {
    w_h: ParamId,
    w_x: ParamId,
    b_x: ParamId,
    v: ParamId,
}

#[derive(Debug, Clone)]
struct ParamIds {
    conv: Vec<Affine>,
    flow_conv: Vec<Affine>,
    spatial_fc: Affine,
    short_lstm: Affine,
    within_day_lstm: Option<Affine>,
    attention: Option<Attention>,
    day_lstm: Option<Affine>,
    head: Affine,
}

/// Normalized and raw `(start, end)` forecast.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub start_norm: f64,
    pub end_norm: f64,
    pub start_raw: f64,
    pub end_raw: f64,
}

impl Prediction {
    pub fn from_normalized(norm: [f64; 2], normalizer: &Normalizer) -> Self {
        Self {
            start_norm: norm[0],
            end_norm: norm[1],
            start_raw: normalizer.denormalize_volume(norm[0]),
            end_raw: normalizer.denormalize_volume(norm[1]),
        }
    }
}

/// Attention weights per previous day: `weights[p - 1][q]` for day `p`
/// back and chronological shift index `q`. Empty without attention.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub weights: Vec<Vec<f64>>,
}

/// Per-sample dropout masks; `None` entries mean no dropout.
struct Masks {
    short: Option<(Tensor, Tensor)>,
    within_day: Option<(Tensor, Tensor)>,
    day: Option<(Tensor, Tensor)>,
}

impl Masks {
    fn none() -> Self {
        Self {
            short: None,
            within_day: None,
            day: None,
        }
    }
}

/// Graph nodes produced by one forward pass.
pub struct ForwardNodes {
    pub prediction: NodeId,
    pub h_short: NodeId,
    pub h_long: Option<NodeId>,
    pub attention: Vec<NodeId>,
}

/// A model instance: configuration plus every learned tensor.
#[derive(Debug, Clone)]
pub struct Stdn {
    config: ModelConfig,
    params: ParamStore,
    ids: ParamIds,
    data: Option<DataBinding>,
}

/// The data layout a trained model expects, carried in its checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataBinding {
    pub normalizer: Normalizer,
    pub intervals_per_day: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    model: ModelConfig,
    data: Option<DataBinding>,
}

fn glorot_conv<R: Rng>(
    store: &mut ParamStore,
    name: &str,
    k: usize,
    cin: usize,
    cout: usize,
    rng: &mut R,
) -> Result<Affine> {
    let weight = store.add_glorot(
        format!("{name}.weight"),
        &[k, k, cin, cout],
        k * k * cin,
        k * k * cout,
        rng,
    )?;
    let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]))?;
    Ok(Affine { weight, bias })
}

fn glorot_dense<R: Rng>(
    store: &mut ParamStore,
    name: &str,
    din: usize,
    dout: usize,
    rng: &mut R,
) -> Result<Affine> {
    let weight = store.add_glorot(format!("{name}.weight"), &[din, dout], din, dout, rng)?;
    let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[dout]))?;
    Ok(Affine { weight, bias })
}

fn lstm_layer<R: Rng>(
    store: &mut ParamStore,
    name: &str,
    din: usize,
    hidden: usize,
    rng: &mut R,
) -> Result<Affine> {
    let weight = store.add_glorot(
        format!("{name}.weight"),
        &[din + hidden, 4 * hidden],
        din + hidden,
        4 * hidden,
        rng,
    )?;
    let mut b = vec![0.0; 4 * hidden];
    // forget gate block
    b[hidden..2 * hidden].iter_mut().for_each(|x| *x = 1.0);
    let bias = store.add(format!("{name}.bias"), Tensor::from_vec(b))?;
    Ok(Affine { weight, bias })
}

impl Stdn {
    /// Fresh model with Glorot-uniform weights drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let mut store = ParamStore::new();
        let mut conv = Vec::new();
        let mut flow_conv = Vec::new();
        for k in 0..c.conv_layers {
            let cin = if k == 0 { 2 } else { c.filters };
            conv.push(glorot_conv(&mut store, &format!("conv{}", k + 1), c.kernel_size, cin, c.filters, &mut rng)?);
        }
        if c.variant.gated() {
            for k in 0..c.conv_layers {
                let cin = if k == 0 { 2 * c.flow_lookback } else { c.filters };
                flow_conv.push(glorot_conv(
                    &mut store,
                    &format!("flow_conv{}", k + 1),
                    c.kernel_size,
                    cin,
                    c.filters,
                    &mut rng,
                )?);
            }
        }
        let s2 = c.patch_size * c.patch_size;
        let spatial_fc = glorot_dense(&mut store, "spatial_fc", s2 * c.filters, c.hidden, &mut rng)?;
        let step_dim = Self::step_dim(c);
        let short_lstm = lstm_layer(&mut store, "short_lstm", step_dim, c.hidden, &mut rng)?;
        let (within_day_lstm, attention, day_lstm) = match c.variant.long_path() {
            LongPath::Recurrent { attention } => {
                let within = lstm_layer(&mut store, "within_day_lstm", step_dim, c.hidden, &mut rng)?;
                let att = if attention {
                    let h = c.hidden;
                    Some(Attention {
                        w_h: store.add_glorot("attention.w_h", &[h, h], h, h, &mut rng)?,
                        w_x: store.add_glorot("attention.w_x", &[h, h], h, h, &mut rng)?,
                        b_x: store.add("attention.b_x", Tensor::zeros(&[h]))?,
                        v: store.add_glorot("attention.v", &[h, 1], h, 1, &mut rng)?,
                    })
                } else {
                    None
                };
                let day = lstm_layer(&mut store, "day_lstm", c.hidden, c.hidden, &mut rng)?;
                (Some(within), att, Some(day))
            }
            _ => (None, None, None),
        };
        let head_in = Self::head_dim(c);
        let head = glorot_dense(&mut store, "head", head_in, 2, &mut rng)?;
        let ids = ParamIds {
            conv,
            flow_conv,
            spatial_fc,
            short_lstm,
            within_day_lstm,
            attention,
            day_lstm,
            head,
        };
        Ok(Self {
            config,
            params: store,
            ids,
            data: None,
        })
    }

    /// Width of one recurrent input step: spatial representation, optional
    /// raw flow features, external features.
    fn step_dim(c: &ModelConfig) -> usize {
        let flow = if c.variant.flow_features() {
            c.patch_size * c.patch_size * 2 * c.flow_lookback
        } else {
            0
        };
        c.hidden + flow + c.externals_dim
    }

    fn head_dim(c: &ModelConfig) -> usize {
        match c.variant.long_path() {
            LongPath::Recurrent { .. } => 2 * c.hidden,
            _ => c.hidden,
        }
    }

    /// Rebuild a model around existing parameter values; names and shapes
    /// must match what `config` would create.
    pub fn from_params(config: ModelConfig, params: &ParamStore) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if model.params.len() != params.len() {
            return Err(Error::config(format!(
                "checkpoint holds {} tensors, config expects {}",
                params.len(),
                model.params.len()
            )));
        }
        model.params.copy_values_from(params)?;
        Ok(model)
    }

    pub fn data_binding(&self) -> Option<&DataBinding> {
        self.data.as_ref()
    }

    pub fn set_data_binding(&mut self, binding: Option<DataBinding>) {
        self.data = binding;
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Copy every tensor whose name and shape also exist in `other`;
    /// returns how many were copied.
    pub fn share_params_from(&mut self, other: &Stdn) -> usize {
        let mut copied = 0;
        for p in self.params.iter_mut() {
            if let Some(src) = other.params.by_name(&p.name) {
                if src.value.shape() == p.value.shape() {
                    p.value = src.value.clone();
                    copied += 1;
                }
            }
        }
        copied
    }

    fn lstm_masks<R: Rng>(&self, din: usize, rng: &mut R) -> Result<Option<(Tensor, Tensor)>> {
        let rate = self.config.dropout;
        if rate == 0.0 {
            return Ok(None);
        }
        Ok(Some((
            dropout_mask(din, rate, rng)?,
            dropout_mask(self.config.hidden, rate, rng)?,
        )))
    }

    fn sample_masks<R: Rng>(&self, rng: &mut R) -> Result<Masks> {
        let d = Self::step_dim(&self.config);
        let short = self.lstm_masks(d, rng)?;
        let (within_day, day) = if self.ids.day_lstm.is_some() {
            (self.lstm_masks(d, rng)?, self.lstm_masks(self.config.hidden, rng)?)
        } else {
            (None, None)
        };
        Ok(Masks {
            short,
            within_day,
            day,
        })
    }

    /// Local CNN (optionally flow-gated) on one interval, then flatten and
    /// fully connected projection to `hidden`; LSTN-FI appends the raw flow stack.
    pub fn spatial_node(&self, g: &mut Graph<'_>, patch: &Patch, flows: &FlowStack) -> Result<NodeId> {
        let mut y = g.constant(patch.values.clone());
        let flow_in = if self.config.variant.gated() || self.config.variant.flow_features() {
            Some(g.constant(flows.values.clone()))
        } else {
            None
        };
        let mut f = flow_in;
        for (k, layer) in self.ids.conv.iter().enumerate() {
            let (w, b) = (g.param(layer.weight), g.param(layer.bias));
            let pre = g.conv2d(y, w, b)?;
            y = g.relu(pre);
            if let Some(fl) = self.ids.flow_conv.get(k) {
                let fx = f.expect("gated variants carry a flow stack");
                let (wf, bf) = (g.param(fl.weight), g.param(fl.bias));
                let fpre = g.conv2d(fx, wf, bf)?;
                let gate = g.sigmoid(fpre);
                y = g.mul(y, gate)?;
                f = Some(g.relu(fpre));
            }
        }
        let flat = g.flatten(y)?;
        let (w, b) = (g.param(self.ids.spatial_fc.weight), g.param(self.ids.spatial_fc.bias));
        let rep = g.dense(flat, w, Some(b))?;
        if self.config.variant.flow_features() {
            let raw = g.flatten(flow_in.expect("flow features"))?;
            return Ok(g.concat(&[rep, raw]));
        }
        Ok(rep)
    }

    fn step_input(&self, g: &mut Graph<'_>, patch: &Patch, flows: &FlowStack, ext: &[f64]) -> Result<NodeId> {
        let rep = self.spatial_node(g, patch, flows)?;
        if self.config.externals_dim == 0 {
            return Ok(rep);
        }
        if ext.len() != self.config.externals_dim {
            return Err(Error::shape("externals", &[ext.len()], &[self.config.externals_dim]));
        }
        let e = g.constant(Tensor::from_vec(ext.to_vec()));
        Ok(g.concat(&[rep, e]))
    }

    /// Unrolled LSTM from zero state; returns every hidden state.
    fn run_lstm(
        &self,
        g: &mut Graph<'_>,
        layer: Affine,
        inputs: &[NodeId],
        masks: Option<&(Tensor, Tensor)>,
    ) -> Result<Vec<NodeId>> {
        let hd = self.config.hidden;
        let (w, b) = (g.param(layer.weight), g.param(layer.bias));
        let mut h = g.constant(Tensor::zeros(&[hd]));
        let mut c = g.constant(Tensor::zeros(&[hd]));
        let mut out = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let (x, hm) = match masks {
                Some((mx, mh)) => (g.mul_const(x, mx.clone())?, g.mul_const(h, mh.clone())?),
                None => (x, h),
            };
            let xh = g.concat(&[x, hm]);
            let z = g.dense(xh, w, Some(b))?;
            let hc = g.lstm_cell(z, c)?;
            h = g.slice(hc, 0, hd)?;
            c = g.slice(hc, hd, hd)?;
            out.push(h);
        }
        Ok(out)
    }

    fn short_term_node(&self, g: &mut Graph<'_>, steps: &[NodeId], masks: &Masks) -> Result<NodeId> {
        if steps.is_empty() {
            return Err(Error::config("short-term sequence is empty"));
        }
        let hs = self.run_lstm(g, self.ids.short_lstm, steps, masks.short.as_ref())?;
        Ok(*hs.last().expect("non-empty"))
    }

    /// Per day (oldest first): within-day LSTM over the shifted steps,
    /// attention against `h_short`, then a day-level LSTM over the summaries.
    fn periodic_node(
        &self,
        g: &mut Graph<'_>,
        h_short: NodeId,
        days: &[Vec<NodeId>],
        masks: &Masks,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let within = self.ids.within_day_lstm.ok_or_else(|| Error::config("variant has no long-term path"))?;
        let day_lstm = self.ids.day_lstm.expect("paired with within-day LSTM");
        let mut summaries = Vec::with_capacity(days.len());
        let mut alphas = Vec::with_capacity(days.len());
        for steps in days {
            let hs = self.run_lstm(g, within, steps, masks.within_day.as_ref())?;
            let summary = match self.ids.attention {
                Some(att) => {
                    let (w_h, w_x, b_x, v) = (g.param(att.w_h), g.param(att.w_x), g.param(att.b_x), g.param(att.v));
                    let query = g.dense(h_short, w_x, Some(b_x))?;
                    let mut scores = Vec::with_capacity(hs.len());
                    for &h in &hs {
                        let key = g.dense(h, w_h, None)?;
                        let sum = g.add(key, query)?;
                        let act = g.tanh(sum);
                        scores.push(g.dense(act, v, None)?);
                    }
                    let scores = g.concat(&scores);
                    let alpha = g.softmax(scores)?;
                    alphas.push(alpha);
                    g.weighted_sum(alpha, &hs)?
                }
                None => *hs.last().expect("at least one shift"),
            };
            summaries.push(summary);
        }
        let out = self.run_lstm(g, day_lstm, &summaries, masks.day.as_ref())?;
        Ok((*out.last().expect("at least one day"), alphas))
    }

    fn head_node(&self, g: &mut Graph<'_>, h_short: NodeId, h_long: Option<NodeId>) -> Result<NodeId> {
        let hc = match h_long {
            Some(l) => g.concat(&[h_short, l]),
            None => h_short,
        };
        let (w, b) = (g.param(self.ids.head.weight), g.param(self.ids.head.bias));
        let z = g.dense(hc, w, Some(b))?;
        Ok(g.tanh(z))
    }

    fn check_sample(&self, s: &TrainingSample) -> Result<()> {
        let c = &self.config;
        if s.short_patches.len() != c.short_len {
            return Err(Error::shape("short-term window", &[s.short_patches.len()], &[c.short_len]));
        }
        let needs_long = c.variant.long_path() != LongPath::None;
        if needs_long && (s.long_patches.len() != c.days || s.long_patches.iter().any(|d| d.len() != c.shifts)) {
            return Err(Error::shape("long-term window", &[s.long_patches.len()], &[c.days, c.shifts]));
        }
        let want = [c.patch_size, c.patch_size, 2];
        if s.short_patches[0].values.shape() != want {
            return Err(Error::shape("patch", s.short_patches[0].values.shape(), &want));
        }
        let fwant = [c.patch_size, c.patch_size, 2 * c.flow_lookback];
        if s.short_flows[0].values.shape() != fwant {
            return Err(Error::shape("flow stack", s.short_flows[0].values.shape(), &fwant));
        }
        Ok(())
    }

    fn ext<'s>(list: &'s [Vec<f64>], k: usize) -> &'s [f64] {
        list.get(k).map_or(&[], Vec::as_slice)
    }

    fn forward_masked(&self, g: &mut Graph<'_>, s: &TrainingSample, masks: &Masks) -> Result<ForwardNodes> {
        self.check_sample(s)?;
        let c = &self.config;
        let center = c.shifts / 2;
        let mut short_steps = Vec::new();
        if c.variant.long_path() == LongPath::Concatenated {
            for p in (1..=c.days).rev() {
                let ext = s.long_externals.get(p - 1).map_or(&[][..], |d| Self::ext(d, center));
                short_steps.push(self.step_input(g, &s.long_patches[p - 1][center], &s.long_flows[p - 1][center], ext)?);
            }
        }
        for k in 0..c.short_len {
            short_steps.push(self.step_input(g, &s.short_patches[k], &s.short_flows[k], Self::ext(&s.short_externals, k))?);
        }
        let h_short = self.short_term_node(g, &short_steps, masks)?;

        let (h_long, attention) = match c.variant.long_path() {
            LongPath::Recurrent { attention } => {
                let shifts: Vec<usize> = if attention { (0..c.shifts).collect() } else { vec![center] };
                let mut days = Vec::with_capacity(c.days);
                for p in (1..=c.days).rev() {
                    let mut steps = Vec::with_capacity(shifts.len());
                    for &q in &shifts {
                        let ext = s.long_externals.get(p - 1).map_or(&[][..], |d| Self::ext(d, q));
                        steps.push(self.step_input(g, &s.long_patches[p - 1][q], &s.long_flows[p - 1][q], ext)?);
                    }
                    days.push(steps);
                }
                let (h, a) = self.periodic_node(g, h_short, &days, masks)?;
                (Some(h), a)
            }
            _ => (None, Vec::new()),
        };
        let prediction = self.head_node(g, h_short, h_long)?;
        Ok(ForwardNodes {
            prediction,
            h_short,
            h_long,
            attention,
        })
    }

    /// Build the forward graph; pass an rng to apply training-time dropout.
    pub fn forward<R: Rng>(&self, g: &mut Graph<'_>, sample: &TrainingSample, dropout_rng: Option<&mut R>) -> Result<ForwardNodes> {
        let masks = match dropout_rng {
            Some(rng) => self.sample_masks(rng)?,
            None => Masks::none(),
        };
        self.forward_masked(g, sample, &masks)
    }

    fn trace(g: &Graph<'_>, nodes: &ForwardNodes) -> AttentionTrace {
        // alphas are recorded oldest day first; the trace is indexed by days back
        let mut weights: Vec<Vec<f64>> = nodes.attention.iter().map(|&a| g.value(a).data().to_vec()).collect();
        weights.reverse();
        AttentionTrace { weights }
    }

    /// Inference-mode forecast in normalized units plus attention weights.
    pub fn predict_normalized(&self, sample: &TrainingSample) -> Result<([f64; 2], AttentionTrace)> {
        self.predict_with(&self.params, sample)
    }

    pub fn predict_with(&self, params: &ParamStore, sample: &TrainingSample) -> Result<([f64; 2], AttentionTrace)> {
        let mut g = Graph::new(params);
        let nodes = self.forward_masked(&mut g, sample, &Masks::none())?;
        let p = g.value(nodes.prediction).data();
        Ok(([p[0], p[1]], Self::trace(&g, &nodes)))
    }

    pub fn predict(&self, sample: &TrainingSample, normalizer: &Normalizer) -> Result<Prediction> {
        let (p, _) = self.predict_normalized(sample)?;
        Ok(Prediction::from_normalized(p, normalizer))
    }

    /// Per-sample loss and parameter gradients evaluated at `params`.
    pub fn loss_and_grad_with<R: Rng>(
        &self,
        params: &ParamStore,
        sample: &TrainingSample,
        dropout_rng: Option<&mut R>,
    ) -> Result<(f64, GradBuffer)> {
        let mut g = Graph::new(params);
        let nodes = self.forward(&mut g, sample, dropout_rng)?;
        let lambda = self.config.lambda;
        let loss = g.squared_error(nodes.prediction, &sample.target, &[lambda, 1.0 - lambda])?;
        let value = g.value(loss).data()[0];
        let grads = g.backward(loss)?;
        Ok((value, g.param_grads(&grads)))
    }

    pub fn loss_and_grad<R: Rng>(&self, sample: &TrainingSample, dropout_rng: Option<&mut R>) -> Result<(f64, GradBuffer)> {
        self.loss_and_grad_with(&self.params, sample, dropout_rng)
    }

    /// Inference-mode per-sample loss.
    pub fn sample_loss(&self, sample: &TrainingSample) -> Result<f64> {
        let (p, _) = self.predict_normalized(sample)?;
        Ok(loss(p, sample.target, self.config.lambda))
    }

    /// Spatial representation of one interval.
    pub fn spatial_repr(&self, patch: &Patch, flows: &FlowStack) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let n = self.spatial_node(&mut g, patch, flows)?;
        Ok(g.value(n).data().to_vec())
    }

    /// Final hidden state of the short-term LSTM over the given step inputs
    /// (each `[spatial; externals]`).
    pub fn encode_short(&self, steps: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let nodes: Vec<NodeId> = steps.iter().map(|s| g.constant(Tensor::from_vec(s.clone()))).collect();
        let h = self.short_term_node(&mut g, &nodes, &Masks::none())?;
        Ok(g.value(h).data().to_vec())
    }

    /// Long-term representation from per-day step inputs
    /// (`days[p - 1][q]`, day `p` back) given the short-term state.
    pub fn periodic_attention(&self, h_short: &[f64], days: &[Vec<Vec<f64>>]) -> Result<(Vec<f64>, AttentionTrace)> {
        let mut g = Graph::new(&self.params);
        let hs = g.constant(Tensor::from_vec(h_short.to_vec()));
        let nodes: Vec<Vec<NodeId>> = days
            .iter()
            .rev()
            .map(|d| d.iter().map(|s| g.constant(Tensor::from_vec(s.clone()))).collect())
            .collect();
        let (h, alphas) = self.periodic_node(&mut g, hs, &nodes, &Masks::none())?;
        let mut weights: Vec<Vec<f64>> = alphas.iter().map(|&a| g.value(a).data().to_vec()).collect();
        weights.reverse();
        Ok((g.value(h).data().to_vec(), AttentionTrace { weights }))
    }

    /// `tanh(W_fa·[h_short; h_long] + b_fa)`.
    pub fn predict_head(&self, h_short: &[f64], h_long: Option<&[f64]>) -> Result<[f64; 2]> {
        let mut g = Graph::new(&self.params);
        let s = g.constant(Tensor::from_vec(h_short.to_vec()));
        let l = h_long.map(|v| g.constant(Tensor::from_vec(v.to_vec())));
        let out = self.head_node(&mut g, s, l)?;
        let d = g.value(out).data();
        Ok([d[0], d[1]])
    }

    /// Parameter container followed by JSON metadata holding the model
    /// configuration and the data binding, if any.
    pub fn save<W: Write>(&self, out: &mut W) -> Result<()> {
        let meta = serde_json::to_string(&CheckpointMeta {
            model: self.config.clone(),
            data: self.data.clone(),
        })?;
        write_params(out, &self.params, Some(&meta))
    }

    pub fn load<R: Read>(input: &mut R) -> Result<Self> {
        let (params, meta) = read_params(input)?;
        let meta: CheckpointMeta = serde_json::from_str(&meta)?;
        let mut model = Self::from_params(meta.model, &params)?;
        model.data = meta.data;
        Ok(model)
    }
}

/// `λ·(ŷˢ − yˢ)² + (1 − λ)·(ŷᵉ − yᵉ)²` for one sample.
pub fn loss(pred: [f64; 2], target: [f64; 2], lambda: f64) -> f64 {
    lambda * (pred[0] - target[0]).powi(2) + (1.0 - lambda) * (pred[1] - target[1]).powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use rand_distr::{Distribution, Uniform};

    fn tiny(variant: Variant) -> ModelConfig {
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

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let u = Uniform::new(-1.0, 1.0).unwrap();
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| u.sample(rng)).collect()).unwrap()
    }

    fn random_sample(c: &ModelConfig, seed: u64) -> TrainingSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = c.patch_size;
        let patch = |rng: &mut ChaCha8Rng| Patch {
            values: random_tensor(&[s, s, 2], rng),
        };
        let short_patches = (0..c.short_len).map(|_| patch(&mut rng)).collect();
        let long_patches = (0..c.days)
            .map(|_| (0..c.shifts).map(|_| patch(&mut rng)).collect())
            .collect();
        let stack = |rng: &mut ChaCha8Rng| FlowStack {
            values: random_tensor(&[s, s, 2 * c.flow_lookback], rng),
            lookback: c.flow_lookback,
        };
        let short_flows = (0..c.short_len).map(|_| stack(&mut rng)).collect();
        let long_flows = (0..c.days)
            .map(|_| (0..c.shifts).map(|_| stack(&mut rng)).collect())
            .collect();
        TrainingSample {
            region: 0,
            target_interval: 0,
            short_patches,
            short_flows,
            long_patches,
            long_flows,
            short_externals: Vec::new(),
            long_externals: Vec::new(),
            target: [0.3, -0.2],
            target_raw: [13.0, 8.0],
        }
    }

    fn set_all(model: &mut Stdn, prefix: &str, suffix: &str, value: f64) {
        for p in model.params_mut().iter_mut() {
            if p.name.starts_with(prefix) && p.name.ends_with(suffix) {
                p.value.fill(value);
            }
        }
    }

    fn lstm_count(d: usize, h: usize) -> usize {
        (d + h) * 4 * h + 4 * h
    }

    fn expected_count(c: &ModelConfig) -> usize {
        let (k, f, h, s2) = (c.kernel_size, c.filters, c.hidden, c.patch_size * c.patch_size);
        let stack = |cin: usize| -> usize {
            (0..c.conv_layers)
                .map(|layer| {
                    let i = if layer == 0 { cin } else { f };
                    k * k * i * f + f
                })
                .sum()
        };
        let mut n = stack(2) + s2 * f * h + h;
        let mut step = h;
        match c.variant {
            Variant::LstnFgm | Variant::Stdn => n += stack(2 * c.flow_lookback),
            Variant::LstnFi => step += s2 * 2 * c.flow_lookback,
            _ => {}
        }
        n += lstm_count(step, h);
        let two = matches!(c.variant, Variant::LstnSl | Variant::LstnPsam | Variant::Stdn);
        if two {
            n += lstm_count(step, h) + lstm_count(h, h);
        }
        if matches!(c.variant, Variant::LstnPsam | Variant::Stdn) {
            n += 2 * h * h + 2 * h;
        }
        n + (if two { 2 * h } else { h }) * 2 + 2
    }

    #[test]
    fn parameter_counts_match_closed_form() {
        for v in Variant::ALL {
            for c in [tiny(v), ModelConfig { variant: v, ..Default::default() }] {
                let m = Stdn::new(c.clone(), 1).unwrap();
                assert_eq!(m.params().scalar_count(), expected_count(&c), "{v}");
            }
        }
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let m = Stdn::new(tiny(Variant::Stdn), 3).unwrap();
        let b = m.params().by_name("day_lstm.bias").unwrap().value.data().to_vec();
        assert_eq!(&b[..8], &[0.0; 8]);
        assert_eq!(&b[8..16], &[1.0; 8]);
        assert_eq!(&b[16..], &[0.0; 16]);
    }

    #[test]
    fn lstn_never_reads_flow_stacks() {
        let m = Stdn::new(tiny(Variant::Lstn), 5).unwrap();
        let s = random_sample(m.config(), 9);
        let mut t = s.clone();
        for f in t.short_flows.iter_mut().chain(t.long_flows.iter_mut().flatten()) {
            f.values.fill(1e6);
        }
        let a = m.predict_normalized(&s).unwrap().0;
        let b = m.predict_normalized(&t).unwrap().0;
        assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
    }

    #[test]
    fn closed_gate_reduces_spatial_repr_to_dense_bias() {
        let mut m = Stdn::new(tiny(Variant::LstnFgm), 2).unwrap();
        set_all(&mut m, "flow_conv", ".weight", 0.0);
        set_all(&mut m, "flow_conv", ".bias", -20.0);
        set_all(&mut m, "spatial_fc", ".bias", 0.25);
        let s = random_sample(m.config(), 4);
        let zero_flows = FlowStack {
            values: Tensor::zeros(s.short_flows[0].values.shape()),
            lookback: 2,
        };
        let rep = m.spatial_repr(&s.short_patches[0], &zero_flows).unwrap();
        for v in rep {
            assert!((v - 0.25).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn zero_flow_weights_give_half_gate() {
        // with one layer the gated output is exactly half the ungated one
        let mut c1 = tiny(Variant::LstnFgm);
        c1.conv_layers = 1;
        let mut g1 = Stdn::new(c1.clone(), 2).unwrap();
        set_all(&mut g1, "flow_conv", "", 0.0);
        set_all(&mut g1, "spatial_fc", ".bias", 0.0);
        let mut p1 = Stdn::new(ModelConfig { variant: Variant::Lstn, ..c1 }, 0).unwrap();
        p1.share_params_from(&g1);
        let s = random_sample(g1.config(), 6);
        let a = g1.spatial_repr(&s.short_patches[0], &s.short_flows[0]).unwrap();
        let b = p1.spatial_repr(&s.short_patches[0], &s.short_flows[0]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - 0.5 * y).abs() < 1e-12);
        }
    }

    #[test]
    fn open_gate_matches_ungated_variant() {
        let mut gated = Stdn::new(tiny(Variant::LstnFgm), 8).unwrap();
        set_all(&mut gated, "flow_conv", ".weight", 0.0);
        set_all(&mut gated, "flow_conv", ".bias", 20.0);
        let mut plain = Stdn::new(tiny(Variant::Lstn), 0).unwrap();
        plain.share_params_from(&gated);
        let s = random_sample(gated.config(), 1);
        let a = gated.predict_normalized(&s).unwrap().0;
        let b = plain.predict_normalized(&s).unwrap().0;
        assert!((a[0] - b[0]).abs() < 1e-4 && (a[1] - b[1]).abs() < 1e-4);
    }

    #[test]
    fn single_shift_attention_is_pass_through() {
        let psam_cfg = ModelConfig {
            shifts: 1,
            ..tiny(Variant::LstnPsam)
        };
        let psam = Stdn::new(psam_cfg, 3).unwrap();
        let mut sl = Stdn::new(tiny(Variant::LstnSl), 0).unwrap();
        assert_eq!(sl.share_params_from(&psam), sl.params().len());
        let full = random_sample(sl.config(), 2);
        let mut single = full.clone();
        single.long_patches = full.long_patches.iter().map(|d| vec![d[1].clone()]).collect();
        single.long_flows = full.long_flows.iter().map(|d| vec![d[1].clone()]).collect();
        let (a, trace) = psam.predict_normalized(&single).unwrap();
        let (b, _) = sl.predict_normalized(&full).unwrap();
        assert_eq!(a, b);
        assert_eq!(trace.weights, vec![vec![1.0], vec![1.0]]);
    }

    #[test]
    fn zero_score_vector_gives_uniform_attention() {
        let mut m = Stdn::new(tiny(Variant::Stdn), 4).unwrap();
        set_all(&mut m, "attention.v", "", 0.0);
        let (_, trace) = m.predict_normalized(&random_sample(m.config(), 3)).unwrap();
        assert_eq!(trace.weights.len(), 2);
        for day in trace.weights {
            for a in day {
                assert!((a - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_weights_normalized() {
        let m = Stdn::new(tiny(Variant::Stdn), 4).unwrap();
        for seed in 0..5 {
            let (_, trace) = m.predict_normalized(&random_sample(m.config(), seed)).unwrap();
            for day in trace.weights {
                assert!(day.iter().all(|&a| a >= 0.0));
                assert!((day.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_head_predicts_midpoint() {
        let mut m = Stdn::new(tiny(Variant::Stdn), 4).unwrap();
        set_all(&mut m, "head", "", 0.0);
        let (p, _) = m.predict_normalized(&random_sample(m.config(), 0)).unwrap();
        assert_eq!(p, [0.0, 0.0]);
        let norm = Normalizer::new(0.0, 40.0, 0.0, 10.0);
        let pred = Prediction::from_normalized(p, &norm);
        assert_eq!((pred.start_raw, pred.end_raw), (20.0, 20.0));
    }

    #[test]
    fn loss_arithmetic() {
        assert_eq!(loss([0.3, 0.1], [0.3, 0.1], 0.5), 0.0);
        assert!((loss([0.2, -0.4], [0.0, 0.0], 0.5) - 0.10).abs() < 1e-15);
        assert_eq!(loss([0.2, 0.9], [0.0, 0.0], 1.0), loss([0.2, -0.7], [0.0, 0.3], 1.0));
    }

    #[test]
    fn wrong_window_is_a_shape_error() {
        let m = Stdn::new(tiny(Variant::Lstn), 4).unwrap();
        let mut s = random_sample(m.config(), 0);
        s.short_patches.pop();
        assert!(matches!(m.predict_normalized(&s), Err(Error::Shape { .. })));
    }

    #[test]
    fn every_variant_passes_grad_check() {
        for v in Variant::ALL {
            let mut c = tiny(v);
            c.dropout = 0.3;
            let m = Stdn::new(c, 11).unwrap();
            let s = random_sample(m.config(), 12);
            let f = |p: &ParamStore| {
                let mut rng = ChaCha8Rng::seed_from_u64(99);
                m.loss_and_grad_with(p, &s, Some(&mut rng))
            };
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let report = grad_check(f, m.params(), 60, 1e-4, 1e-5, &mut rng).unwrap();
            assert!(report.passed, "{v}: {}", report.max_rel_error);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut m = Stdn::new(tiny(Variant::LstnPsam), 4).unwrap();
        m.set_data_binding(Some(DataBinding {
            normalizer: Normalizer::new(0.0, 9.0, 0.0, 2.0),
            intervals_per_day: 48,
            grid_rows: 4,
            grid_cols: 4,
        }));
        let mut buf = Vec::new();
        m.save(&mut buf).unwrap();
        let back = Stdn::load(&mut buf.as_slice()).unwrap();
        assert_eq!(back.config(), m.config());
        assert_eq!(back.data_binding(), m.data_binding());
        let s = random_sample(m.config(), 1);
        assert_eq!(back.predict_normalized(&s).unwrap(), m.predict_normalized(&s).unwrap());
    }
}
