//! Neighborhood patches, flow stacks and windowed training samples.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::grid::GridSpec;
use super::normalize::Normalizer;
use super::volume::{FlowTensor, VolumeTensor};
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// `S × S × 2` normalized volume image; channel 0 start, channel 1 end.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub values: Tensor,
}

/// `S × S × 2l` normalized flow image; per interval (oldest first) an
/// inflow channel followed by an outflow channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowStack {
    pub values: Tensor,
    pub lookback: usize,
}

fn check_patch_size(size: usize) -> Result<()> {
    if size == 0 || size % 2 == 0 {
        return Err(Error::config(format!("patch size must be odd, got {size}")));
    }
    Ok(())
}

/// Volume neighborhood centered on `region`; off-grid cells hold the
/// normalized value of zero volume.
pub fn extract_patch(
    volume: &VolumeTensor,
    normalizer: &Normalizer,
    grid: &GridSpec,
    region: usize,
    interval: usize,
    size: usize,
) -> Result<Patch> {
    check_patch_size(size)?;
    if interval >= volume.intervals() {
        return Err(Error::data(format!("interval {interval} is outside the horizon")));
    }
    let half = (size / 2) as isize;
    let fill = normalizer.normalize_volume(0.0);
    let mut data = Vec::with_capacity(size * size * 2);
    for dr in 0..size as isize {
        for dc in 0..size as isize {
            match grid.offset(region, dr - half, dc - half) {
                Some(j) => {
                    data.push(normalizer.normalize_volume(volume.start(j, interval) as f64));
                    data.push(normalizer.normalize_volume(volume.end(j, interval) as f64));
                }
                None => {
                    data.push(fill);
                    data.push(fill);
                }
            }
        }
    }
    Ok(Patch {
        values: Tensor::new(&[size, size, 2], data)?,
    })
}

/// Inflow/outflow matrices of `region` over intervals
/// `interval-l+1 ..= interval`, restricted to the `S × S` neighborhood.
pub fn extract_flow_stack(
    flows: &FlowTensor,
    normalizer: &Normalizer,
    grid: &GridSpec,
    region: usize,
    interval: usize,
    size: usize,
    lookback: usize,
) -> Result<FlowStack> {
    check_patch_size(size)?;
    if lookback == 0 {
        return Err(Error::config("flow lookback must be at least 1"));
    }
    if interval + 1 < lookback {
        return Err(Error::data(format!(
            "interval {interval} has fewer than {lookback} intervals of flow history"
        )));
    }
    let half = (size / 2) as isize;
    let ch = 2 * lookback;
    let mut data = vec![0.0; size * size * ch];
    for dr in 0..size as isize {
        for dc in 0..size as isize {
            let cell = (dr as usize * size + dc as usize) * ch;
            let j = grid.offset(region, dr - half, dc - half);
            for k in 0..lookback {
                let t = interval + 1 - lookback + k;
                let (inn, out) = match j {
                    Some(j) => (flows.inflow(region, t, j), flows.outflow(region, t, j)),
                    None => (0, 0),
                };
                data[cell + 2 * k] = normalizer.normalize_flow(inn as f64);
                data[cell + 2 * k + 1] = normalizer.normalize_flow(out as f64);
            }
        }
    }
    Ok(FlowStack {
        values: Tensor::new(&[size, size, ch], data)?,
        lookback,
    })
}

/// Window geometry for sample generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub patch_size: usize,
    pub flow_lookback: usize,
    pub short_len: usize,
    pub days: usize,
    pub shifts: usize,
    pub intervals_per_day: usize,
    #[serde(default)]
    pub externals_dim: usize,
}

impl SampleSpec {
    pub fn validate(&self) -> Result<()> {
        check_patch_size(self.patch_size)?;
        if self.shifts == 0 || self.shifts % 2 == 0 {
            return Err(Error::config(format!("shift count Q must be odd, got {}", self.shifts)));
        }
        if self.flow_lookback == 0 || self.short_len == 0 || self.days == 0 {
            return Err(Error::config("lookback, short-term length and day count must be >= 1"));
        }
        if self.intervals_per_day == 0 {
            return Err(Error::config("intervals per day must be positive"));
        }
        Ok(())
    }

    pub fn half_shift(&self) -> usize {
        (self.shifts - 1) / 2
    }

    /// Earliest target interval whose inputs all fall inside the horizon.
    pub fn first_valid_target(&self) -> usize {
        let short_need = self.short_len + self.flow_lookback - 1;
        let long_need = self.days * self.intervals_per_day + self.half_shift();
        short_need.max(long_need)
    }

    /// Signed shift offsets in chronological order.
    pub fn shift_offsets(&self) -> Vec<isize> {
        let h = self.half_shift() as isize;
        (-h..=h).collect()
    }

    /// Input interval for day `p ∈ [1, P]` and shift index `q ∈ [0, Q)`.
    pub fn long_interval(&self, target: usize, p: usize, q: usize) -> usize {
        target + q - self.half_shift() - p * self.intervals_per_day
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub region: usize,
    pub target_interval: usize,
    /// Normalized `(start, end)` targets.
    pub target: [f64; 2],
    /// Raw `(start, end)` counts.
    pub target_raw: [f64; 2],
}

/// One materialized `(region, target interval)` instance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub region: usize,
    pub target_interval: usize,
    pub short_patches: Vec<Patch>,
    pub short_flows: Vec<FlowStack>,
    /// `long_patches[p - 1][q]`: day `p` back, shift index `q`
    /// (chronological, `q = 0` is the earliest shift).
    pub long_patches: Vec<Vec<Patch>>,
    pub long_flows: Vec<Vec<FlowStack>>,
    pub short_externals: Vec<Vec<f64>>,
    pub long_externals: Vec<Vec<Vec<f64>>>,
    pub target: [f64; 2],
    pub target_raw: [f64; 2],
}

/// Samples over one city, backed by per-interval frames so each
/// `(region, interval)` neighborhood is stored once.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub spec: SampleSpec,
    pub grid: GridSpec,
    pub intervals: usize,
    pub normalizer: Normalizer,
    /// Normalized volumes, `[interval][row][col][start|end]`.
    pub(crate) volume_frames: Vec<f64>,
    /// Neighborhood flow counts, `[region][interval][S][S][in|out]`.
    pub(crate) flow_frames: Vec<u32>,
    /// `[region][interval][externals_dim]`.
    pub(crate) externals: Vec<f64>,
    pub entries: Vec<SampleEntry>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Attach external features, laid out `[region][interval][dim]`.
    pub fn set_externals(&mut self, dim: usize, data: Vec<f64>) -> Result<()> {
        let n = self.grid.regions() * self.intervals * dim;
        if data.len() != n {
            return Err(Error::shape("externals", &[data.len()], &[n]));
        }
        self.spec.externals_dim = dim;
        self.externals = data;
        Ok(())
    }

    /// Indices of samples whose target interval lies in `range`.
    pub fn indices_in(&self, range: Range<usize>) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&k| range.contains(&self.entries[k].target_interval))
            .collect()
    }

    fn frame_patch(&self, region: usize, interval: usize) -> Result<Patch> {
        let s = self.spec.patch_size;
        let half = (s / 2) as isize;
        let fill = self.normalizer.normalize_volume(0.0);
        let (rows, cols) = (self.grid.rows, self.grid.cols);
        let base = interval * rows * cols * 2;
        let mut data = Vec::with_capacity(s * s * 2);
        for dr in 0..s as isize {
            for dc in 0..s as isize {
                match self.grid.offset(region, dr - half, dc - half) {
                    Some(j) => {
                        let o = base + j * 2;
                        data.extend_from_slice(&self.volume_frames[o..o + 2]);
                    }
                    None => data.extend_from_slice(&[fill, fill]),
                }
            }
        }
        Ok(Patch {
            values: Tensor::new(&[s, s, 2], data)?,
        })
    }

    /// Flow stack ending at `interval`; intervals before the horizon start
    /// contribute zero flow.
    fn frame_flows(&self, region: usize, interval: usize) -> Result<FlowStack> {
        let s = self.spec.patch_size;
        let l = self.spec.flow_lookback;
        let ch = 2 * l;
        let cell_n = s * s * 2;
        let zero = self.normalizer.normalize_flow(0.0);
        let mut data = vec![zero; s * s * ch];
        for k in 0..l {
            let Some(t) = (interval + 1 + k).checked_sub(l) else {
                continue;
            };
            let base = (region * self.intervals + t) * cell_n;
            let frame = &self.flow_frames[base..base + cell_n];
            for cell in 0..s * s {
                data[cell * ch + 2 * k] = self.normalizer.normalize_flow(frame[cell * 2] as f64);
                data[cell * ch + 2 * k + 1] =
                    self.normalizer.normalize_flow(frame[cell * 2 + 1] as f64);
            }
        }
        Ok(FlowStack {
            values: Tensor::new(&[s, s, ch], data)?,
            lookback: l,
        })
    }

    fn frame_externals(&self, region: usize, interval: usize) -> Vec<f64> {
        let e = self.spec.externals_dim;
        let o = (region * self.intervals + interval) * e;
        self.externals[o..o + e].to_vec()
    }

    pub fn sample(&self, k: usize) -> Result<TrainingSample> {
        let entry = *self
            .entries
            .get(k)
            .ok_or_else(|| Error::data(format!("sample index {k} out of range")))?;
        let (i, t) = (entry.region, entry.target_interval);
        let spec = &self.spec;
        let mut short_patches = Vec::with_capacity(spec.short_len);
        let mut short_flows = Vec::with_capacity(spec.short_len);
        let mut short_externals = Vec::with_capacity(spec.short_len);
        for s in 0..spec.short_len {
            let u = t - spec.short_len + s;
            short_patches.push(self.frame_patch(i, u)?);
            short_flows.push(self.frame_flows(i, u)?);
            short_externals.push(self.frame_externals(i, u));
        }
        let mut long_patches = Vec::with_capacity(spec.days);
        let mut long_flows = Vec::with_capacity(spec.days);
        let mut long_externals = Vec::with_capacity(spec.days);
        for p in 1..=spec.days {
            let mut pp = Vec::with_capacity(spec.shifts);
            let mut pf = Vec::with_capacity(spec.shifts);
            let mut pe = Vec::with_capacity(spec.shifts);
            for q in 0..spec.shifts {
                let u = spec.long_interval(t, p, q);
                pp.push(self.frame_patch(i, u)?);
                pf.push(self.frame_flows(i, u)?);
                pe.push(self.frame_externals(i, u));
            }
            long_patches.push(pp);
            long_flows.push(pf);
            long_externals.push(pe);
        }
        Ok(TrainingSample {
            region: i,
            target_interval: t,
            short_patches,
            short_flows,
            long_patches,
            long_flows,
            short_externals,
            long_externals,
            target: entry.target,
            target_raw: entry.target_raw,
        })
    }

    /// Every interval index an entry's inputs read from.
    pub fn input_intervals(&self, k: usize) -> Vec<usize> {
        let e = &self.entries[k];
        let spec = &self.spec;
        let t = e.target_interval;
        let mut out: Vec<usize> = (t - spec.short_len..t).collect();
        for p in 1..=spec.days {
            for q in 0..spec.shifts {
                out.push(spec.long_interval(t, p, q));
            }
        }
        out
    }
}

/// Build one sample per `(region, target interval)` with stride 1, ordered
/// by target interval then region.
pub fn make_samples(
    volume: &VolumeTensor,
    flows: &FlowTensor,
    grid: &GridSpec,
    spec: &SampleSpec,
    normalizer: &Normalizer,
) -> Result<SampleSet> {
    spec.validate()?;
    let n = grid.regions();
    let m = volume.intervals();
    if volume.regions() != n {
        return Err(Error::shape("make_samples", &[volume.regions()], &[n]));
    }
    let first = spec.first_valid_target();
    if spec.days * spec.intervals_per_day + spec.short_len >= m || first >= m {
        return Err(Error::config(format!(
            "horizon too short: {m} intervals cannot hold {} days of history plus {} short-term steps",
            spec.days, spec.short_len
        )));
    }

    let (rows, cols) = (grid.rows, grid.cols);
    let mut volume_frames = vec![0.0; m * rows * cols * 2];
    for t in 0..m {
        for j in 0..n {
            let o = (t * n + j) * 2;
            volume_frames[o] = normalizer.normalize_volume(volume.start(j, t) as f64);
            volume_frames[o + 1] = normalizer.normalize_volume(volume.end(j, t) as f64);
        }
    }

    let s = spec.patch_size;
    let half = (s / 2) as isize;
    let cell_n = s * s * 2;
    let mut flow_frames = vec![0u32; n * m * cell_n];
    let mut place = |i: usize, t: usize, j: usize, c: u32, channel: usize| {
        let (ri, ci) = grid.row_col(i);
        let (rj, cj) = grid.row_col(j);
        let dr = rj as isize - ri as isize + half;
        let dc = cj as isize - ci as isize + half;
        if (0..s as isize).contains(&dr) && (0..s as isize).contains(&dc) {
            let cell = dr as usize * s + dc as usize;
            flow_frames[(i * m + t) * cell_n + cell * 2 + channel] = c;
        }
    };
    for (&(i, t, j), &c) in &flows.inflow {
        if t < m {
            place(i, t, j, c, 0);
        }
    }
    for (&(i, t, j), &c) in &flows.outflow {
        if t < m {
            place(i, t, j, c, 1);
        }
    }

    let mut entries = Vec::with_capacity((m - first) * n);
    for t in first..m {
        for i in 0..n {
            let raw = [volume.start(i, t) as f64, volume.end(i, t) as f64];
            entries.push(SampleEntry {
                region: i,
                target_interval: t,
                target: [
                    normalizer.normalize_volume(raw[0]),
                    normalizer.normalize_volume(raw[1]),
                ],
                target_raw: raw,
            });
        }
    }

    Ok(SampleSet {
        spec: SampleSpec {
            externals_dim: 0,
            ..spec.clone()
        },
        grid: grid.clone(),
        intervals: m,
        normalizer: *normalizer,
        volume_frames,
        flow_frames,
        externals: Vec::new(),
        entries,
    })
}

/// Chronological split of `indices`: the earliest `fraction` of distinct
/// target intervals go to training, the rest to validation.
pub fn split_train_val(
    set: &SampleSet,
    indices: &[usize],
    fraction: f64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!("split fraction must be in (0, 1), got {fraction}")));
    }
    let mut times: Vec<usize> = indices
        .iter()
        .map(|&k| set.entries[k].target_interval)
        .collect();
    times.sort_unstable();
    times.dedup();
    let n_train = ((fraction * times.len() as f64).round() as usize).min(times.len());
    let boundary = times.get(n_train).copied().unwrap_or(usize::MAX);
    let (train, val) = indices
        .iter()
        .partition(|&&k| set.entries[k].target_interval < boundary);
    Ok((train, val))
}
