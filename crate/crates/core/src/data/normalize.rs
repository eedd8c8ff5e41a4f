use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::volume::{FlowTensor, VolumeTensor};

/// Min-max scaling of volumes and flows onto `[-1, 1]`, fitted on a
/// training interval range. Values outside the fitted range extrapolate
/// linearly; nothing is clamped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub vol_min: f64,
    pub vol_max: f64,
    pub flow_min: f64,
    pub flow_max: f64,
}

fn to_unit(x: f64, min: f64, max: f64) -> f64 {
    if max > min {
        2.0 * (x - min) / (max - min) - 1.0
    } else {
        0.0
    }
}

fn from_unit(y: f64, min: f64, max: f64) -> f64 {
    if max > min {
        (y + 1.0) / 2.0 * (max - min) + min
    } else {
        min
    }
}

impl Normalizer {
    pub fn new(vol_min: f64, vol_max: f64, flow_min: f64, flow_max: f64) -> Self {
        Self {
            vol_min,
            vol_max,
            flow_min,
            flow_max,
        }
    }

    /// Fit on intervals in `train_range` only. Both volume channels share
    /// one range; flows include the implicit zeros of the sparse map.
    pub fn fit(volume: &VolumeTensor, flows: &FlowTensor, train_range: Range<usize>) -> Self {
        let range = train_range.start..train_range.end.min(volume.intervals());
        let mut vol_min = f64::INFINITY;
        let mut vol_max = f64::NEG_INFINITY;
        for i in 0..volume.regions() {
            for t in range.clone() {
                for v in [volume.start(i, t), volume.end(i, t)] {
                    vol_min = vol_min.min(v as f64);
                    vol_max = vol_max.max(v as f64);
                }
            }
        }
        if !vol_min.is_finite() {
            vol_min = 0.0;
            vol_max = 0.0;
        }

        let n = volume.regions();
        let mut flow_max: f64 = 0.0;
        let mut flow_min = f64::INFINITY;
        let mut nonzero = 0usize;
        for map in [&flows.outflow, &flows.inflow] {
            for (&(_, t, _), &c) in map.iter() {
                if range.contains(&t) {
                    flow_max = flow_max.max(c as f64);
                    flow_min = flow_min.min(c as f64);
                    nonzero += 1;
                }
            }
        }
        let dense = 2 * n * n * range.len();
        if nonzero < dense || !flow_min.is_finite() {
            flow_min = 0.0;
        }

        let out = Self::new(vol_min, vol_max, flow_min, flow_max);
        if out.vol_max <= out.vol_min {
            log::warn!("volume range is degenerate ({vol_min}); volumes map to 0");
        }
        if out.flow_max <= out.flow_min {
            log::warn!("flow range is degenerate; flows map to 0");
        }
        out
    }

    pub fn normalize_volume(&self, x: f64) -> f64 {
        to_unit(x, self.vol_min, self.vol_max)
    }

    pub fn denormalize_volume(&self, y: f64) -> f64 {
        from_unit(y, self.vol_min, self.vol_max)
    }

    pub fn normalize_flow(&self, x: f64) -> f64 {
        to_unit(x, self.flow_min, self.flow_max)
    }

    pub fn denormalize_flow(&self, y: f64) -> f64 {
        from_unit(y, self.flow_min, self.flow_max)
    }
}
