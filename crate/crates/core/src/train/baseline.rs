//! Historical-average baseline.

use std::collections::HashMap;
use std::ops::Range;

use super::metrics::Metrics;
use crate::data::{SampleEntry, TimeSpec, VolumeTensor};
use crate::error::Result;

const SECONDS_PER_DAY: i64 = 86_400;

/// Mean training volume per region and calendar slot.
#[derive(Debug, Clone)]
pub struct HistoricalAverage {
    time: TimeSpec,
    /// (region, clock slot, weekday) -> (sum start, sum end, count)
    by_weekday: HashMap<(usize, usize, u8), ([f64; 2], usize)>,
    by_clock: HashMap<(usize, usize), ([f64; 2], usize)>,
    by_region: Vec<([f64; 2], usize)>,
}

fn clock_slot(time: &TimeSpec, t: usize) -> usize {
    let ts = time.interval_start(t);
    (ts.rem_euclid(SECONDS_PER_DAY) / time.interval_seconds()) as usize
}

/// 0 = Monday.
fn weekday(time: &TimeSpec, t: usize) -> u8 {
    let day = time.interval_start(t).div_euclid(SECONDS_PER_DAY);
    // 1970-01-01 was a Thursday
    ((day + 3).rem_euclid(7)) as u8
}

fn add(acc: &mut ([f64; 2], usize), v: [f64; 2]) {
    acc.0[0] += v[0];
    acc.0[1] += v[1];
    acc.1 += 1;
}

fn mean(acc: &([f64; 2], usize)) -> [f64; 2] {
    let n = acc.1 as f64;
    [acc.0[0] / n, acc.0[1] / n]
}

impl HistoricalAverage {
    pub fn fit(volume: &VolumeTensor, time: &TimeSpec, train: Range<usize>) -> Self {
        let mut by_weekday = HashMap::new();
        let mut by_clock = HashMap::new();
        let mut by_region = vec![([0.0; 2], 0); volume.regions()];
        for t in train.start..train.end.min(volume.intervals()) {
            let (slot, day) = (clock_slot(time, t), weekday(time, t));
            for i in 0..volume.regions() {
                let v = [volume.start(i, t) as f64, volume.end(i, t) as f64];
                add(by_weekday.entry((i, slot, day)).or_insert(([0.0; 2], 0)), v);
                add(by_clock.entry((i, slot)).or_insert(([0.0; 2], 0)), v);
                add(&mut by_region[i], v);
            }
        }
        Self {
            time: time.clone(),
            by_weekday,
            by_clock,
            by_region,
        }
    }

    /// Same-weekday mean when at least two such slots were seen, otherwise
    /// the same-clock-time mean, otherwise the region mean.
    pub fn predict(&self, region: usize, t: usize) -> [f64; 2] {
        let slot = clock_slot(&self.time, t);
        if let Some(acc) = self.by_weekday.get(&(region, slot, weekday(&self.time, t))) {
            if acc.1 >= 2 {
                return mean(acc);
            }
        }
        if let Some(acc) = self.by_clock.get(&(region, slot)) {
            return mean(acc);
        }
        match self.by_region.get(region) {
            Some(acc) if acc.1 > 0 => mean(acc),
            _ => [0.0, 0.0],
        }
    }
}

/// Fit on `train` intervals and score the given test entries.
pub fn historical_average_baseline(
    volume: &VolumeTensor,
    time: &TimeSpec,
    train: Range<usize>,
    test: &[SampleEntry],
    threshold: f64,
) -> Result<Metrics> {
    let ha = HistoricalAverage::fit(volume, time, train);
    let preds: Vec<[f64; 2]> = test.iter().map(|e| ha.predict(e.region, e.target_interval)).collect();
    let truths: Vec<[f64; 2]> = test.iter().map(|e| e.target_raw).collect();
    Ok(Metrics::compute(&preds, &truths, threshold))
}
