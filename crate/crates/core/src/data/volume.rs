//! Start/end volumes and region-pair flows aggregated from trips.

use std::collections::BTreeMap;

use super::grid::{GridSpec, TimeSpec};
use super::trips::TripTable;

/// Start and end counts per `(region, interval)`, stored region-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VolumeTensor {
    regions: usize,
    intervals: usize,
    start: Vec<u32>,
    end: Vec<u32>,
}

impl VolumeTensor {
    pub fn zeros(regions: usize, intervals: usize) -> Self {
        Self {
            regions,
            intervals,
            start: vec![0; regions * intervals],
            end: vec![0; regions * intervals],
        }
    }

    /// Build from region-major `start`/`end` arrays of length `regions·intervals`.
    pub fn from_counts(regions: usize, intervals: usize, start: Vec<u32>, end: Vec<u32>) -> Option<Self> {
        (start.len() == regions * intervals && end.len() == start.len()).then_some(Self {
            regions,
            intervals,
            start,
            end,
        })
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn start(&self, region: usize, t: usize) -> u32 {
        self.start[region * self.intervals + t]
    }

    pub fn end(&self, region: usize, t: usize) -> u32 {
        self.end[region * self.intervals + t]
    }

    pub fn set(&mut self, region: usize, t: usize, start: u32, end: u32) {
        self.start[region * self.intervals + t] = start;
        self.end[region * self.intervals + t] = end;
    }

    pub fn start_counts(&self) -> &[u32] {
        &self.start
    }

    pub fn end_counts(&self) -> &[u32] {
        &self.end
    }

    pub fn total_start(&self) -> u64 {
        self.start.iter().map(|&v| v as u64).sum()
    }

    pub fn total_end(&self) -> u64 {
        self.end.iter().map(|&v| v as u64).sum()
    }
}

/// Flow key: `(region, interval, other region)`.
pub type FlowKey = (usize, usize, usize);

/// Sparse flow counts. `outflow[(i, t, j)]` counts trips leaving `i` during
/// `t` for `j`; `inflow[(i, t, j)]` counts trips reaching `i` during `t` from `j`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlowTensor {
    pub outflow: BTreeMap<FlowKey, u32>,
    pub inflow: BTreeMap<FlowKey, u32>,
}

impl FlowTensor {
    pub fn outflow(&self, i: usize, t: usize, j: usize) -> u32 {
        self.outflow.get(&(i, t, j)).copied().unwrap_or(0)
    }

    pub fn inflow(&self, i: usize, t: usize, j: usize) -> u32 {
        self.inflow.get(&(i, t, j)).copied().unwrap_or(0)
    }

    /// Nonzero outflows of `(i, t)` as `(j, count)`.
    pub fn outflows_from(&self, i: usize, t: usize) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.outflow
            .range((i, t, 0)..=(i, t, usize::MAX))
            .map(|(&(_, _, j), &c)| (j, c))
    }

    /// Nonzero inflows of `(i, t)` as `(j, count)`.
    pub fn inflows_to(&self, i: usize, t: usize) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.inflow
            .range((i, t, 0)..=(i, t, usize::MAX))
            .map(|(&(_, _, j), &c)| (j, c))
    }
}

pub fn build_volume(trips: &TripTable, grid: &GridSpec, time: &TimeSpec) -> VolumeTensor {
    let mut v = VolumeTensor::zeros(grid.regions(), time.intervals);
    let m = time.intervals;
    for r in &trips.records {
        v.start[r.origin_region * m + r.depart_interval] += 1;
        v.end[r.dest_region * m + r.arrive_interval] += 1;
    }
    v
}

pub fn build_flows(trips: &TripTable) -> FlowTensor {
    let mut f = FlowTensor::default();
    for r in &trips.records {
        *f.outflow
            .entry((r.origin_region, r.depart_interval, r.dest_region))
            .or_default() += 1;
        *f.inflow
            .entry((r.dest_region, r.arrive_interval, r.origin_region))
            .or_default() += 1;
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::trips::TripRecord;

    fn single() -> TripTable {
        TripTable::from_records(vec![TripRecord {
            origin_region: 3,
            dest_region: 7,
            depart_interval: 5,
            arrive_interval: 6,
        }])
    }

    #[test]
    fn single_trip_volume() {
        let grid = GridSpec::new(3, 3).unwrap();
        let time = TimeSpec::new(30, 0, 10).unwrap();
        let v = build_volume(&single(), &grid, &time);
        assert_eq!(v.start(3, 5), 1);
        assert_eq!(v.end(7, 6), 1);
        assert_eq!(v.total_start(), 1);
        assert_eq!(v.total_end(), 1);
    }

    #[test]
    fn empty_table_gives_zero_tensor() {
        let grid = GridSpec::new(2, 2).unwrap();
        let time = TimeSpec::new(30, 0, 4).unwrap();
        let v = build_volume(&TripTable::default(), &grid, &time);
        assert_eq!(v, VolumeTensor::zeros(4, 4));
    }

    #[test]
    fn single_trip_flows() {
        let f = build_flows(&single());
        assert_eq!(f.outflow(3, 5, 7), 1);
        assert_eq!(f.inflow(7, 6, 3), 1);
        assert_eq!(f.outflow.len(), 1);
        assert_eq!(f.inflow.len(), 1);
        assert_eq!(f.outflows_from(3, 5).collect::<Vec<_>>(), vec![(7, 1)]);
    }
}
