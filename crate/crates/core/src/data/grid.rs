use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Latitude/longitude box mapped onto the grid; row 0 sits at `min_lat`,
/// column 0 at `min_lon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoBounds {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

/// Rectangular partition of the city into `rows × cols` regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub region_edge_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<GeoBounds>,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::config(format!("grid must be at least 1x1, got {rows}x{cols}")));
        }
        Ok(Self {
            rows,
            cols,
            region_edge_m: 1000.0,
            bounds: None,
        })
    }

    pub fn with_bounds(mut self, bounds: GeoBounds) -> Result<Self> {
        if !(bounds.max_lat > bounds.min_lat && bounds.max_lon > bounds.min_lon) {
            return Err(Error::config("grid bounds must have max > min on both axes"));
        }
        self.bounds = Some(bounds);
        Ok(self)
    }

    pub fn regions(&self) -> usize {
        self.rows * self.cols
    }

    pub fn row_col(&self, region: usize) -> (usize, usize) {
        (region / self.cols, region % self.cols)
    }

    pub fn region(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    /// Region at a signed offset from `region`, if it lies on the grid.
    pub fn offset(&self, region: usize, dr: isize, dc: isize) -> Option<usize> {
        let (r, c) = self.row_col(region);
        let r = r as isize + dr;
        let c = c as isize + dc;
        if r < 0 || c < 0 || r >= self.rows as isize || c >= self.cols as isize {
            None
        } else {
            Some(self.region(r as usize, c as usize))
        }
    }

    /// Region containing a coordinate; half-open on the max edges.
    pub fn locate(&self, lat: f64, lon: f64) -> Option<usize> {
        let b = self.bounds?;
        if !(lat >= b.min_lat && lat < b.max_lat && lon >= b.min_lon && lon < b.max_lon) {
            return None;
        }
        let row = ((lat - b.min_lat) / (b.max_lat - b.min_lat) * self.rows as f64) as usize;
        let col = ((lon - b.min_lon) / (b.max_lon - b.min_lon) * self.cols as f64) as usize;
        Some(self.region(row.min(self.rows - 1), col.min(self.cols - 1)))
    }
}

/// Equal-length interval calendar starting at `start_epoch` (seconds, UTC).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeSpec {
    pub interval_minutes: u32,
    pub start_epoch: i64,
    pub intervals: usize,
}

impl TimeSpec {
    pub fn new(interval_minutes: u32, start_epoch: i64, intervals: usize) -> Result<Self> {
        if interval_minutes == 0 {
            return Err(Error::config("interval length must be positive"));
        }
        Ok(Self {
            interval_minutes,
            start_epoch,
            intervals,
        })
    }

    /// Calendar spanning whole days.
    pub fn days(interval_minutes: u32, start_epoch: i64, days: usize) -> Result<Self> {
        let spec = Self::new(interval_minutes, start_epoch, 0)?;
        let per_day = spec.intervals_per_day()?;
        Ok(Self {
            intervals: per_day * days,
            ..spec
        })
    }

    pub fn interval_seconds(&self) -> i64 {
        self.interval_minutes as i64 * 60
    }

    pub fn intervals_per_day(&self) -> Result<usize> {
        if 1440 % self.interval_minutes != 0 {
            return Err(Error::config(format!(
                "interval of {} minutes does not divide a day",
                self.interval_minutes
            )));
        }
        Ok((1440 / self.interval_minutes) as usize)
    }

    /// Interval index of a timestamp, or `None` outside `[0, m)`.
    pub fn interval_of(&self, ts: i64) -> Option<usize> {
        if ts < self.start_epoch {
            return None;
        }
        let idx = ((ts - self.start_epoch) / self.interval_seconds()) as usize;
        (idx < self.intervals).then_some(idx)
    }

    pub fn interval_start(&self, idx: usize) -> i64 {
        self.start_epoch + idx as i64 * self.interval_seconds()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn region_index_round_trips() {
        let g = GridSpec::new(10, 20).unwrap();
        assert_eq!(g.regions(), 200);
        for i in 0..g.regions() {
            let (r, c) = g.row_col(i);
            assert_eq!(g.region(r, c), i);
        }
        assert_eq!(g.row_col(45), (2, 5));
    }

    #[test]
    fn offsets_respect_edges() {
        let g = GridSpec::new(4, 4).unwrap();
        assert_eq!(g.offset(0, -1, 0), None);
        assert_eq!(g.offset(0, 1, 1), Some(5));
        assert_eq!(g.offset(15, 0, 1), None);
    }

    #[test]
    fn zero_sized_grid_rejected() {
        assert!(GridSpec::new(0, 3).is_err());
    }

    #[test]
    fn interval_arithmetic() {
        let t = TimeSpec::days(30, 0, 1).unwrap();
        assert_eq!(t.intervals, 48);
        assert_eq!(t.interval_of(10 * 60), Some(0));
        assert_eq!(t.interval_of(40 * 60), Some(1));
        assert_eq!(t.interval_of(-1), None);
        assert_eq!(t.interval_of(48 * 1800), None);
    }

    #[test]
    fn locate_maps_into_cells() {
        let g = GridSpec::new(2, 2)
            .unwrap()
            .with_bounds(GeoBounds {
                min_lat: 0.0,
                min_lon: 0.0,
                max_lat: 2.0,
                max_lon: 2.0,
            })
            .unwrap();
        assert_eq!(g.locate(0.5, 0.5), Some(0));
        assert_eq!(g.locate(1.5, 0.5), Some(2));
        assert_eq!(g.locate(1.5, 1.5), Some(3));
        assert_eq!(g.locate(2.0, 1.0), None);
    }
}
