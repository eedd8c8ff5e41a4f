//! Trip records and CSV ingestion.

use std::io::{Read, Write};

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::grid::{GridSpec, TimeSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TripRecord {
    pub origin_region: usize,
    pub dest_region: usize,
    pub depart_interval: usize,
    pub arrive_interval: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowDiagnostic {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TripTable {
    pub records: Vec<TripRecord>,
    pub skipped_out_of_grid: usize,
    pub skipped_out_of_horizon: usize,
    pub malformed: Vec<RowDiagnostic>,
}

impl TripTable {
    pub fn from_records(records: Vec<TripRecord>) -> Self {
        Self {
            records,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn skipped(&self) -> usize {
        self.skipped_out_of_grid + self.skipped_out_of_horizon + self.malformed.len()
    }

    /// Check every record against the grid and calendar.
    pub fn validate(&self, grid: &GridSpec, time: &TimeSpec) -> Result<()> {
        let n = grid.regions();
        for (k, r) in self.records.iter().enumerate() {
            if r.origin_region >= n || r.dest_region >= n {
                return Err(Error::data(format!("trip {k} references a region outside the grid")));
            }
            if r.depart_interval >= time.intervals || r.arrive_interval >= time.intervals {
                return Err(Error::data(format!("trip {k} lies outside the horizon")));
            }
            if r.arrive_interval < r.depart_interval {
                return Err(Error::data(format!("trip {k} arrives before it departs")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    Coordinates,
    Regions,
}

const COORD_HEADER: [&str; 6] = [
    "origin_lat",
    "origin_lon",
    "dest_lat",
    "dest_lon",
    "depart_ts",
    "arrive_ts",
];
const REGION_HEADER: [&str; 4] = ["origin_region", "dest_region", "depart_ts", "arrive_ts"];

/// Epoch seconds (integer or fractional) or ISO-8601; zone-less values are UTC.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then(|| v.floor() as i64);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    None
}

enum RowOutcome {
    Trip(TripRecord),
    OutOfGrid,
    OutOfHorizon,
}

fn column_indices(headers: &csv::StringRecord, names: &[&str]) -> Option<Vec<usize>> {
    names
        .iter()
        .map(|n| headers.iter().position(|h| h.trim() == *n))
        .collect()
}

fn parse_row(
    row: &csv::StringRecord,
    layout: Layout,
    cols: &[usize],
    grid: &GridSpec,
    time: &TimeSpec,
) -> std::result::Result<RowOutcome, String> {
    let field = |k: usize| -> std::result::Result<&str, String> {
        row.get(cols[k])
            .ok_or_else(|| format!("missing column {}", cols[k] + 1))
    };
    let (origin, dest, ts_base) = match layout {
        Layout::Regions => {
            let parse_region = |k: usize| -> std::result::Result<i64, String> {
                let v = field(k)?;
                v.trim()
                    .parse::<i64>()
                    .map_err(|_| format!("invalid region id `{v}`"))
            };
            let o = parse_region(0)?;
            let d = parse_region(1)?;
            let n = grid.regions() as i64;
            let to_region = |v: i64| (v >= 0 && v < n).then_some(v as usize);
            (to_region(o), to_region(d), 2)
        }
        Layout::Coordinates => {
            let mut xs = [0.0; 4];
            for (k, x) in xs.iter_mut().enumerate() {
                let v = field(k)?;
                *x = v
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| format!("invalid coordinate `{v}`"))?;
            }
            (grid.locate(xs[0], xs[1]), grid.locate(xs[2], xs[3]), 4)
        }
    };
    let depart = field(ts_base)?;
    let depart = parse_timestamp(depart).ok_or_else(|| format!("invalid timestamp `{depart}`"))?;
    let arrive = field(ts_base + 1)?;
    let arrive = parse_timestamp(arrive).ok_or_else(|| format!("invalid timestamp `{arrive}`"))?;
    if arrive < depart {
        return Err("arrival precedes departure".into());
    }
    let (Some(origin_region), Some(dest_region)) = (origin, dest) else {
        return Ok(RowOutcome::OutOfGrid);
    };
    match (time.interval_of(depart), time.interval_of(arrive)) {
        (Some(depart_interval), Some(arrive_interval)) => Ok(RowOutcome::Trip(TripRecord {
            origin_region,
            dest_region,
            depart_interval,
            arrive_interval,
        })),
        _ => Ok(RowOutcome::OutOfHorizon),
    }
}

/// Read trips from CSV. Rows outside the grid or horizon are counted and
/// skipped; malformed rows produce a diagnostic and are skipped.
pub fn ingest_trips<R: Read>(source: R, grid: &GridSpec, time: &TimeSpec) -> Result<TripTable> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let (layout, cols) = if let Some(c) = column_indices(&headers, &REGION_HEADER) {
        (Layout::Regions, c)
    } else if let Some(c) = column_indices(&headers, &COORD_HEADER) {
        if grid.bounds.is_none() {
            return Err(Error::config(
                "coordinate trip files need grid bounds (min_lat,min_lon,max_lat,max_lon)",
            ));
        }
        (Layout::Coordinates, c)
    } else {
        return Err(Error::Format(format!(
            "unrecognised trip header {:?}; expected `{}` or `{}`",
            headers.iter().collect::<Vec<_>>(),
            REGION_HEADER.join(","),
            COORD_HEADER.join(",")
        )));
    };

    let mut table = TripTable::default();
    let mut row = csv::StringRecord::new();
    loop {
        let line = reader.position().line();
        match reader.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                table.malformed.push(RowDiagnostic {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        }
        let line = row.position().map_or(line, |p| p.line());
        match parse_row(&row, layout, &cols, grid, time) {
            Ok(RowOutcome::Trip(t)) => table.records.push(t),
            Ok(RowOutcome::OutOfGrid) => table.skipped_out_of_grid += 1,
            Ok(RowOutcome::OutOfHorizon) => table.skipped_out_of_horizon += 1,
            Err(message) => table.malformed.push(RowDiagnostic { line, message }),
        }
    }
    Ok(table)
}

/// Earliest departure and latest arrival among parseable rows.
pub fn scan_time_range<R: Read>(source: R) -> Result<Option<(i64, i64)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let (Some(dep), Some(arr)) = (find("depart_ts"), find("arrive_ts")) else {
        return Err(Error::Format("trip header lacks depart_ts/arrive_ts".into()));
    };
    let mut range: Option<(i64, i64)> = None;
    for row in reader.records().flatten() {
        let (Some(d), Some(a)) = (
            row.get(dep).and_then(parse_timestamp),
            row.get(arr).and_then(parse_timestamp),
        ) else {
            continue;
        };
        range = Some(match range {
            None => (d, a.max(d)),
            Some((lo, hi)) => (lo.min(d), hi.max(a)),
        });
    }
    Ok(range)
}

/// Pre-gridded CSV with epoch-second timestamps at interval starts plus
/// the given in-interval offsets.
pub fn write_trips_csv<W: Write>(
    out: W,
    trips: &[TripRecord],
    offsets_s: &[i64],
    time: &TimeSpec,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REGION_HEADER)?;
    for (k, t) in trips.iter().enumerate() {
        let off = offsets_s.get(k).copied().unwrap_or(0);
        w.write_record([
            t.origin_region.to_string(),
            t.dest_region.to_string(),
            (time.interval_start(t.depart_interval) + off).to_string(),
            (time.interval_start(t.arrive_interval) + off).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::grid::GeoBounds;

    fn grid() -> GridSpec {
        GridSpec::new(4, 4).unwrap()
    }

    #[test]
    fn interval_assignment_from_iso_times() {
        let time = TimeSpec::days(30, parse_timestamp("2015-01-01T00:00:00").unwrap(), 1).unwrap();
        let csv = "origin_region,dest_region,depart_ts,arrive_ts\n\
                   3,7,2015-01-01T00:10:00,2015-01-01T00:40:00\n";
        let t = ingest_trips(csv.as_bytes(), &grid(), &time).unwrap();
        assert_eq!(
            t.records,
            vec![TripRecord {
                origin_region: 3,
                dest_region: 7,
                depart_interval: 0,
                arrive_interval: 1
            }]
        );
    }

    #[test]
    fn destination_off_grid_is_skipped() {
        let time = TimeSpec::days(30, 0, 1).unwrap();
        let csv = "origin_region,dest_region,depart_ts,arrive_ts\n1,16,0,60\n1,2,0,60\n";
        let t = ingest_trips(csv.as_bytes(), &grid(), &time).unwrap();
        assert_eq!(t.skipped_out_of_grid, 1);
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let time = TimeSpec::days(30, 0, 1).unwrap();
        let csv = "origin_region,dest_region,depart_ts,arrive_ts\n1,2,0,60\n1,x,0,60\n1,2,900,10\n";
        let t = ingest_trips(csv.as_bytes(), &grid(), &time).unwrap();
        assert_eq!(t.len(), 1);
        let lines: Vec<u64> = t.malformed.iter().map(|d| d.line).collect();
        assert_eq!(lines, vec![3, 4]);
        assert!(t.malformed[0].message.contains("region"));
    }

    #[test]
    fn unknown_header_is_fatal() {
        let time = TimeSpec::days(30, 0, 1).unwrap();
        let err = ingest_trips("a,b,c\n1,2,3\n".as_bytes(), &grid(), &time).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn coordinate_rows_are_gridded() {
        let g = grid()
            .with_bounds(GeoBounds {
                min_lat: 40.0,
                min_lon: -74.0,
                max_lat: 40.4,
                max_lon: -73.6,
            })
            .unwrap();
        let time = TimeSpec::days(30, 0, 1).unwrap();
        let csv = "origin_lat,origin_lon,dest_lat,dest_lon,depart_ts,arrive_ts\n\
                   40.05,-73.95,40.35,-73.65,100,2000\n\
                   41.0,-73.95,40.35,-73.65,100,2000\n";
        let t = ingest_trips(csv.as_bytes(), &g, &time).unwrap();
        assert_eq!(t.records[0].origin_region, 0);
        assert_eq!(t.records[0].dest_region, 15);
        assert_eq!(t.records[0].arrive_interval, 1);
        assert_eq!(t.skipped_out_of_grid, 1);
    }

    #[test]
    fn timestamp_formats() {
        assert_eq!(parse_timestamp("60"), Some(60));
        assert_eq!(parse_timestamp("60.9"), Some(60));
        assert_eq!(parse_timestamp("1970-01-01T00:01:00Z"), Some(60));
        assert_eq!(parse_timestamp("1970-01-01 00:02:00"), Some(120));
        assert_eq!(parse_timestamp("yesterday"), None);
    }
}
