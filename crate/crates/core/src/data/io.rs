//! On-disk containers for tensor bundles and sample sets.
//!
//! Both files share one envelope (integers little-endian):
//!
//! ```text
//! magic        8 bytes   "STDNBNDL" (bundle) or "STDNSMPL" (sample set)
//! version      u32       1
//! header_len   u64
//! header       JSON, `header_len` bytes
//! payload      raw little-endian arrays, in the order the header lists
//! ```
//!
//! Bundle payload: `start` u32 × n·m, `end` u32 × n·m, then `outflow` and
//! `inflow` entries as u32 quadruples `(region, interval, other, count)`
//! sorted by key.
//!
//! Sample-set payload: `volume_frames` f64 × m·n·2, `flow_frames`
//! u32 × n·m·S·S·2, `externals` f64 × n·m·E. Sample entries travel in the
//! JSON header.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::grid::{GridSpec, TimeSpec};
use super::normalize::Normalizer;
use super::samples::{SampleEntry, SampleSet, SampleSpec};
use super::trips::TripTable;
use super::volume::{build_flows, build_volume, FlowTensor, VolumeTensor};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{read_f64s, read_u32, read_u64};

pub const BUNDLE_MAGIC: &[u8; 8] = b"STDNBNDL";
pub const SAMPLES_MAGIC: &[u8; 8] = b"STDNSMPL";
pub const FORMAT_VERSION: u32 = 1;

fn write_envelope<W: Write>(out: &mut W, magic: &[u8; 8], header: &[u8]) -> Result<()> {
    out.write_all(magic)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(header)?;
    Ok(())
}

fn read_envelope<R: Read>(input: &mut R, magic: &[u8; 8]) -> Result<Vec<u8>> {
    let mut m = [0u8; 8];
    input.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&m)
        )));
    }
    let version = read_u32(input)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let len = read_u64(input)? as usize;
    let mut header = vec![0u8; len];
    input.read_exact(&mut header)?;
    Ok(header)
}

fn write_u32s<W: Write>(out: &mut W, xs: &[u32]) -> Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 4);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn write_f64s<W: Write>(out: &mut W, xs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 8);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_u32s<R: Read>(input: &mut R, n: usize) -> Result<Vec<u32>> {
    let mut buf = vec![0u8; n * 4];
    input.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect())
}

/// Aggregated tensors of one city plus ingest bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBundle {
    pub grid: GridSpec,
    pub time: TimeSpec,
    pub trip_count: usize,
    pub skipped: usize,
    pub volume: VolumeTensor,
    pub flows: FlowTensor,
}

#[derive(Serialize, Deserialize)]
struct BundleHeader {
    grid: GridSpec,
    time: TimeSpec,
    trip_count: usize,
    skipped: usize,
    outflow_entries: usize,
    inflow_entries: usize,
}

impl TensorBundle {
    /// Aggregate a trip table into volume and flow tensors.
    pub fn from_trips(trips: &TripTable, grid: &GridSpec, time: &TimeSpec) -> Self {
        Self {
            grid: grid.clone(),
            time: time.clone(),
            trip_count: trips.len(),
            skipped: trips.skipped(),
            volume: build_volume(trips, grid, time),
            flows: build_flows(trips),
        }
    }

    pub fn write<W: Write>(&self, out: &mut W) -> Result<()> {
        let header = BundleHeader {
            grid: self.grid.clone(),
            time: self.time.clone(),
            trip_count: self.trip_count,
            skipped: self.skipped,
            outflow_entries: self.flows.outflow.len(),
            inflow_entries: self.flows.inflow.len(),
        };
        write_envelope(out, BUNDLE_MAGIC, &serde_json::to_vec(&header)?)?;
        write_u32s(out, self.volume.start_counts())?;
        write_u32s(out, self.volume.end_counts())?;
        for map in [&self.flows.outflow, &self.flows.inflow] {
            let mut flat = Vec::with_capacity(map.len() * 4);
            for (&(i, t, j), &c) in map {
                flat.extend([i as u32, t as u32, j as u32, c]);
            }
            write_u32s(out, &flat)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(input: &mut R) -> Result<Self> {
        let header: BundleHeader = serde_json::from_slice(&read_envelope(input, BUNDLE_MAGIC)?)?;
        let n = header.grid.regions();
        let m = header.time.intervals;
        let start = read_u32s(input, n * m)?;
        let end = read_u32s(input, n * m)?;
        let volume = VolumeTensor::from_counts(n, m, start, end)
            .ok_or_else(|| Error::Format("volume size mismatch".into()))?;
        let mut flows = FlowTensor::default();
        for (len, map) in [
            (header.outflow_entries, &mut flows.outflow),
            (header.inflow_entries, &mut flows.inflow),
        ] {
            let flat = read_u32s(input, len * 4)?;
            for q in flat.chunks_exact(4) {
                map.insert((q[0] as usize, q[1] as usize, q[2] as usize), q[3]);
            }
        }
        Ok(Self {
            grid: header.grid,
            time: header.time,
            trip_count: header.trip_count,
            skipped: header.skipped,
            volume,
            flows,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct SampleHeader {
    spec: SampleSpec,
    grid: GridSpec,
    intervals: usize,
    normalizer: Normalizer,
    volume_frames: usize,
    flow_frames: usize,
    externals: usize,
    entries: Vec<SampleEntry>,
}

pub fn write_sample_set<W: Write>(out: &mut W, set: &SampleSet) -> Result<()> {
    let header = SampleHeader {
        spec: set.spec.clone(),
        grid: set.grid.clone(),
        intervals: set.intervals,
        normalizer: set.normalizer,
        volume_frames: set.volume_frames.len(),
        flow_frames: set.flow_frames.len(),
        externals: set.externals.len(),
        entries: set.entries.clone(),
    };
    write_envelope(out, SAMPLES_MAGIC, &serde_json::to_vec(&header)?)?;
    write_f64s(out, &set.volume_frames)?;
    write_u32s(out, &set.flow_frames)?;
    write_f64s(out, &set.externals)?;
    Ok(())
}

pub fn read_sample_set<R: Read>(input: &mut R) -> Result<SampleSet> {
    let h: SampleHeader = serde_json::from_slice(&read_envelope(input, SAMPLES_MAGIC)?)?;
    let volume_frames = read_f64s(input, h.volume_frames)?;
    let flow_frames = read_u32s(input, h.flow_frames)?;
    let externals = read_f64s(input, h.externals)?;
    Ok(SampleSet {
        spec: h.spec,
        grid: h.grid,
        intervals: h.intervals,
        normalizer: h.normalizer,
        volume_frames,
        flow_frames,
        externals,
        entries: h.entries,
    })
}
