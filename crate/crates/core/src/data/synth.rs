//! Synthetic city generator with daily periodicity, per-day peak shifts and
//! origin-destination coupling that changes with the time of day.

use std::path::{Path, PathBuf};

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;
use serde::{Deserialize, Serialize};

use super::grid::{GridSpec, TimeSpec};
use super::trips::{TripRecord, TripTable};
use crate::config::KvConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub hour: f64,
    pub height: f64,
    pub width_hours: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Noise {
    Poisson,
    /// Counts are `round(rate)` and destinations are apportioned exactly.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CouplingSource {
    /// Distance-decayed preferences toward the west half of the grid before
    /// the switch hour and the east half after it.
    Builtin { locality: f64, boost: f64 },
    File(PathBuf),
    Explicit(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub rows: usize,
    pub cols: usize,
    pub days: usize,
    pub interval_minutes: u32,
    pub start_epoch: i64,
    /// Mean departures per region per interval (daily average).
    pub rates: Vec<f64>,
    pub profile_floor: f64,
    pub peaks: Vec<Peak>,
    pub shift_values: Vec<i64>,
    pub shift_weights: Vec<f64>,
    pub noise: Noise,
    pub travel_values: Vec<usize>,
    pub travel_weights: Vec<f64>,
    pub coupling: CouplingSource,
    /// Hour at which each coupling regime starts, ascending from 0.
    pub regime_hours: Vec<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            rows: 4,
            cols: 4,
            days: 10,
            interval_minutes: 30,
            start_epoch: 1_420_070_400,
            rates: vec![30.0],
            profile_floor: 0.2,
            peaks: vec![
                Peak {
                    hour: 8.5,
                    height: 1.0,
                    width_hours: 1.0,
                },
                Peak {
                    hour: 17.5,
                    height: 1.5,
                    width_hours: 1.0,
                },
            ],
            shift_values: vec![-1, 0, 1],
            shift_weights: vec![1.0, 1.0, 1.0],
            noise: Noise::Poisson,
            travel_values: vec![1],
            travel_weights: vec![1.0],
            coupling: CouplingSource::Builtin {
                locality: 1.5,
                boost: 3.0,
            },
            regime_hours: vec![0.0, 12.0],
        }
    }
}

fn parse_peaks(cfg: &KvConfig, key: &str) -> Result<Option<Vec<Peak>>> {
    let Some(items) = cfg.get_list::<String>(key)? else {
        return Ok(None);
    };
    let line = cfg.line_of(key);
    items
        .iter()
        .map(|s| {
            let parts: Vec<f64> = s
                .split(':')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Parse {
                    path: cfg.path().to_path_buf(),
                    line,
                    message: format!("peak `{s}` must be hour:height:width"),
                })?;
            match parts.as_slice() {
                [hour, height, width_hours] => Ok(Peak {
                    hour: *hour,
                    height: *height,
                    width_hours: *width_hours,
                }),
                _ => Err(Error::Parse {
                    path: cfg.path().to_path_buf(),
                    line,
                    message: format!("peak `{s}` must be hour:height:width"),
                }),
            }
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

impl SynthConfig {
    /// Read a `key = value` file; unspecified keys keep their defaults.
    /// A relative `coupling` path resolves against the config's directory.
    pub fn from_kv(cfg: &KvConfig) -> Result<Self> {
        let d = Self::default();
        let mut out = Self {
            rows: cfg.get_or("rows", d.rows)?,
            cols: cfg.get_or("cols", d.cols)?,
            days: cfg.get_or("days", d.days)?,
            interval_minutes: cfg.get_or("interval_minutes", d.interval_minutes)?,
            start_epoch: cfg.get_or("start_epoch", d.start_epoch)?,
            rates: d.rates.clone(),
            profile_floor: cfg.get_or("profile_floor", d.profile_floor)?,
            peaks: parse_peaks(cfg, "peaks")?.unwrap_or(d.peaks.clone()),
            shift_values: cfg.get_list("shift_values")?.unwrap_or(d.shift_values.clone()),
            shift_weights: cfg.get_list("shift_weights")?.unwrap_or(d.shift_weights.clone()),
            noise: d.noise,
            travel_values: cfg.get_list("travel_values")?.unwrap_or(d.travel_values.clone()),
            travel_weights: cfg.get_list("travel_weights")?.unwrap_or(d.travel_weights.clone()),
            coupling: d.coupling.clone(),
            regime_hours: cfg.get_list("regime_hours")?.unwrap_or(d.regime_hours.clone()),
        };
        if let Some(r) = cfg.get::<f64>("rate")? {
            out.rates = vec![r];
        }
        if let Some(r) = cfg.get_list::<f64>("rates")? {
            out.rates = r;
        }
        if let Some((v, line)) = cfg.raw("noise") {
            out.noise = match v {
                "poisson" => Noise::Poisson,
                "none" => Noise::None,
                _ => {
                    return Err(Error::Parse {
                        path: cfg.path().to_path_buf(),
                        line,
                        message: format!("noise must be `poisson` or `none`, got `{v}`"),
                    })
                }
            };
        }
        let locality = cfg.get_or("coupling_locality", 1.5)?;
        let boost = cfg.get_or("coupling_boost", 3.0)?;
        out.coupling = match cfg.raw("coupling") {
            None | Some(("builtin", _)) => CouplingSource::Builtin { locality, boost },
            Some((path, _)) => {
                let p = Path::new(path);
                let p = if p.is_relative() {
                    cfg.path().parent().unwrap_or(Path::new(".")).join(p)
                } else {
                    p.to_path_buf()
                };
                CouplingSource::File(p)
            }
        };
        cfg.reject_unknown()?;
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        GridSpec::new(self.rows, self.cols)?;
        let n = self.rows * self.cols;
        if self.rates.len() != 1 && self.rates.len() != n {
            return Err(Error::config(format!(
                "rates must list 1 or {n} values, got {}",
                self.rates.len()
            )));
        }
        if self.rates.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::config("rates must be finite and non-negative"));
        }
        if self.profile_floor < 0.0 || self.peaks.iter().any(|p| p.height < 0.0 || p.width_hours <= 0.0) {
            return Err(Error::config("profile floor and peak heights must be non-negative"));
        }
        if self.shift_values.len() != self.shift_weights.len() || self.shift_values.is_empty() {
            return Err(Error::config("shift_values and shift_weights must be non-empty and equal length"));
        }
        if self.travel_values.len() != self.travel_weights.len() || self.travel_values.is_empty() {
            return Err(Error::config("travel_values and travel_weights must be non-empty and equal length"));
        }
        if self.regime_hours.is_empty() || self.regime_hours[0] != 0.0 {
            return Err(Error::config("regime_hours must start at 0"));
        }
        TimeSpec::days(self.interval_minutes, self.start_epoch, self.days)?;
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.rows, self.cols)
    }

    pub fn time(&self) -> Result<TimeSpec> {
        TimeSpec::days(self.interval_minutes, self.start_epoch, self.days)
    }

    pub fn rate(&self, region: usize) -> f64 {
        if self.rates.len() == 1 {
            self.rates[0]
        } else {
            self.rates[region]
        }
    }

    /// Daily multiplier per interval, normalized to mean 1.
    pub fn daily_profile(&self) -> Result<Vec<f64>> {
        let per_day = self.time()?.intervals_per_day()?;
        let hours_per_interval = self.interval_minutes as f64 / 60.0;
        let raw: Vec<f64> = (0..per_day)
            .map(|c| {
                let h = (c as f64 + 0.5) * hours_per_interval;
                self.profile_floor
                    + self
                        .peaks
                        .iter()
                        .map(|p| {
                            let mut d = (h - p.hour).abs() % 24.0;
                            d = d.min(24.0 - d);
                            p.height * (-0.5 * (d / p.width_hours).powi(2)).exp()
                        })
                        .sum::<f64>()
            })
            .collect();
        let mean = raw.iter().sum::<f64>() / per_day as f64;
        if mean <= 0.0 {
            return Ok(vec![1.0; per_day]);
        }
        Ok(raw.into_iter().map(|v| v / mean).collect())
    }

    /// Row-stochastic destination matrices, one per regime.
    pub fn coupling_matrices(&self) -> Result<Vec<Vec<f64>>> {
        let n = self.rows * self.cols;
        let grid = self.grid()?;
        let mats = match &self.coupling {
            CouplingSource::Builtin { locality, boost } => {
                let regimes = self.regime_hours.len();
                (0..regimes)
                    .map(|r| {
                        let mut m = vec![0.0; n * n];
                        for i in 0..n {
                            let (ri, ci) = grid.row_col(i);
                            for j in 0..n {
                                let (rj, cj) = grid.row_col(j);
                                let d = ((ri as f64 - rj as f64).powi(2)
                                    + (ci as f64 - cj as f64).powi(2))
                                .sqrt();
                                let west = cj * 2 < self.cols;
                                let favored = if r % 2 == 0 { west } else { !west };
                                let attract = if favored { 1.0 + boost } else { 1.0 };
                                m[i * n + j] = (-d / locality).exp() * attract;
                            }
                        }
                        m
                    })
                    .collect()
            }
            CouplingSource::File(path) => read_coupling_file(path, n)?,
            CouplingSource::Explicit(m) => m.clone(),
        };
        if mats.len() != self.regime_hours.len() {
            return Err(Error::config(format!(
                "{} coupling regimes but {} regime_hours",
                mats.len(),
                self.regime_hours.len()
            )));
        }
        mats.into_iter()
            .map(|mut m| {
                if m.len() != n * n {
                    return Err(Error::config(format!("coupling matrix must be {n}x{n}")));
                }
                for i in 0..n {
                    let row = &mut m[i * n..(i + 1) * n];
                    if row.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                        return Err(Error::config("coupling weights must be non-negative"));
                    }
                    let s: f64 = row.iter().sum();
                    if s <= 0.0 {
                        return Err(Error::config(format!("coupling row {i} sums to zero")));
                    }
                    row.iter_mut().for_each(|v| *v /= s);
                }
                Ok(m)
            })
            .collect()
    }

    fn regime_at(&self, clock: usize) -> usize {
        let h = clock as f64 * self.interval_minutes as f64 / 60.0;
        self.regime_hours
            .iter()
            .rposition(|&start| h >= start)
            .unwrap_or(0)
    }
}

/// Regimes are blocks of `n` rows of `n` whitespace-separated weights,
/// separated by blank lines.
fn read_coupling_file(path: &Path, n: usize) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let mut mats = Vec::new();
    let mut cur: Vec<f64> = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            if !cur.is_empty() {
                mats.push(std::mem::take(&mut cur));
            }
            continue;
        }
        for tok in line.split_whitespace() {
            cur.push(tok.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: k + 1,
                message: format!("invalid coupling weight `{tok}`"),
            })?);
        }
    }
    if !cur.is_empty() {
        mats.push(cur);
    }
    if mats.iter().any(|m| m.len() != n * n) {
        return Err(Error::config(format!(
            "coupling file {} must contain {n}x{n} blocks",
            path.display()
        )));
    }
    Ok(mats)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutcome {
    pub trips: TripTable,
    /// Departure offset in seconds inside the departure interval, per trip.
    pub offsets_s: Vec<i64>,
    /// Injected peak shift (in intervals) per day.
    pub day_shifts: Vec<i64>,
    /// Trips dropped because they would arrive after the horizon.
    pub dropped_late: usize,
    pub grid: GridSpec,
    pub time: TimeSpec,
}

/// Largest-remainder apportionment of `total` over `weights` (sum 1).
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &k in &order {
        if rest == 0 {
            break;
        }
        out[k] += 1;
        rest -= 1;
    }
    out
}

pub fn synthesize_city(config: &SynthConfig, seed: u64) -> Result<SynthOutcome> {
    config.validate()?;
    let grid = config.grid()?;
    let time = config.time()?;
    let n = grid.regions();
    let per_day = time.intervals_per_day()?;
    let profile = config.daily_profile()?;
    let coupling = config.coupling_matrices()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let shift_dist = WeightedIndex::new(&config.shift_weights)
        .map_err(|e| Error::config(format!("shift weights: {e}")))?;
    let travel_dist = WeightedIndex::new(&config.travel_weights)
        .map_err(|e| Error::config(format!("travel weights: {e}")))?;
    let dest_dists: Vec<Vec<WeightedIndex<f64>>> = coupling
        .iter()
        .map(|m| {
            (0..n)
                .map(|i| WeightedIndex::new(&m[i * n..(i + 1) * n]).expect("normalized row"))
                .collect()
        })
        .collect();
    let modal_travel = config.travel_values[config
        .travel_weights
        .iter()
        .enumerate()
        .fold(0, |best, (k, w)| if *w > config.travel_weights[best] { k } else { best })];

    let day_shifts: Vec<i64> = (0..config.days)
        .map(|_| config.shift_values[shift_dist.sample(&mut rng)])
        .collect();

    let interval_s = time.interval_seconds();
    let mut records = Vec::new();
    let mut offsets_s = Vec::new();
    let mut dropped_late = 0;
    for (day, &shift) in day_shifts.iter().enumerate() {
        for clock in 0..per_day {
            let t = day * per_day + clock;
            let shifted = (clock as i64 - shift).rem_euclid(per_day as i64) as usize;
            let regime = config.regime_at(clock);
            for i in 0..n {
                let lambda = config.rate(i) * profile[shifted];
                let mut push = |dest: usize, travel: usize, offset: i64| {
                    if t + travel >= time.intervals {
                        dropped_late += 1;
                        return;
                    }
                    records.push(TripRecord {
                        origin_region: i,
                        dest_region: dest,
                        depart_interval: t,
                        arrive_interval: t + travel,
                    });
                    offsets_s.push(offset);
                };
                match config.noise {
                    Noise::Poisson => {
                        let count = if lambda > 0.0 {
                            Poisson::new(lambda)
                                .map_err(|e| Error::config(format!("rate {lambda}: {e}")))?
                                .sample(&mut rng) as usize
                        } else {
                            0
                        };
                        for _ in 0..count {
                            let dest = dest_dists[regime][i].sample(&mut rng);
                            let travel = config.travel_values[travel_dist.sample(&mut rng)];
                            let offset = rng.random_range(0..interval_s);
                            push(dest, travel, offset);
                        }
                    }
                    Noise::None => {
                        let count = lambda.round() as usize;
                        let row = &coupling[regime][i * n..(i + 1) * n];
                        for (dest, k) in apportion(count, row).into_iter().enumerate() {
                            for _ in 0..k {
                                push(dest, modal_travel, 0);
                            }
                        }
                    }
                }
            }
        }
    }

    Ok(SynthOutcome {
        trips: TripTable::from_records(records),
        offsets_s,
        day_shifts,
        dropped_late,
        grid,
        time,
    })
}
