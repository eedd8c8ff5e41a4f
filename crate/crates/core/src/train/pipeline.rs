//! From a tensor bundle to normalized samples and index splits.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::{make_samples, split_train_val, Normalizer, SampleSet, SampleSpec, TensorBundle};
use crate::error::{Error, Result};
use crate::model::{DataBinding, Stdn};

/// How the horizon is divided.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Trailing whole days held out for testing.
    pub test_days: usize,
    /// Share of the remaining target intervals used for training; the
    /// chronologically last rest is validation.
    pub train_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_days: 0,
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Intervals the normalizer and baselines may learn from.
    pub fit_range: Range<usize>,
}

/// Normalize on the pre-test horizon, build samples and split them.
pub fn prepare(bundle: &TensorBundle, spec: &SampleSpec, split: &SplitConfig) -> Result<(SampleSet, DataSplit)> {
    let ipd = bundle.time.intervals_per_day()?;
    if spec.intervals_per_day != ipd {
        return Err(Error::config(format!(
            "sample spec assumes {} intervals per day, bundle has {ipd}",
            spec.intervals_per_day
        )));
    }
    let m = bundle.volume.intervals();
    let held = split.test_days * ipd;
    if held >= m {
        return Err(Error::config(format!(
            "{} test days leave no training horizon in {m} intervals",
            split.test_days
        )));
    }
    let test_start = m - held;
    let normalizer = Normalizer::fit(&bundle.volume, &bundle.flows, 0..test_start);
    let set = make_samples(&bundle.volume, &bundle.flows, &bundle.grid, spec, &normalizer)?;
    let before = set.indices_in(0..test_start);
    if before.is_empty() {
        return Err(Error::config("no training targets before the test period"));
    }
    let (train, val) = split_train_val(&set, &before, split.train_fraction)?;
    let test = set.indices_in(test_start..m);
    Ok((
        set,
        DataSplit {
            train,
            val,
            test,
            fit_range: 0..test_start,
        },
    ))
}

/// Layout facts a checkpoint needs to score new data consistently.
pub fn binding_for(set: &SampleSet) -> DataBinding {
    DataBinding {
        normalizer: set.normalizer,
        intervals_per_day: set.spec.intervals_per_day,
        grid_rows: set.grid.rows,
        grid_cols: set.grid.cols,
    }
}

/// Samples of `bundle` normalized the way `model` was trained.
pub fn samples_for_model(bundle: &TensorBundle, model: &Stdn) -> Result<SampleSet> {
    let binding = model
        .data_binding()
        .ok_or_else(|| Error::config("checkpoint carries no normalizer; it was not produced by training"))?;
    let ipd = bundle.time.intervals_per_day()?;
    if (binding.grid_rows, binding.grid_cols) != (bundle.grid.rows, bundle.grid.cols) {
        return Err(Error::Shape {
            op: "checkpoint grid vs bundle grid",
            left: vec![binding.grid_rows, binding.grid_cols],
            right: vec![bundle.grid.rows, bundle.grid.cols],
        });
    }
    if binding.intervals_per_day != ipd {
        return Err(Error::Shape {
            op: "checkpoint intervals per day vs bundle",
            left: vec![binding.intervals_per_day],
            right: vec![ipd],
        });
    }
    let spec = model.config().sample_spec(ipd);
    make_samples(&bundle.volume, &bundle.flows, &bundle.grid, &spec, &binding.normalizer)
}
