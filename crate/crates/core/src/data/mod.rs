//! Trips to tensors to training samples.

pub mod grid;
pub mod io;
pub mod normalize;
pub mod samples;
pub mod synth;
pub mod trips;
pub mod volume;

pub use grid::{GeoBounds, GridSpec, TimeSpec};
pub use io::TensorBundle;
pub use normalize::Normalizer;
pub use samples::{
    extract_flow_stack, extract_patch, make_samples, split_train_val, FlowStack, Patch,
    SampleEntry, SampleSet, SampleSpec, TrainingSample,
};
pub use synth::{synthesize_city, SynthConfig, SynthOutcome};
pub use trips::{ingest_trips, parse_timestamp, scan_time_range, write_trips_csv, TripRecord, TripTable};
pub use volume::{build_flows, build_volume, FlowTensor, VolumeTensor};
