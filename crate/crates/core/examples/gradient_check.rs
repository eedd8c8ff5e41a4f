//! Finite-difference check of the full loss for every model variant.
//!
//!     cargo run --release --example gradient_check

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stdn::data::{synthesize_city, SynthConfig, TensorBundle};
use stdn::model::{ModelConfig, Stdn, Variant};
use stdn::nn::{grad_check, ParamStore};
use stdn::train::{prepare, SplitConfig};

fn main() -> stdn::Result<()> {
    let city = synthesize_city(&SynthConfig { rows: 3, cols: 3, days: 4, ..SynthConfig::default() }, 0)?;
    let bundle = TensorBundle::from_trips(&city.trips, &city.grid, &city.time);
    for variant in Variant::ALL {
        let cfg = ModelConfig {
            variant,
            patch_size: 3,
            conv_layers: 2,
            filters: 4,
            short_len: 2,
            days: 2,
            hidden: 8,
            dropout: 0.3,
            ..ModelConfig::default()
        };
        let (set, _) = prepare(&bundle, &cfg.sample_spec(48), &SplitConfig::default())?;
        let model = Stdn::new(cfg, 7)?;
        let sample = set.sample(set.len() / 2)?;
        // the same dropout masks for every evaluation
        let f = |p: &ParamStore| model.loss_and_grad_with(p, &sample, Some(&mut ChaCha8Rng::seed_from_u64(1)));
        let report = grad_check(f, model.params(), 300, 1e-4, 1e-5, &mut ChaCha8Rng::seed_from_u64(2))?;
        println!(
            "{:10} {:5} params  max relative error {:.2e}  {}",
            variant.name(),
            model.params().scalar_count(),
            report.max_rel_error,
            if report.passed { "ok" } else { "FAILED" }
        );
    }
    Ok(())
}
