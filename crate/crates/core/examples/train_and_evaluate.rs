//! Train STDN on a small synthetic city, compare it with the historical
//! average and reload the checkpoint.
//!
//!     cargo run --release --example train_and_evaluate

use stdn::data::{synthesize_city, SampleEntry, SynthConfig, TensorBundle};
use stdn::model::{ModelConfig, Stdn, Variant};
use stdn::train::*;

fn main() -> stdn::Result<()> {
    let city = synthesize_city(&SynthConfig { days: 14, ..SynthConfig::default() }, 1)?;
    let bundle = TensorBundle::from_trips(&city.trips, &city.grid, &city.time);
    let model_cfg = ModelConfig {
        variant: Variant::Stdn,
        patch_size: 3,
        filters: 8,
        short_len: 4,
        hidden: 16,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let split_cfg = SplitConfig { test_days: 3, train_fraction: 0.8 };
    let (set, split) = prepare(&bundle, &model_cfg.sample_spec(48), &split_cfg)?;
    println!("{} train / {} val / {} test samples", split.train.len(), split.val.len(), split.test.len());

    let train_cfg = TrainConfig { max_epochs: 8, learning_rate: 0.003, ..TrainConfig::default() };
    let out = train(Stdn::new(model_cfg, 0)?, &set, &split.train, &split.val, &train_cfg)?;
    for e in &out.history {
        println!("epoch {:2}  train {:.5}  val {:.5}", e.epoch, e.train_loss, e.val_loss.unwrap_or(f64::NAN));
    }
    let mut model = out.model;
    model.set_data_binding(Some(binding_for(&set)));

    let m = evaluate(&model, &set, &split.test, 10.0, 1)?;
    let test: Vec<SampleEntry> = split.test.iter().map(|&k| set.entries[k].clone()).collect();
    let ha = historical_average_baseline(&bundle.volume, &bundle.time, split.fit_range.clone(), &test, 10.0)?;
    let show = |name: &str, m: &Metrics| {
        println!(
            "{name:5} start rmse {:.3} mape {:.3} | end rmse {:.3} mape {:.3}",
            m.start.rmse.unwrap_or(f64::NAN),
            m.start.mape.unwrap_or(f64::NAN),
            m.end.rmse.unwrap_or(f64::NAN),
            m.end.mape.unwrap_or(f64::NAN)
        )
    };
    show("STDN", &m);
    show("HA", &ha);

    let mut bytes = Vec::new();
    model.save(&mut bytes)?;
    let back = Stdn::load(&mut bytes.as_slice())?;
    let sample = set.sample(split.test[0])?;
    let normalizer = &back.data_binding().expect("binding saved").normalizer;
    let p = back.predict(&sample, normalizer)?;
    println!(
        "reloaded checkpoint ({} bytes): region {} interval {} predicted {:.1}/{:.1}, true {}/{}",
        bytes.len(),
        sample.region,
        sample.target_interval,
        p.start_raw,
        p.end_raw,
        sample.target_raw[0],
        sample.target_raw[1]
    );
    Ok(())
}
