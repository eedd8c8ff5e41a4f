//! Which of yesterday's neighboring intervals does the periodic attention
//! look at? Trains STDN briefly on a city whose daily peak drifts by up to
//! one interval and prints the attention weights next to the true shifts.
//!
//!     cargo run --release --example attention_weights

use stdn::data::{synthesize_city, SynthConfig, TensorBundle};
use stdn::model::{ModelConfig, Stdn, Variant};
use stdn::train::{prepare, train, SplitConfig, TrainConfig};

fn main() -> stdn::Result<()> {
    let city = synthesize_city(&SynthConfig { days: 12, ..SynthConfig::default() }, 3)?;
    let bundle = TensorBundle::from_trips(&city.trips, &city.grid, &city.time);
    let cfg = ModelConfig {
        variant: Variant::Stdn,
        patch_size: 3,
        filters: 8,
        short_len: 4,
        hidden: 16,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let (set, split) = prepare(&bundle, &cfg.sample_spec(48), &SplitConfig { test_days: 2, train_fraction: 0.8 })?;
    let tc = TrainConfig { max_epochs: 5, learning_rate: 0.003, ..TrainConfig::default() };
    let model = train(Stdn::new(cfg, 0)?, &set, &split.train, &split.val, &tc)?.model;

    // around the evening peak of the first test day, region 5
    let per_day = 48;
    let day = split.test.iter().map(|&k| set.entries[k].target_interval).min().unwrap_or(0) / per_day;
    println!("true peak shifts by day: {:?}", city.day_shifts);
    println!(
        "target day {day} (shift {:+}); weights over offsets -1, 0, +1 for each previous day",
        city.day_shifts[day]
    );
    for clock in [33, 35, 37] {
        let t = day * per_day + clock;
        let Some(k) = set.entries.iter().position(|e| e.region == 5 && e.target_interval == t) else {
            continue;
        };
        let (_, trace) = model.predict_normalized(&set.sample(k)?)?;
        println!("{:02}:{:02}", clock / 2, 30 * (clock % 2));
        for (p, w) in trace.weights.iter().enumerate() {
            let cells: Vec<String> = w.iter().map(|a| format!("{a:.3}")).collect();
            println!("  {} day(s) back (shift {:+}): [{}]", p + 1, city.day_shifts[day - p - 1], cells.join(", "));
        }
    }
    Ok(())
}
