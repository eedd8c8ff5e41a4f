//! The synthetic ablation benchmark: shifted daily peaks and flow coupling
//! that switches at noon, on a 4x4 city with 10 held-out days.
//!
//!     cargo run --release --example ablation_benchmark -- [SEEDS] [VARIANTS] [MAX_EPOCHS]
//!
//! Defaults to three seeds of every variant, which takes the better part
//! of an hour on one core. `-- 1 LSTN,LSTN-FGM 10` is a quick look.

use stdn::model::Variant;
use stdn::train::Benchmark;

fn main() -> stdn::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seeds: Vec<u64> = match args.first() {
        Some(n) => (1..=n.parse().unwrap_or(3)).collect(),
        None => vec![1, 2, 3],
    };
    let variants: Vec<Variant> = match args.get(1) {
        Some(list) => list.split(',').map(str::parse).collect::<stdn::Result<_>>()?,
        None => Variant::ALL.to_vec(),
    };
    let mut bench = Benchmark::default();
    if let Some(e) = args.get(2) {
        bench.train.max_epochs = e.parse().unwrap_or(bench.train.max_epochs);
    }
    let result = bench.run(&variants, &seeds, 1)?;
    print!("{}", result.report.to_text());
    let b = &result.baseline;
    println!(
        "HA        -      {:.4}         {:.4}         {:.4}         {:.4}",
        b.start.rmse.unwrap_or(f64::NAN),
        b.start.mape.unwrap_or(f64::NAN),
        b.end.rmse.unwrap_or(f64::NAN),
        b.end.mape.unwrap_or(f64::NAN)
    );
    Ok(())
}
