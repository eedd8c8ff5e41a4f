//! Generate a synthetic city, round-trip it through CSV ingestion and look
//! at the resulting tensors.
//!
//!     cargo run --example synthetic_city

use stdn::data::*;

fn main() -> stdn::Result<()> {
    let cfg = SynthConfig {
        days: 7,
        ..SynthConfig::default()
    };
    let city = synthesize_city(&cfg, 42)?;
    println!(
        "{} trips on a {}x{} grid over {} days, per-day peak shifts {:?}",
        city.trips.len(),
        city.grid.rows,
        city.grid.cols,
        cfg.days,
        city.day_shifts
    );

    let mut csv = Vec::new();
    write_trips_csv(&mut csv, &city.trips.records, &city.offsets_s, &city.time)?;
    let table = ingest_trips(csv.as_slice(), &city.grid, &city.time)?;
    assert_eq!(table.records, city.trips.records);

    let volume = build_volume(&table, &city.grid, &city.time);
    let flows = build_flows(&table);
    let balanced = (0..city.grid.regions()).all(|i| {
        (0..city.time.intervals).all(|t| flows.outflows_from(i, t).map(|(_, c)| c).sum::<u32>() == volume.start(i, t))
    });
    println!("outflow marginals match departures: {balanced}");

    // departures from region 5 across the first two days
    let per_day = city.time.intervals_per_day()?;
    for day in 0..2 {
        let row: Vec<String> = (0..per_day)
            .step_by(2)
            .map(|c| format!("{:4}", volume.start(5, day * per_day + c)))
            .collect();
        println!("day {day} (shift {:+}): {}", city.day_shifts[day], row.join(""));
    }

    let norm = Normalizer::fit(&volume, &flows, 0..city.time.intervals);
    let patch = extract_patch(&volume, &norm, &city.grid, 5, per_day + 17, 3)?;
    println!("3x3 start-volume patch around region 5 at 08:30 on day 1:");
    for r in 0..3 {
        let cells: Vec<String> = (0..3).map(|c| format!("{:6.2}", patch.values.data()[(r * 3 + c) * 2])).collect();
        println!("  {}", cells.join(""));
    }
    Ok(())
}
