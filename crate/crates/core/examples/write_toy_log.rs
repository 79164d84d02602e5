//! Writes the simulated fines log used by the toy experiment config.
//!
//! Usage: `cargo run -p condgen --example write_toy_log -- <out.xes> [n] [seed]`

use chrono::{TimeZone, Utc};

use condgen::eventlog::{remove_attribute, write_xes};
use condgen::synthetic::{toy_log, TOY_LABEL};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().ok_or("missing output path")?;
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(400);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(7);
    let start = Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap();
    // The experiment pipeline attaches its own label.
    let log = remove_attribute(&toy_log(n, seed, start)?, TOY_LABEL);
    write_xes(&log, std::path::Path::new(&out))?;
    println!("{} traces -> {out}", log.len());
    Ok(())
}
