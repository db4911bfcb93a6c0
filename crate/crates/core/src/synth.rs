//! Deterministic synthetic data in the ILI benchmark layout, for tests and demos.
//!
//! The target mimics weekly influenza-like-illness counts: an exponentially
//! growing baseline with occasional level steps, one epidemic peak per ~52-week season with season-dependent
//! height and timing, and AR(1) noise.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::write_atomic;
use crate::error::Result;

pub const ILI_HEADER: &str = "date,% WEIGHTED ILI,%UNWEIGHTED ILI,AGE 0-4,AGE 5-24,ILITOTAL,NUM. OF PROVIDERS,OT";

/// Row count of the public ILI benchmark file.
pub const ILI_ROWS: usize = 966;

const WEEKS_PER_YEAR: f64 = 52.1775;

/// Synthetic weekly ILI-like target values.
pub fn ili_like(rows: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seasons = rows as f64 / WEEKS_PER_YEAR + 2.0;
    let heights: Vec<f64> = (0..seasons as usize).map(|_| rng.gen_range(0.6..1.6)).collect();
    let shifts: Vec<f64> = (0..seasons as usize).map(|_| rng.gen_range(-3.0..3.0)).collect();
    // Provider-network expansions: a multiplicative level step at some season starts.
    let steps: Vec<f64> = (0..seasons as usize)
        .map(|_| if rng.gen_bool(0.3) { rng.gen_range(1.1..1.35) } else { 1.0 })
        .collect();
    let mut noise = 0.0;
    (0..rows)
        .map(|t| {
            let tf = t as f64;
            let season = (tf / WEEKS_PER_YEAR).floor() as usize;
            // Reporting coverage grows several-fold over the record.
            let coverage: f64 = steps[..=season].iter().product();
            let baseline = coverage * (1.2 * tf / rows as f64).exp();
            let phase = tf - season as f64 * WEEKS_PER_YEAR;
            let peak_at = 26.0 + shifts[season];
            let width = 5.5;
            let d = phase - peak_at;
            let epidemic = 3.2 * heights[season] * baseline * (-(d * d) / (2.0 * width * width)).exp();
            noise = 0.7 * noise + rng.gen_range(-0.08..0.08);
            (baseline * (1.0 + noise) + epidemic).max(0.05)
        })
        .collect()
}

/// Proleptic Gregorian (y, m, d) for days since 1970-01-01.
fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    let y = yoe + era * 400 + i64::from(m <= 2);
    (y, m, d)
}

/// Writes an ILI-layout CSV whose `OT` column holds [`ili_like`] values.
pub fn write_ili_csv(path: &Path, rows: usize, seed: u64) -> Result<()> {
    let ot = ili_like(rows, seed);
    // 2002-01-01 is day 11688 since the epoch.
    let start = 11_688i64;
    let mut out = String::with_capacity(rows * 96);
    out.push_str(ILI_HEADER);
    out.push('\n');
    for (i, v) in ot.iter().enumerate() {
        let (y, m, d) = civil_from_days(start + 7 * i as i64);
        let weighted = v * 0.9;
        let providers = 1_500 + (i * 3) % 900;
        let total = (v * 9_000.0).round();
        out.push_str(&format!(
            "{y:04}-{m:02}-{d:02} 00:00:00,{weighted:.6},{:.6},{:.0},{:.0},{total},{providers},{v}\n",
            v * 0.85,
            total * 0.3,
            total * 0.4,
        ));
    }
    write_atomic(path, out.as_bytes())
}
