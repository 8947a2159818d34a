#![allow(dead_code)]

use std::io::Write;
use std::time::Duration;

use leafdecomp::linalg::{seeded_rng, Point};
use leafdecomp::lipmap::AtlasEntry;
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Uniform draw from the entry's sampling box, rejecting its declared
/// singular set.
pub fn sample(entry: &AtlasEntry, rng: &mut impl Rng) -> Point {
    loop {
        let x = DVector::from_fn(entry.n(), |i, _| rng.gen_range(entry.domain_lo[i]..entry.domain_hi[i]));
        if !entry.map.excluded(&x) {
            return x;
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    seeded_rng(seed, 0xACCE)
}

pub fn cylinder_seeds(count: usize, radius: f64, z: f64) -> Vec<Point> {
    (0..count)
        .map(|i| {
            let t = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
            DVector::from_vec(vec![radius * t.cos(), radius * t.sin(), z])
        })
        .collect()
}

/// Prints the one-line verdict of a criterion and returns it. Written to the
/// stderr handle directly so the line survives libtest output capture.
pub fn verdict(id: &str, ok: bool, elapsed: Duration, limit: Option<Duration>, detail: &str) -> bool {
    let in_time = limit.map_or(true, |l| elapsed <= l);
    let pass = ok && in_time;
    let limit_txt = limit.map_or("none".to_string(), |l| format!("{}s", l.as_secs()));
    let line = format!(
        "criterion {id}: {} ({detail}; runtime {:.2}s, limit {limit_txt})\n",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
    pass
}
