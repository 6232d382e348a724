//! Shared test oracles.
#![allow(dead_code)]

use catm_pmu::pdc::{DelayRecord, DelayStats, RecordStatus};
use rand::seq::SliceRandom;
use rand::Rng;

/// Brute-force recomputation straight from the definitions, in integer µs where possible.
pub struct Oracle {
    pub n: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub stddev: f64,
    pub q1: f64,
    pub q3: f64,
    pub jitter: f64,
    pub ci95: f64,
    pub loss: f64,
}

pub fn oracle(records: &[DelayRecord], expected: usize) -> Oracle {
    // Delivered delays in t order, picked by repeated minimum search.
    let mut pool: Vec<(i64, u64, i64)> = records
        .iter()
        .filter(|r| r.status == RecordStatus::Delivered)
        .map(|r| (r.t_us.unwrap(), r.sequence_number, r.delay_us.unwrap()))
        .collect();
    let mut ordered = Vec::new();
    while !pool.is_empty() {
        let i = (0..pool.len()).min_by_key(|&i| (pool[i].0, pool[i].1)).unwrap();
        ordered.push(pool.remove(i).2);
    }
    let n = ordered.len();
    let s: i128 = ordered.iter().map(|&d| d as i128).sum();
    // Σ(n·d − S)² / (n²(n−1)) is the exact sample variance.
    let ss: i128 = ordered.iter().map(|&d| (n as i128 * d as i128 - s).pow(2)).sum();
    let var = if n > 1 { ss as f64 / ((n * n) as f64 * (n - 1) as f64) } else { 0.0 };
    let mut jit: i128 = 0;
    for i in 1..n {
        jit += (ordered[i] - ordered[i - 1]).abs() as i128;
    }
    let mut sorted = ordered.clone();
    sorted.sort();
    let q = |p: f64| {
        let h = (n - 1) as f64 * p;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        sorted[lo] as f64 + (h - lo as f64) * (sorted[hi] - sorted[lo]) as f64
    };
    Oracle {
        n,
        mean: s as f64 / n as f64 / 1e3,
        min: sorted[0] as f64 / 1e3,
        max: sorted[n - 1] as f64 / 1e3,
        stddev: var.sqrt() / 1e3,
        q1: q(0.25) / 1e3,
        q3: q(0.75) / 1e3,
        jitter: if n > 1 { jit as f64 / (n - 1) as f64 / 1e3 } else { 0.0 },
        ci95: 1.96 * var.sqrt() / (n as f64).sqrt() / 1e3,
        loss: (expected - n) as f64 / expected as f64,
    }
}

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}


/// A shuffled single-stream trace with roughly 5% lost and 5% corrupted
/// frames and at least one delivered frame. Returns (records, expected count).
pub fn random_trace<R: Rng>(rng: &mut R) -> (Vec<DelayRecord>, usize) {
    let len = rng.random_range(1..300);
    let mut recs: Vec<DelayRecord> = (0..len)
        .map(|k| {
            let t = 1_600_000_000_000_000 + k as i64 * 20_000;
            match rng.random_range(0..20) {
                0 => DelayRecord::lost(1, k, t, 26),
                1 => DelayRecord {
                    stream_id: 0,
                    sequence_number: 0,
                    t_us: None,
                    t_prime_us: Some(t + 150_000),
                    delay_us: None,
                    frame_size: 26,
                    status: RecordStatus::IntegrityFailure,
                },
                _ => DelayRecord::delivered(1, k, t, t + rng.random_range(100_000..600_000), 26),
            }
        })
        .collect();
    if !recs.iter().any(|r| r.status == RecordStatus::Delivered) {
        recs.push(DelayRecord::delivered(1, len, 0, 123_456, 26));
    }
    recs.shuffle(rng);
    let expected = recs.len() + rng.random_range(0..5);
    (recs, expected)
}

/// First mismatching field between `s` and the oracle, if any.
pub fn mismatch(s: &DelayStats, o: &Oracle) -> Option<String> {
    let exact = [
        ("mean", s.mean, o.mean),
        ("min", s.min, o.min),
        ("max", s.max, o.max),
        ("q1", s.q1, o.q1),
        ("q3", s.q3, o.q3),
        ("jitter", s.jitter, o.jitter),
        ("loss", s.loss_fraction, o.loss),
    ];
    if s.n != o.n {
        return Some(format!("n {} vs {}", s.n, o.n));
    }
    for (name, a, b) in exact {
        if a != b {
            return Some(format!("{name} {a} vs {b}"));
        }
    }
    for (name, a, b) in [("stddev", s.stddev, o.stddev), ("ci95", s.ci95_halfwidth, o.ci95)] {
        if !close(a, b) {
            return Some(format!("{name} {a} vs {b}"));
        }
    }
    None
}
