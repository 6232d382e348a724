//! Delay statistics in the layout of the delay tables: min, max, st.d., Q1,
//! Q3, jitter, 95% CI of the mean, frame loss.

use std::io::Write;

use thiserror::Error;

use super::{DelayRecord, RecordStatus};
use crate::time::Micros;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("no delivered records")]
    Empty,
    #[error("expected count {expected} is below the {delivered} delivered records")]
    ExpectedTooSmall { expected: usize, delivered: usize },
}

/// All delay figures in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayStats {
    pub n: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Sample standard deviation (n − 1); 0 for a single record.
    pub stddev: f64,
    pub q1: f64,
    pub q3: f64,
    /// Mean absolute difference of consecutive delays ordered by t_i.
    pub jitter: f64,
    /// 1.96 · stddev / √n.
    pub ci95_halfwidth: f64,
    pub loss_fraction: f64,
}

/// Quantile by linear interpolation between order statistics, h = (n − 1)·p.
pub fn quantile(sorted: &[Micros], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    sorted[lo] as f64 + frac * (sorted[hi] - sorted[lo]) as f64
}

pub fn compute_stats(records: &[DelayRecord], expected_count: usize) -> Result<DelayStats, StatsError> {
    let mut delivered: Vec<(Micros, u64, Micros)> = records
        .iter()
        .filter(|r| r.status == RecordStatus::Delivered)
        .filter_map(|r| Some((r.t_us?, r.sequence_number, r.delay_us?)))
        .collect();
    let n = delivered.len();
    if n == 0 {
        return Err(StatsError::Empty);
    }
    if expected_count < n {
        return Err(StatsError::ExpectedTooSmall { expected: expected_count, delivered: n });
    }
    delivered.sort_unstable_by_key(|&(t, seq, _)| (t, seq));
    let delays: Vec<Micros> = delivered.iter().map(|d| d.2).collect();

    let sum: i128 = delays.iter().map(|&d| d as i128).sum();
    let mean_us = sum as f64 / n as f64;
    let var = if n > 1 {
        delays.iter().map(|&d| (d as f64 - mean_us).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    let stddev_us = var.sqrt();
    let jitter_us = if n > 1 {
        let total: i128 = delays.windows(2).map(|w| (w[1] - w[0]).abs() as i128).sum();
        total as f64 / (n - 1) as f64
    } else {
        0.0
    };

    let mut sorted = delays;
    sorted.sort_unstable();
    let ms = |us: f64| us / 1_000.0;
    Ok(DelayStats {
        n,
        mean: ms(mean_us),
        min: ms(sorted[0] as f64),
        max: ms(sorted[n - 1] as f64),
        stddev: ms(stddev_us),
        q1: ms(quantile(&sorted, 0.25)),
        q3: ms(quantile(&sorted, 0.75)),
        jitter: ms(jitter_us),
        ci95_halfwidth: ms(1.96 * stddev_us / (n as f64).sqrt()),
        loss_fraction: (expected_count - n) as f64 / expected_count as f64,
    })
}

pub const STATS_HEADER: [&str; 11] = [
    "label", "n", "min_ms", "max_ms", "std_ms", "q1_ms", "q3_ms", "jitter_ms", "mean_ms", "ci95_ms", "loss",
];

/// One CSV row per labelled stats entry, columns as in [`STATS_HEADER`].
pub fn write_stats_csv<W: Write>(rows: &[(String, DelayStats)], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(STATS_HEADER)?;
    for (label, s) in rows {
        w.write_record([
            label.clone(),
            s.n.to_string(),
            format!("{:.3}", s.min),
            format!("{:.3}", s.max),
            format!("{:.3}", s.stddev),
            format!("{:.3}", s.q1),
            format!("{:.3}", s.q3),
            format!("{:.3}", s.jitter),
            format!("{:.3}", s.mean),
            format!("{:.3}", s.ci95_halfwidth),
            format!("{:.5}", s.loss_fraction),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn delivered(seq: u64, delay_ms: i64) -> DelayRecord {
        let t = seq as i64 * 20_000;
        DelayRecord::delivered(0, seq, t, t + delay_ms * 1_000, 26)
    }

    #[test]
    fn two_point_example() {
        let s = compute_stats(&[delivered(0, 100), delivered(1, 200)], 2).unwrap();
        assert_eq!(s.mean, 150.0);
        assert_eq!(s.jitter, 100.0);
        assert_eq!(s.q1, 125.0);
        assert_eq!(s.q3, 175.0);
        assert_eq!(s.min, 100.0);
        assert_eq!(s.max, 200.0);
        assert_eq!(s.loss_fraction, 0.0);
    }

    #[test]
    fn constant_delays() {
        let recs: Vec<_> = (0..10).map(|k| delivered(k, 170)).collect();
        let s = compute_stats(&recs, 10).unwrap();
        assert_eq!((s.stddev, s.jitter, s.ci95_halfwidth), (0.0, 0.0, 0.0));
    }

    #[test]
    fn loss_and_errors() {
        let mut recs: Vec<_> = (0..3).map(|k| delivered(k, 150)).collect();
        recs.push(DelayRecord::lost(0, 3, 60_000, 26));
        let s = compute_stats(&recs, 4).unwrap();
        assert_eq!(s.n, 3);
        assert_eq!(s.loss_fraction, 0.25);
        assert_eq!(compute_stats(&recs, 2), Err(StatsError::ExpectedTooSmall { expected: 2, delivered: 3 }));
        assert_eq!(compute_stats(&recs[3..], 1), Err(StatsError::Empty));
    }

    #[test]
    fn jitter_follows_timestamp_order() {
        // Listed out of order; jitter must follow t_i.
        let recs = vec![delivered(2, 130), delivered(0, 100), delivered(1, 200)];
        let s = compute_stats(&recs, 3).unwrap();
        assert_eq!(s.jitter, 85.0);
    }

    #[test]
    fn stats_csv_header() {
        let s = compute_stats(&[delivered(0, 100)], 1).unwrap();
        let mut buf = Vec::new();
        write_stats_csv(&[("all".into(), s)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("label,n,min_ms,max_ms,std_ms,q1_ms,q3_ms,jitter_ms,mean_ms,ci95_ms,loss\n"));
        assert!(text.contains("all,1,100.000,100.000,0.000"));
    }
}
