//! Synchrophasor estimation: 32-point DFT phasor, edge-timing frequency and ROCOF.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::OnceLock;

use log::warn;
use thiserror::Error;

use crate::time::{period_for_rate, Micros, MICROS_PER_SEC};
use crate::waveform::{SampleBlock, SAMPLES_PER_BLOCK};

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("DFT window must hold {SAMPLES_PER_BLOCK} samples, got {0}")]
    BlockLength(usize),
    #[error("need at least two rising edges, got {0}")]
    InsufficientEdges(usize),
    #[error("rising edges are not strictly increasing")]
    NonIncreasingEdges,
    #[error("invalid estimator configuration: {0}")]
    Config(String),
}

/// ξ(t_i): one synchrophasor report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Synchrophasor {
    /// Peak volts.
    pub magnitude: f64,
    /// Radians in [-π, π), relative to a cosine at f0 aligned to the UTC second.
    pub phase: f64,
    pub frequency: f64,
    pub rocof: f64,
    pub timestamp: Micros,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RocofMode {
    /// ρ = (f − f0)·f0.
    #[default]
    Verbatim,
    /// ρ = df/dt between consecutive reports.
    Derivative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub nominal_frequency: f64,
    /// λ, reports per second.
    pub reporting_rate: f64,
    pub rocof_mode: RocofMode,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            nominal_frequency: 50.0,
            reporting_rate: 50.0,
            rocof_mode: RocofMode::Verbatim,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        if self.nominal_frequency != 50.0 && self.nominal_frequency != 60.0 {
            return Err(EstimatorError::Config("nominal frequency must be 50 or 60 Hz".into()));
        }
        if !(self.reporting_rate > 0.0 && self.reporting_rate <= 120.0) {
            return Err(EstimatorError::Config("reporting rate must be in (0, 120]".into()));
        }
        Ok(())
    }

    pub fn period(&self) -> Micros {
        period_for_rate(self.reporting_rate)
    }
}

fn twiddles() -> &'static [(f64, f64); SAMPLES_PER_BLOCK] {
    static TABLE: OnceLock<[(f64, f64); SAMPLES_PER_BLOCK]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [(0.0, 0.0); SAMPLES_PER_BLOCK];
        for (n, slot) in t.iter_mut().enumerate() {
            let angle = 2.0 * PI * n as f64 / SAMPLES_PER_BLOCK as f64;
            *slot = (angle.cos(), angle.sin());
        }
        t
    })
}

/// Wrap an angle into [-π, π).
pub fn wrap_phase(angle: f64) -> f64 {
    let wrapped = (angle + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped >= PI {
        -PI
    } else {
        wrapped
    }
}

/// Fundamental-bin phasor of one window: (peak magnitude, phase at the first sample).
pub fn dft32(block: &SampleBlock) -> (f64, f64) {
    dft32_window(&block.samples)
}

/// Same as [`dft32`] for an arbitrary slice, checking its length.
pub fn dft32_slice(samples: &[f64]) -> Result<(f64, f64), EstimatorError> {
    let window: &[f64; SAMPLES_PER_BLOCK] = samples
        .try_into()
        .map_err(|_| EstimatorError::BlockLength(samples.len()))?;
    Ok(dft32_window(window))
}

fn dft32_window(samples: &[f64; SAMPLES_PER_BLOCK]) -> (f64, f64) {
    let (mut re, mut im) = (0.0, 0.0);
    for (x, (c, s)) in samples.iter().zip(twiddles()) {
        re += x * c;
        im -= x * s;
    }
    let magnitude = 2.0 * re.hypot(im) / SAMPLES_PER_BLOCK as f64;
    if magnitude == 0.0 {
        return (0.0, 0.0);
    }
    (magnitude, wrap_phase(im.atan2(re)))
}

/// Reciprocal of the latest inter-edge interval.
pub fn estimate_frequency(edges: &[Micros]) -> Result<f64, EstimatorError> {
    let [.., prev, last] = edges else {
        return Err(EstimatorError::InsufficientEdges(edges.len()));
    };
    let period = last - prev;
    if period <= 0 {
        return Err(EstimatorError::NonIncreasingEdges);
    }
    Ok(MICROS_PER_SEC as f64 / period as f64)
}

/// ρ = (f − f0)·f0.
pub fn compute_rocof(frequency: f64, nominal: f64) -> f64 {
    (frequency - nominal) * nominal
}

/// Emit one synchrophasor every 1/λ over `duration` seconds from the first block.
///
/// Report k is stamped `t0 + k·round(1e6/λ)` and uses the latest block that
/// starts at or before its timestamp together with the latest pair of edges
/// seen by the end of that block. Until two edges exist the frequency reads f0.
/// Output is truncated (with a warning) if the grid runs past the blocks.
pub fn report(
    blocks: &[SampleBlock],
    edges: &[Micros],
    config: &EstimatorConfig,
    duration: f64,
) -> Result<Vec<Synchrophasor>, EstimatorError> {
    config.validate()?;
    let Some(first) = blocks.first() else {
        return Ok(Vec::new());
    };
    let f0 = config.nominal_frequency;
    let period = config.period();
    let span = (duration * MICROS_PER_SEC as f64).round() as Micros;
    let requested = if span <= 0 { 0 } else { (span + period - 1) / period };
    let nominal_cycle = (MICROS_PER_SEC as f64 / f0).round() as Micros;
    let t0 = first.block_start_time;
    let last_covered = blocks[blocks.len() - 1].block_start_time + nominal_cycle;

    let mut out = Vec::with_capacity(requested as usize);
    let mut prev_frequency = None;
    for k in 0..requested {
        let t = t0 + k * period;
        if t >= last_covered {
            warn!(
                "reporting grid runs past the sampled signal; truncated at {} of {} reports",
                k, requested
            );
            break;
        }
        let idx = blocks.partition_point(|b| b.block_start_time <= t) - 1;
        let block = &blocks[idx];
        let (magnitude, phase) = dft32(block);

        let seen = edges.partition_point(|&e| e <= block.block_start_time + nominal_cycle);
        let frequency = estimate_frequency(&edges[..seen]).unwrap_or(f0);
        let rocof = match config.rocof_mode {
            RocofMode::Verbatim => compute_rocof(frequency, f0),
            RocofMode::Derivative => prev_frequency
                .map(|p: f64| (frequency - p) * config.reporting_rate)
                .unwrap_or(0.0),
        };
        prev_frequency = Some(frequency);
        out.push(Synchrophasor {
            magnitude,
            phase,
            frequency,
            rocof,
            timestamp: t,
        });
    }
    Ok(out)
}

/// Dump a ξ(t_i) series as CSV: `t_us,v,phi,f,rho`.
pub fn write_csv<W: Write>(phasors: &[Synchrophasor], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t_us", "v", "phi", "f", "rho"])?;
    for p in phasors {
        w.write_record([
            p.timestamp.to_string(),
            p.magnitude.to_string(),
            p.phase.to_string(),
            p.frequency.to_string(),
            p.rocof.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveform::{generate, square_wave_edges, WaveformConfig};

    fn block_of(samples: [f64; 32]) -> SampleBlock {
        SampleBlock {
            samples,
            block_start_time: 0,
            sample_rate: 1600.0,
            index: 0,
        }
    }

    fn sine_block(freq: f64, amplitude: f64) -> SampleBlock {
        let mut s = [0.0; 32];
        for (n, v) in s.iter_mut().enumerate() {
            *v = amplitude * (2.0 * PI * freq * n as f64 / 1600.0).sin();
        }
        block_of(s)
    }

    #[test]
    fn sine_reads_minus_half_pi() {
        let (m, p) = dft32(&sine_block(50.0, 2.0));
        assert!((m - 2.0).abs() < 1e-12);
        assert!((p + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_block() {
        assert_eq!(dft32(&block_of([0.0; 32])), (0.0, 0.0));
    }

    #[test]
    fn leakage_off_bin() {
        // Values frozen from a brute-force numpy DFT over the 32 analytic samples.
        let (m, p) = dft32(&sine_block(51.5625, 2.0));
        assert!((m - 1.9658681260637485).abs() < 1e-12, "{m}");
        assert!((p - -1.4757860394009261).abs() < 1e-12, "{p}");
    }

    #[test]
    fn slice_length_checked() {
        assert_eq!(dft32_slice(&[0.0; 31]), Err(EstimatorError::BlockLength(31)));
        assert!(dft32_slice(&[1.0; 32]).is_ok());
    }

    #[test]
    fn wrap_phase_range() {
        assert_eq!(wrap_phase(PI), -PI);
        assert_eq!(wrap_phase(-PI), -PI);
        assert!((wrap_phase(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_phase(0.25)) == 0.25);
    }

    #[test]
    fn frequency_from_edges() {
        assert_eq!(estimate_frequency(&[0, 20_000]).unwrap(), 50.0);
        let f = estimate_frequency(&[0, 20_000, 39_920]).unwrap();
        assert!((f - 1e6 / 19_920.0).abs() < 1e-12);
        let f = estimate_frequency(&[0, 19_920]).unwrap();
        assert!((f - 50.2).abs() < 0.002);
        assert_eq!(estimate_frequency(&[5]), Err(EstimatorError::InsufficientEdges(1)));
        assert_eq!(estimate_frequency(&[]), Err(EstimatorError::InsufficientEdges(0)));
        assert_eq!(estimate_frequency(&[5, 5]), Err(EstimatorError::NonIncreasingEdges));
    }

    #[test]
    fn rocof_values() {
        assert_eq!(compute_rocof(50.0, 50.0), 0.0);
        assert!((compute_rocof(50.2, 50.0) - 10.0).abs() < 1e-9);
        assert!((compute_rocof(49.9, 50.0) + 5.0).abs() < 1e-9);
    }

    fn run(f: f64, rate: f64, duration: f64) -> Vec<Synchrophasor> {
        let w = WaveformConfig { actual_frequency: f, duration, ..Default::default() };
        let blocks = generate(&w, 0).unwrap();
        let edges = square_wave_edges(&w);
        let cfg = EstimatorConfig { reporting_rate: rate, ..Default::default() };
        report(&blocks, &edges, &cfg, duration).unwrap()
    }

    #[test]
    fn report_counts() {
        assert_eq!(run(50.0, 1.0, 10.0).len(), 10);
        assert_eq!(run(50.0, 80.0, 1.0).len(), 80);
        assert_eq!(run(50.0, 50.0, 2.0).len(), 100);
    }

    #[test]
    fn report_grid_spacing() {
        let r = run(50.0, 80.0, 1.0);
        for pair in r.windows(2) {
            assert_eq!(pair[1].timestamp - pair[0].timestamp, 12_500);
        }
    }

    #[test]
    fn truncated_when_grid_exceeds_samples() {
        let w = WaveformConfig { duration: 1.0, ..Default::default() };
        let blocks = generate(&w, 0).unwrap();
        let edges = square_wave_edges(&w);
        let r = report(&blocks, &edges, &EstimatorConfig::default(), 2.0).unwrap();
        assert_eq!(r.len(), 50);
    }

    #[test]
    fn off_nominal_rocof_in_reports() {
        let r = run(50.2, 50.0, 1.0);
        let last = r.last().unwrap();
        assert!((last.frequency - 50.2).abs() < 0.003);
        assert!((last.rocof - (last.frequency - 50.0) * 50.0).abs() < 1e-12);
    }

    #[test]
    fn derivative_mode() {
        let w = WaveformConfig { actual_frequency: 50.2, duration: 1.0, ..Default::default() };
        let blocks = generate(&w, 0).unwrap();
        let edges = square_wave_edges(&w);
        let cfg = EstimatorConfig { rocof_mode: RocofMode::Derivative, ..Default::default() };
        let r = report(&blocks, &edges, &cfg, 1.0).unwrap();
        assert_eq!(r[0].rocof, 0.0);
        // Edge quantisation only toggles between 19 920 and 19 921 µs periods.
        assert!(r.iter().all(|p| p.rocof.abs() < 0.2));
    }

    #[test]
    fn magnitude_beats_at_twice_the_offset() {
        // A pure off-nominal tone modulates the synchronous DFT magnitude at 2(f − f0).
        let r = run(50.2, 50.0, 50.0);
        let mags: Vec<f64> = r.iter().map(|p| p.magnitude).collect();
        let mean = mags.iter().sum::<f64>() / mags.len() as f64;
        let n = mags.len();
        let best = (1..n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, m) in mags.iter().enumerate() {
                    let a = 2.0 * PI * (k * i) as f64 / n as f64;
                    re += (m - mean) * a.cos();
                    im -= (m - mean) * a.sin();
                }
                (k, re.hypot(im))
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert_eq!(best.0 as f64 * 50.0 / n as f64, 0.4);
    }

    #[test]
    fn csv_dump() {
        let mut buf = Vec::new();
        write_csv(&run(50.0, 50.0, 0.04), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t_us,v,phi,f,rho"));
        assert_eq!(lines.count(), 2);
    }
}
