//! AC voltage synthesis and GPSDO-style sampling.
//!
//! Sampling runs at exactly 32 samples per nominal cycle and is locked to the
//! start second, so every block starts an integer number of nominal cycles
//! after a UTC second boundary. Timestamps are integer microseconds; the sample
//! values themselves are evaluated on the exact (unrounded) sampling grid.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::time::{Micros, MICROS_PER_SEC};

/// Samples per DFT window (one nominal cycle).
pub const SAMPLES_PER_BLOCK: usize = 32;

/// 10-bit converter spanning 0–5 V, biased at mid-scale.
const ADC_LEVELS: f64 = 1023.0;
const ADC_FULL_SCALE: f64 = 5.0;

#[derive(Debug, Error, PartialEq)]
pub enum WaveformError {
    #[error("invalid waveform configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveformConfig {
    /// f0, the nominal frequency the sampling clock is locked to.
    pub nominal_frequency: f64,
    /// f, the frequency actually produced by the source.
    pub actual_frequency: f64,
    /// Peak amplitude in volts.
    pub amplitude: f64,
    /// Phase of the sine at `start_time`, radians in [-π, π).
    pub initial_phase: f64,
    pub noise_stddev: f64,
    /// Seconds of signal to produce.
    pub duration: f64,
    /// First sample instant; must sit on a whole UTC second.
    pub start_time: Micros,
    /// Quantise samples through a 10-bit 0–5 V converter.
    pub adc_quantization: bool,
}

impl Default for WaveformConfig {
    fn default() -> Self {
        Self {
            nominal_frequency: 50.0,
            actual_frequency: 50.0,
            amplitude: 2.0,
            initial_phase: 0.0,
            noise_stddev: 0.0,
            duration: 1.0,
            start_time: 1_600_000_000 * MICROS_PER_SEC,
            adc_quantization: false,
        }
    }
}

impl WaveformConfig {
    pub fn validate(&self) -> Result<(), WaveformError> {
        let err = |m: &str| Err(WaveformError::Config(m.to_string()));
        let finite = [
            self.nominal_frequency,
            self.actual_frequency,
            self.amplitude,
            self.initial_phase,
            self.noise_stddev,
            self.duration,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return err("all parameters must be finite");
        }
        if self.nominal_frequency <= 0.0 {
            return err("nominal frequency must be positive");
        }
        if self.actual_frequency <= 0.0 {
            return err("actual frequency must be positive");
        }
        if self.amplitude < 0.0 {
            return err("amplitude must be non-negative");
        }
        if self.noise_stddev < 0.0 {
            return err("noise stddev must be non-negative");
        }
        if self.duration <= 0.0 {
            return err("duration must be positive");
        }
        if !(-PI..PI).contains(&self.initial_phase) {
            return err("initial phase must lie in [-pi, pi)");
        }
        if self.start_time < 0 || self.start_time % MICROS_PER_SEC != 0 {
            return err("start time must be a non-negative whole second");
        }
        Ok(())
    }

    pub fn sample_rate(&self) -> f64 {
        SAMPLES_PER_BLOCK as f64 * self.nominal_frequency
    }

    /// Number of 32-sample blocks covering `duration`: ⌈duration · f0⌉.
    pub fn block_count(&self) -> usize {
        let cycles = self.duration * self.nominal_frequency;
        // Guard against 0.99999.. * 50 style float noise before the ceiling.
        (cycles - 1e-9).ceil().max(0.0) as usize
    }

    /// Noise-free signal value `offset` seconds after `start_time`.
    pub fn analytic_value(&self, offset: f64) -> f64 {
        self.amplitude * (2.0 * PI * self.actual_frequency * offset + self.initial_phase).sin()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBlock {
    pub samples: [f64; SAMPLES_PER_BLOCK],
    /// Timestamp of the first sample, rounded to the microsecond.
    pub block_start_time: Micros,
    pub sample_rate: f64,
    /// Block number counted from the waveform start.
    pub index: usize,
}

/// Produce ⌈duration · f0⌉ sample blocks. Deterministic for a given seed.
pub fn generate(config: &WaveformConfig, rng_seed: u64) -> Result<Vec<SampleBlock>, WaveformError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let noise = if config.noise_stddev > 0.0 {
        Some(Normal::new(0.0, config.noise_stddev).map_err(|e| WaveformError::Config(e.to_string()))?)
    } else {
        None
    };
    let sample_rate = config.sample_rate();
    let f0 = config.nominal_frequency;

    let blocks = (0..config.block_count())
        .map(|index| {
            let mut samples = [0.0; SAMPLES_PER_BLOCK];
            for (k, slot) in samples.iter_mut().enumerate() {
                let n = (index * SAMPLES_PER_BLOCK + k) as f64;
                let mut value = config.analytic_value(n / sample_rate);
                if let Some(dist) = &noise {
                    value += dist.sample(&mut rng);
                }
                if config.adc_quantization {
                    value = adc_quantize(value);
                }
                *slot = value;
            }
            let offset = (index as f64 * MICROS_PER_SEC as f64 / f0).round() as Micros;
            SampleBlock {
                samples,
                block_start_time: config.start_time + offset,
                sample_rate,
                index,
            }
        })
        .collect();
    Ok(blocks)
}

fn adc_quantize(volts: f64) -> f64 {
    let code = ((volts + ADC_FULL_SCALE / 2.0) / ADC_FULL_SCALE * ADC_LEVELS)
        .round()
        .clamp(0.0, ADC_LEVELS);
    code * ADC_FULL_SCALE / ADC_LEVELS - ADC_FULL_SCALE / 2.0
}

/// Upward zero crossings of the source sinusoid within `[0, duration)`,
/// quantised to the microsecond. Emulates the sine-to-square converter feeding
/// the edge interrupt.
pub fn square_wave_edges(config: &WaveformConfig) -> Vec<Micros> {
    let f = config.actual_frequency;
    if !(f > 0.0) || !(config.duration > 0.0) {
        return Vec::new();
    }
    // Rising crossing when 2πf·τ + φ0 = 2πm.
    let lead = config.initial_phase / (2.0 * PI);
    let first = lead.ceil() as i64;
    let mut edges = Vec::new();
    let mut m = first;
    loop {
        let offset = (m as f64 - lead) / f;
        if offset >= config.duration {
            break;
        }
        edges.push(config.start_time + (offset * MICROS_PER_SEC as f64).round() as Micros);
        m += 1;
    }
    edges
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(f0: f64, f: f64, duration: f64) -> WaveformConfig {
        WaveformConfig {
            nominal_frequency: f0,
            actual_frequency: f,
            duration,
            ..Default::default()
        }
    }

    #[test]
    fn fifty_hz_one_second() {
        let blocks = generate(&cfg(50.0, 50.0, 1.0), 0).unwrap();
        assert_eq!(blocks.len(), 50);
        assert!(blocks.iter().all(|b| b.sample_rate == 1600.0));
        assert_eq!(blocks[1].block_start_time - blocks[0].block_start_time, 20_000);
    }

    #[test]
    fn sixty_hz_rate() {
        let blocks = generate(&cfg(60.0, 60.0, 0.5), 0).unwrap();
        assert_eq!(blocks.len(), 30);
        assert_eq!(blocks[0].sample_rate, 1920.0);
    }

    #[test]
    fn zero_amplitude_is_silent() {
        let c = WaveformConfig { amplitude: 0.0, ..cfg(50.0, 50.0, 0.2) };
        let blocks = generate(&c, 7).unwrap();
        assert!(blocks.iter().flat_map(|b| b.samples).all(|s| s == 0.0));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(generate(&cfg(0.0, 50.0, 1.0), 0).is_err());
        assert!(generate(&cfg(50.0, -1.0, 1.0), 0).is_err());
        assert!(generate(&cfg(50.0, 50.0, 0.0), 0).is_err());
        let c = WaveformConfig { noise_stddev: -0.1, ..Default::default() };
        assert!(generate(&c, 0).is_err());
        let c = WaveformConfig { start_time: 1_500_000, ..Default::default() };
        assert!(generate(&c, 0).is_err());
        let c = WaveformConfig { initial_phase: PI, ..Default::default() };
        assert!(generate(&c, 0).is_err());
    }

    #[test]
    fn noise_is_seeded() {
        let c = WaveformConfig { noise_stddev: 0.01, ..Default::default() };
        assert_eq!(generate(&c, 3).unwrap(), generate(&c, 3).unwrap());
        assert_ne!(generate(&c, 3).unwrap(), generate(&c, 4).unwrap());
    }

    #[test]
    fn adc_steps() {
        let c = WaveformConfig { adc_quantization: true, ..Default::default() };
        let step = ADC_FULL_SCALE / ADC_LEVELS;
        for s in generate(&c, 0).unwrap().iter().flat_map(|b| b.samples) {
            let code = (s + 2.5) / step;
            assert!((code - code.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_phase_edges_on_period_boundaries() {
        let c = cfg(50.0, 50.0, 0.1);
        let edges: Vec<_> = square_wave_edges(&c).iter().map(|e| e - c.start_time).collect();
        assert_eq!(edges, vec![0, 20_000, 40_000, 60_000, 80_000]);
    }

    #[test]
    fn off_nominal_edge_spacing() {
        let c = cfg(50.0, 50.2, 2.0);
        let edges = square_wave_edges(&c);
        for pair in edges.windows(2) {
            let gap = pair[1] - pair[0];
            assert!(gap == 19_920 || gap == 19_921, "gap {gap}");
        }
    }

    #[test]
    fn shifted_phase_edges() {
        // Sine starting at +π/2 crosses upward three quarters of a cycle later.
        let c = WaveformConfig { initial_phase: PI / 2.0, ..cfg(50.0, 50.0, 0.05) };
        let edges: Vec<_> = square_wave_edges(&c).iter().map(|e| e - c.start_time).collect();
        assert_eq!(edges, vec![15_000, 35_000]);
    }
}
