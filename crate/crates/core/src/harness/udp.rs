//! Real-network PMU client: sends frames to a PDC on absolute deadlines.

use std::net::UdpSocket;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use log::info;

use super::HarnessError;
use crate::c37codec::{encode, PhaseCount, ScalingConfig};
use crate::estimator::{self, EstimatorConfig, RocofMode};
use crate::time::{now_micros, Micros, MICROS_PER_SEC};
use crate::waveform::{generate, square_wave_edges, WaveformConfig};

#[derive(Debug, Clone)]
pub struct UdpClientOptions {
    /// `host:port` of the PDC.
    pub server: String,
    pub rate: f64,
    pub duration: f64,
    pub idcode: u16,
    pub phase_count: PhaseCount,
    pub frames_per_datagram: usize,
    /// Start time and duration are filled in at launch.
    pub waveform: WaveformConfig,
    pub rocof_mode: RocofMode,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UdpClientSummary {
    /// t0, the whole second the stream was anchored to.
    pub start_time: Micros,
    pub frames: u64,
    pub datagrams: u64,
}

/// Stream synthetic synchrophasors to `options.server`, starting on the next
/// whole UTC second. Each datagram leaves at the timestamp of its last frame,
/// scheduled against t0 + k·Δt so the rate does not drift.
pub fn run_udp_client(options: &UdpClientOptions, shutdown: Arc<AtomicBool>) -> Result<UdpClientSummary, HarnessError> {
    if !(1..=3).contains(&options.frames_per_datagram) {
        return Err(HarnessError::Usage("frames per datagram must be 1, 2 or 3".into()));
    }
    let config = EstimatorConfig {
        nominal_frequency: options.waveform.nominal_frequency,
        reporting_rate: options.rate,
        rocof_mode: options.rocof_mode,
    };
    config
        .validate()
        .map_err(|e| HarnessError::Usage(e.to_string()))?;
    let socket = UdpSocket::bind("0.0.0.0:0")?;
    socket
        .connect(&options.server)
        .map_err(|e| HarnessError::Usage(format!("cannot reach {}: {e}", options.server)))?;

    let t0 = (now_micros() / MICROS_PER_SEC + 1) * MICROS_PER_SEC;
    let mut summary = UdpClientSummary {
        start_time: t0,
        frames: 0,
        datagrams: 0,
    };
    if options.duration <= 0.0 {
        return Ok(summary);
    }
    let waveform = WaveformConfig {
        start_time: t0,
        duration: options.duration,
        ..options.waveform.clone()
    };
    waveform
        .validate()
        .map_err(|e| HarnessError::Usage(e.to_string()))?;
    let blocks = generate(&waveform, options.seed)?;
    let edges = square_wave_edges(&waveform);
    let series = estimator::report(&blocks, &edges, &config, options.duration)?;
    let scaling = ScalingConfig {
        nominal_frequency: waveform.nominal_frequency,
        ..ScalingConfig::default()
    };

    // Map the wall clock onto the monotonic clock once.
    let anchor = Instant::now();
    let anchor_us = now_micros();
    info!("streaming {} frames to {} from t0 = {} µs", series.len(), options.server, t0);
    for chunk in series.chunks(options.frames_per_datagram) {
        let mut bytes = Vec::new();
        for s in chunk {
            bytes.extend(encode(s, options.idcode, &scaling, options.phase_count)?);
        }
        let deadline = chunk[chunk.len() - 1].timestamp;
        let target = anchor + Duration::from_micros((deadline - anchor_us).max(0) as u64);
        loop {
            if shutdown.load(Ordering::Relaxed) {
                return Ok(summary);
            }
            let now = Instant::now();
            if now >= target {
                break;
            }
            thread::sleep((target - now).min(Duration::from_millis(100)));
        }
        socket.send(&bytes)?;
        summary.frames += chunk.len() as u64;
        summary.datagrams += 1;
    }
    Ok(summary)
}
