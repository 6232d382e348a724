//! UDP intake loop.
//!
//! One receiver thread stamps datagrams on arrival and hands them through an
//! ordered channel to the analysis loop, which decodes, appends DelayRecord CSV
//! rows and periodically logs a statistics snapshot. PMU and PDC clocks must be
//! disciplined (NTP/GPS) for the measured delays to mean anything.

use std::fs::File;
use std::io::BufWriter;
use std::net::{SocketAddr, UdpSocket};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use log::{info, warn};

use super::{compute_stats, write_stats_csv, DelayRecord, IntakeCounters, Pdc, PdcError, RecordStatus, RecordWriter};
use crate::c37codec::ScalingConfig;
use crate::time::now_micros;

const MAX_DATAGRAM: usize = 2048;
const POLL: Duration = Duration::from_millis(50);

#[derive(Debug, Clone)]
pub struct ServerOptions {
    pub records_path: PathBuf,
    /// Final (and snapshot) statistics CSV.
    pub stats_path: Option<PathBuf>,
    pub snapshot_every: Duration,
    /// Stop after this many datagrams.
    pub max_datagrams: Option<u64>,
    pub scaling: ScalingConfig,
}

impl ServerOptions {
    pub fn new(records_path: impl Into<PathBuf>) -> Self {
        Self {
            records_path: records_path.into(),
            stats_path: None,
            snapshot_every: Duration::from_secs(10),
            max_datagrams: None,
            scaling: ScalingConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServeSummary {
    pub records: Vec<DelayRecord>,
    pub counters: IntakeCounters,
}

pub struct PdcServer {
    socket: UdpSocket,
}

impl PdcServer {
    pub fn bind(addr: &str) -> Result<Self, PdcError> {
        let socket = UdpSocket::bind(addr).map_err(|source| PdcError::Bind {
            addr: addr.to_string(),
            source,
        })?;
        socket.set_read_timeout(Some(POLL))?;
        Ok(Self { socket })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, PdcError> {
        Ok(self.socket.local_addr()?)
    }

    /// Receive until `shutdown` is raised or `max_datagrams` is reached.
    pub fn run(self, options: &ServerOptions, shutdown: Arc<AtomicBool>) -> Result<ServeSummary, PdcError> {
        let mut writer = RecordWriter::new(BufWriter::new(File::create(&options.records_path)?))?;
        let (tx, rx) = mpsc::channel::<(Vec<u8>, i64)>();
        let socket = self.socket;
        let stop = shutdown.clone();
        let limit = options.max_datagrams;
        let receiver = thread::spawn(move || -> std::io::Result<()> {
            let mut buf = [0u8; MAX_DATAGRAM];
            let mut received = 0u64;
            while !stop.load(Ordering::Relaxed) && limit.is_none_or(|l| received < l) {
                match socket.recv_from(&mut buf) {
                    Ok((n, _)) => {
                        let stamp = now_micros();
                        received += 1;
                        if tx.send((buf[..n].to_vec(), stamp)).is_err() {
                            break;
                        }
                    }
                    Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
                    Err(e) => return Err(e),
                }
            }
            Ok(())
        });

        let mut pdc = Pdc::new(options.scaling.clone());
        let mut records = Vec::new();
        let mut last_snapshot = Instant::now();
        for (bytes, stamp) in rx {
            for r in pdc.ingest(&bytes, stamp) {
                writer.write(&r)?;
                records.push(r);
            }
            writer.flush()?;
            if last_snapshot.elapsed() >= options.snapshot_every {
                last_snapshot = Instant::now();
                snapshot(&records, options)?;
            }
        }
        receiver.join().expect("receiver thread panicked")?;
        writer.flush()?;
        snapshot(&records, options)?;
        let counters = pdc.counters();
        if counters.malformed + counters.truncated > 0 {
            warn!("{} malformed and {} truncated chunks discarded", counters.malformed, counters.truncated);
        }
        Ok(ServeSummary { records, counters })
    }
}

fn snapshot(records: &[DelayRecord], options: &ServerOptions) -> Result<(), PdcError> {
    // Without a sender-side log the expected count is what reached us, corrupt or not.
    let expected = records
        .iter()
        .filter(|r| r.status != RecordStatus::Lost)
        .count();
    match compute_stats(records, expected) {
        Ok(s) => {
            info!(
                "{} frames: mean {:.2} ms, st.d. {:.2} ms, min {:.2}, max {:.2}, jitter {:.2}, loss {:.2}%",
                s.n,
                s.mean,
                s.stddev,
                s.min,
                s.max,
                s.jitter,
                100.0 * s.loss_fraction
            );
            if let Some(path) = &options.stats_path {
                write_stats_csv(&[("all".to_string(), s)], BufWriter::new(File::create(path)?))?;
            }
        }
        Err(_) => info!("no frames received yet"),
    }
    Ok(())
}

/// Bind and serve until `shutdown` is raised.
pub fn serve_udp(bind_address: &str, options: &ServerOptions, shutdown: Arc<AtomicBool>) -> Result<ServeSummary, PdcError> {
    PdcServer::bind(bind_address)?.run(options, shutdown)
}
