//! Phasor data concentrator: frame intake, realignment and delay bookkeeping.

mod server;
mod stats;

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use thiserror::Error;

pub use server::{serve_udp, PdcServer, ServeSummary, ServerOptions};
pub use stats::{compute_stats, quantile, write_stats_csv, DelayStats, StatsError, STATS_HEADER};

use crate::c37codec::{split_datagram, CodecError, ScalingConfig};
use crate::time::Micros;

#[derive(Debug, Error)]
pub enum PdcError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("bad record row {row}: {reason}")]
    Row { row: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RecordStatus {
    Delivered,
    Lost,
    IntegrityFailure,
}

impl fmt::Display for RecordStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecordStatus::Delivered => "delivered",
            RecordStatus::Lost => "lost",
            RecordStatus::IntegrityFailure => "integrity_failure",
        })
    }
}

impl FromStr for RecordStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "delivered" => Ok(RecordStatus::Delivered),
            "lost" => Ok(RecordStatus::Lost),
            "integrity_failure" => Ok(RecordStatus::IntegrityFailure),
            other => Err(format!("unknown status `{other}`")),
        }
    }
}

/// One frame's fate at the PDC. Times absent when unknown (e.g. corrupted frames).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayRecord {
    pub stream_id: u16,
    pub sequence_number: u64,
    /// t_i from SOC + FRACSEC.
    pub t_us: Option<Micros>,
    /// t_i', the reception stamp.
    pub t_prime_us: Option<Micros>,
    /// D_i = t_i' − t_i.
    pub delay_us: Option<Micros>,
    pub frame_size: usize,
    pub status: RecordStatus,
}

impl DelayRecord {
    pub fn delivered(stream_id: u16, seq: u64, t: Micros, t_prime: Micros, size: usize) -> Self {
        Self {
            stream_id,
            sequence_number: seq,
            t_us: Some(t),
            t_prime_us: Some(t_prime),
            delay_us: Some(t_prime - t),
            frame_size: size,
            status: RecordStatus::Delivered,
        }
    }

    pub fn lost(stream_id: u16, seq: u64, t: Micros, size: usize) -> Self {
        Self {
            stream_id,
            sequence_number: seq,
            t_us: Some(t),
            t_prime_us: None,
            delay_us: None,
            frame_size: size,
            status: RecordStatus::Lost,
        }
    }
}

/// Per-stage delay decomposition δ1..δ6 of one frame (µs). Stages that cannot
/// be observed stay `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DelayBudget {
    /// δ1: sampling and ξ(t_i) computation.
    pub sampling: Option<Micros>,
    /// δ2: hand-off between the measurement and radio controllers.
    pub handoff: Option<Micros>,
    /// δ3: frame creation and UART transfer to the modem.
    pub framing: Option<Micros>,
    /// δ4 access part: waiting for a scheduling grant.
    pub access_wait: Option<Micros>,
    /// δ4 transmission part.
    pub uplink_tx: Option<Micros>,
    /// δ5: internet transit.
    pub internet: Option<Micros>,
    /// δ6: realignment buffer at the PDC.
    pub buffer: Option<Micros>,
}

impl DelayBudget {
    pub fn populated_sum(&self) -> Micros {
        [
            self.sampling,
            self.handoff,
            self.framing,
            self.access_wait,
            self.uplink_tx,
            self.internet,
            self.buffer,
        ]
        .iter()
        .flatten()
        .sum()
    }

    /// Everything up to reception (δ1..δ5); equals D_i in simulation.
    pub fn pre_reception_sum(&self) -> Micros {
        self.populated_sum() - self.buffer.unwrap_or(0)
    }
}

/// Counters for datagrams that never made it to a record.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IntakeCounters {
    pub datagrams: u64,
    pub frames: u64,
    pub integrity_failures: u64,
    pub malformed: u64,
    pub truncated: u64,
}

/// Frame intake. Assigns per-stream sequence numbers in arrival order.
#[derive(Debug, Default)]
pub struct Pdc {
    scaling: ScalingConfig,
    next_seq: HashMap<u16, u64>,
    counters: IntakeCounters,
}

impl Pdc {
    pub fn new(scaling: ScalingConfig) -> Self {
        Self {
            scaling,
            next_seq: HashMap::new(),
            counters: IntakeCounters::default(),
        }
    }

    pub fn counters(&self) -> IntakeCounters {
        self.counters
    }

    pub fn scaling(&self) -> &ScalingConfig {
        &self.scaling
    }

    /// Split a datagram into frames, decode each and stamp it with `reception_time`.
    ///
    /// CRC failures become `integrity_failure` records. Malformed or truncated
    /// chunks are only counted; nothing here is fatal.
    pub fn ingest(&mut self, datagram: &[u8], reception_time: Micros) -> Vec<DelayRecord> {
        self.counters.datagrams += 1;
        let mut out = Vec::new();
        for part in split_datagram(datagram) {
            match part.result {
                Ok(frame) => {
                    self.counters.frames += 1;
                    let t = frame.timestamp(&self.scaling);
                    let seq = self.next_seq.entry(frame.idcode).or_insert(0);
                    out.push(DelayRecord::delivered(frame.idcode, *seq, t, reception_time, part.size));
                    *seq += 1;
                }
                Err(CodecError::Integrity { .. }) => {
                    self.counters.integrity_failures += 1;
                    out.push(DelayRecord {
                        stream_id: 0,
                        sequence_number: 0,
                        t_us: None,
                        t_prime_us: Some(reception_time),
                        delay_us: None,
                        frame_size: part.size,
                        status: RecordStatus::IntegrityFailure,
                    });
                }
                Err(CodecError::Truncated { .. }) => self.counters.truncated += 1,
                Err(_) => self.counters.malformed += 1,
            }
        }
        out
    }
}

/// A record after realignment with the time it sat in the reorder buffer (δ6).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Realigned {
    pub record: DelayRecord,
    pub buffer_delay: Micros,
}

/// Sort by (t_i, sequence number) and compute δ6 per record: how long a
/// delivered frame waits for every earlier-timestamped frame of its stream to
/// arrive. Records without timestamps sort last with δ6 = 0.
pub fn realign(records: Vec<DelayRecord>) -> Vec<Realigned> {
    let mut sorted = records;
    sorted.sort_by_key(|r| (r.t_us.unwrap_or(Micros::MAX), r.sequence_number));

    let mut latest_earlier: HashMap<u16, Micros> = HashMap::new();
    let mut out = Vec::with_capacity(sorted.len());
    let mut i = 0;
    while i < sorted.len() {
        // Records sharing a timestamp do not wait for each other.
        let t = sorted[i].t_us;
        let mut j = i;
        while j < sorted.len() && sorted[j].t_us == t {
            j += 1;
        }
        let group = &sorted[i..j];
        for r in group {
            let buffer_delay = match (r.status, r.t_us, r.t_prime_us) {
                (RecordStatus::Delivered, Some(_), Some(arrival)) => latest_earlier
                    .get(&r.stream_id)
                    .map_or(0, |&latest| (latest - arrival).max(0)),
                _ => 0,
            };
            out.push(Realigned {
                record: r.clone(),
                buffer_delay,
            });
        }
        for r in group {
            if let (RecordStatus::Delivered, Some(_), Some(arrival)) = (r.status, r.t_us, r.t_prime_us) {
                let e = latest_earlier.entry(r.stream_id).or_insert(arrival);
                *e = (*e).max(arrival);
            }
        }
        i = j;
    }
    out
}

pub const RECORD_HEADER: [&str; 7] = ["stream_id", "seq", "t_us", "t_prime_us", "delay_us", "size", "status"];

fn opt(v: Option<Micros>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Incremental DelayRecord CSV writer.
pub struct RecordWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(out: W) -> csv::Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(RECORD_HEADER)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, r: &DelayRecord) -> csv::Result<()> {
        self.inner.write_record([
            r.stream_id.to_string(),
            r.sequence_number.to_string(),
            opt(r.t_us),
            opt(r.t_prime_us),
            opt(r.delay_us),
            r.frame_size.to_string(),
            r.status.to_string(),
        ])
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

pub fn write_records<W: Write>(records: &[DelayRecord], out: W) -> csv::Result<()> {
    let mut w = RecordWriter::new(out)?;
    for r in records {
        w.write(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<DelayRecord>, PdcError> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let bad = |reason: String| PdcError::Row { row: i + 1, reason };
        if row.len() != RECORD_HEADER.len() {
            return Err(bad(format!("expected {} columns", RECORD_HEADER.len())));
        }
        let num = |k: usize| -> Result<Option<i64>, PdcError> {
            let f = row[k].trim();
            if f.is_empty() {
                Ok(None)
            } else {
                f.parse().map(Some).map_err(|_| bad(format!("column {} is not an integer", RECORD_HEADER[k])))
            }
        };
        let req = |k: usize| -> Result<i64, PdcError> {
            num(k)?.ok_or_else(|| bad(format!("column {} is empty", RECORD_HEADER[k])))
        };
        out.push(DelayRecord {
            stream_id: req(0)? as u16,
            sequence_number: req(1)? as u64,
            t_us: num(2)?,
            t_prime_us: num(3)?,
            delay_us: num(4)?,
            frame_size: req(5)? as usize,
            status: row[6].parse().map_err(bad)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::c37codec::{encode, PhaseCount};
    use crate::estimator::Synchrophasor;

    const T0: Micros = 1_600_000_000_000_000;

    fn frame(t: Micros, id: u16) -> Vec<u8> {
        let s = Synchrophasor { magnitude: 1.0, phase: 0.3, frequency: 50.0, rocof: 0.0, timestamp: t };
        encode(&s, id, &ScalingConfig::default(), PhaseCount::Single).unwrap()
    }

    #[test]
    fn single_frame_delay() {
        let mut pdc = Pdc::new(ScalingConfig::default());
        let recs = pdc.ingest(&frame(T0, 1), T0 + 172_000);
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].delay_us, Some(172_000));
        assert_eq!(recs[0].stream_id, 1);
        assert_eq!(recs[0].status, RecordStatus::Delivered);
    }

    #[test]
    fn concatenated_datagram() {
        let mut dg = frame(T0, 1);
        dg.extend(frame(T0 + 20_000, 1));
        let mut pdc = Pdc::new(ScalingConfig::default());
        let recs = pdc.ingest(&dg, T0 + 200_000);
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].t_prime_us, recs[1].t_prime_us);
        assert_eq!(recs[0].delay_us, Some(200_000));
        assert_eq!(recs[1].delay_us, Some(180_000));
        assert_eq!((recs[0].sequence_number, recs[1].sequence_number), (0, 1));
    }

    #[test]
    fn corrupted_frame_counts_as_loss() {
        let mut f = frame(T0, 1);
        f[20] ^= 0x10;
        let mut pdc = Pdc::new(ScalingConfig::default());
        let mut recs = pdc.ingest(&f, T0 + 1);
        recs.extend(pdc.ingest(&frame(T0 + 20_000, 1), T0 + 150_000));
        assert_eq!(recs[0].status, RecordStatus::IntegrityFailure);
        assert_eq!(pdc.counters().integrity_failures, 1);
        let s = compute_stats(&recs, 2).unwrap();
        assert_eq!(s.n, 1);
        assert_eq!(s.loss_fraction, 0.5);
    }

    #[test]
    fn garbage_is_counted_not_fatal() {
        let mut pdc = Pdc::new(ScalingConfig::default());
        assert!(pdc.ingest(&[], 0).is_empty());
        assert!(pdc.ingest(&[1, 2, 3], 0).is_empty());
        assert_eq!(pdc.counters().truncated, 2);
    }

    #[test]
    fn realign_in_order_has_no_buffering() {
        let recs: Vec<_> = (0..5).map(|k| DelayRecord::delivered(1, k, k as i64 * 20, k as i64 * 20 + 100, 26)).collect();
        assert!(realign(recs).iter().all(|r| r.buffer_delay == 0));
    }

    #[test]
    fn realign_swapped_pair() {
        // Frame stamped 20 overtakes frame stamped 0 by 10 µs; it waits for it.
        let a = DelayRecord::delivered(1, 0, 0, 110, 26);
        let b = DelayRecord::delivered(1, 1, 20, 100, 26);
        let out = realign(vec![b.clone(), a.clone()]);
        assert_eq!(out[0].record, a);
        assert_eq!(out[0].buffer_delay, 0);
        assert_eq!(out[1].record, b);
        assert_eq!(out[1].buffer_delay, 10);
    }

    #[test]
    fn realign_streams_independent_and_empty() {
        assert!(realign(Vec::new()).is_empty());
        let a = DelayRecord::delivered(1, 0, 0, 500, 26);
        let b = DelayRecord::delivered(2, 0, 20, 100, 26);
        assert!(realign(vec![a, b]).iter().all(|r| r.buffer_delay == 0));
    }

    #[test]
    fn budget_sums() {
        let b = DelayBudget {
            sampling: Some(500),
            handoff: Some(1_500),
            framing: Some(500),
            access_wait: Some(20_000),
            uplink_tx: None,
            internet: Some(140_000),
            buffer: Some(3),
        };
        assert_eq!(b.populated_sum(), 162_503);
        assert_eq!(b.pre_reception_sum(), 162_500);
    }

    #[test]
    fn csv_round_trip() {
        let recs = vec![
            DelayRecord::delivered(1, 0, T0, T0 + 5, 26),
            DelayRecord::lost(2, 9, T0, 52),
            DelayRecord {
                stream_id: 0,
                sequence_number: 0,
                t_us: None,
                t_prime_us: Some(T0),
                delay_us: None,
                frame_size: 26,
                status: RecordStatus::IntegrityFailure,
            },
        ];
        let mut buf = Vec::new();
        write_records(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("stream_id,seq,t_us,t_prime_us,delay_us,size,status\n"));
        assert_eq!(read_records(buf.as_slice()).unwrap(), recs);
    }
}
