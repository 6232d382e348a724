//! End-to-end experiments: waveform → estimator → codec → channel → PDC.

mod figures;
mod udp;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use thiserror::Error;

pub use figures::{emit_figure_data, emit_phasor_figure, read_phasors, FigureContext, FigureId};
pub use udp::{run_udp_client, UdpClientOptions, UdpClientSummary};

use crate::c37codec::{encode, CodecError, PhaseCount, ScalingConfig};
use crate::catm_sim::{simulate, ChannelConfig, ChannelError, Datagram, TransitResult};
use crate::estimator::{self, EstimatorConfig, EstimatorError, RocofMode, Synchrophasor};
use crate::kv::{self, KvError, KvMap};
use crate::pdc::{
    compute_stats, realign, write_records, write_stats_csv, DelayBudget, DelayRecord, DelayStats, Pdc, PdcError,
    RecordStatus, Realigned, StatsError,
};
use crate::time::{Micros, MICROS_PER_SEC};
use crate::waveform::{generate, square_wave_edges, WaveformConfig, WaveformError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("output directory {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Waveform(#[from] WaveformError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Pdc(#[from] PdcError),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// 1 for usage errors, 2 for everything that failed at runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) | HarnessError::Kv(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Simulate,
    UdpClient,
    UdpServer,
    Report,
}

/// Constant on-device delays ahead of the modem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreChannelDelays {
    /// δ1
    pub sampling: Micros,
    /// δ2
    pub handoff: Micros,
    /// δ3, per datagram.
    pub framing: Micros,
}

impl Default for PreChannelDelays {
    fn default() -> Self {
        Self {
            sampling: 500,
            handoff: 1_500,
            framing: 500,
        }
    }
}

impl PreChannelDelays {
    pub fn total(&self) -> Micros {
        self.sampling + self.handoff + self.framing
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub mode: Mode,
    /// λ, frames per second per PMU.
    pub rate: f64,
    /// Seconds.
    pub duration: f64,
    pub phase_count: PhaseCount,
    pub frames_per_datagram: usize,
    pub pmu_count: usize,
    /// Its duration is replaced by `duration`.
    pub waveform: WaveformConfig,
    /// Its seed is replaced by `seed`.
    pub channel: ChannelConfig,
    pub rocof_mode: RocofMode,
    pub pre_channel: PreChannelDelays,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Leave each stream's first frame out of statistics and figures.
    pub skip_first: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            mode: Mode::Simulate,
            rate: 50.0,
            duration: 60.0,
            phase_count: PhaseCount::Single,
            frames_per_datagram: 1,
            pmu_count: 1,
            waveform: WaveformConfig::default(),
            channel: ChannelConfig::default(),
            rocof_mode: RocofMode::Verbatim,
            pre_channel: PreChannelDelays::default(),
            output_dir: PathBuf::from("out"),
            seed: 1,
            skip_first: false,
        }
    }
}

const SPEC_KEYS: &[&str] = &[
    "rate",
    "duration",
    "phases",
    "frames_per_datagram",
    "pmus",
    "skip_first",
    "nominal_frequency",
    "frequency",
    "amplitude",
    "initial_phase",
    "noise",
    "start_time",
    "adc",
    "rocof_mode",
    "delta1",
    "delta2",
    "delta3",
    "out",
];

impl ExperimentSpec {
    /// Overlay a key-value config file. Times for δ1..δ3 are in ms, start_time in s.
    pub fn apply_kv(&mut self, map: &KvMap) -> Result<(), HarnessError> {
        let known: Vec<&str> = SPEC_KEYS
            .iter()
            .chain(ChannelConfig::known_keys())
            .copied()
            .chain(map.keys().filter(|k| k.starts_with("loss_")))
            .collect();
        map.reject_unknown(&known)?;
        kv::set(map, "rate", &mut self.rate)?;
        kv::set(map, "duration", &mut self.duration)?;
        if let Some(p) = map.get::<u8>("phases")? {
            self.phase_count = PhaseCount::try_from(p).map_err(|e| HarnessError::Usage(e.to_string()))?;
        }
        kv::set(map, "frames_per_datagram", &mut self.frames_per_datagram)?;
        kv::set(map, "pmus", &mut self.pmu_count)?;
        kv::set(map, "skip_first", &mut self.skip_first)?;
        kv::set(map, "seed", &mut self.seed)?;
        let w = &mut self.waveform;
        kv::set(map, "nominal_frequency", &mut w.nominal_frequency)?;
        kv::set(map, "frequency", &mut w.actual_frequency)?;
        kv::set(map, "amplitude", &mut w.amplitude)?;
        kv::set(map, "initial_phase", &mut w.initial_phase)?;
        kv::set(map, "noise", &mut w.noise_stddev)?;
        kv::set(map, "adc", &mut w.adc_quantization)?;
        if let Some(s) = map.get::<i64>("start_time")? {
            w.start_time = s * MICROS_PER_SEC;
        }
        if let Some(m) = map.raw("rocof_mode") {
            self.rocof_mode = parse_rocof_mode(m)?;
        }
        for (key, slot) in [
            ("delta1", &mut self.pre_channel.sampling),
            ("delta2", &mut self.pre_channel.handoff),
            ("delta3", &mut self.pre_channel.framing),
        ] {
            if let Some(ms) = map.get::<f64>(key)? {
                *slot = crate::time::from_millis_f64(ms);
            }
        }
        if let Some(out) = map.raw("out") {
            self.output_dir = PathBuf::from(out);
        }
        self.channel.apply_kv(map)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let usage = |m: String| Err(HarnessError::Usage(m));
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return usage(format!("rate must be positive, got {}", self.rate));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return usage(format!("duration must be non-negative, got {}", self.duration));
        }
        if !(1..=3).contains(&self.frames_per_datagram) {
            return usage(format!("frames per datagram must be 1, 2 or 3, got {}", self.frames_per_datagram));
        }
        if self.pmu_count == 0 || self.pmu_count > u16::MAX as usize {
            return usage(format!("pmu count must be at least 1, got {}", self.pmu_count));
        }
        if self.pre_channel.sampling < 0 || self.pre_channel.handoff < 0 || self.pre_channel.framing < 0 {
            return usage("on-device delays must be non-negative".into());
        }
        if !(1.0..=80.0).contains(&self.rate) {
            warn!("rate {} fps lies outside the tested 1–80 fps range", self.rate);
        }
        let as_usage = |e: &dyn std::fmt::Display| HarnessError::Usage(e.to_string());
        self.estimator_config().validate().map_err(|e| as_usage(&e))?;
        self.channel.validate().map_err(|e| as_usage(&e))?;
        if self.duration > 0.0 {
            let w = WaveformConfig {
                duration: self.duration,
                ..self.waveform.clone()
            };
            w.validate().map_err(|e| as_usage(&e))?;
        }
        Ok(())
    }

    pub fn estimator_config(&self) -> EstimatorConfig {
        EstimatorConfig {
            nominal_frequency: self.waveform.nominal_frequency,
            reporting_rate: self.rate,
            rocof_mode: self.rocof_mode,
        }
    }

    pub fn scaling(&self) -> ScalingConfig {
        ScalingConfig {
            nominal_frequency: self.waveform.nominal_frequency,
            ..ScalingConfig::default()
        }
    }

    pub fn figure_context(&self) -> FigureContext {
        FigureContext {
            origin: self.waveform.start_time,
            si_window: self.channel.si_window(),
            si_grid_offset: self.channel.si_grid_offset(),
            pre_channel: self.pre_channel.total(),
        }
    }
}

pub fn parse_rocof_mode(s: &str) -> Result<RocofMode, HarnessError> {
    match s {
        "verbatim" => Ok(RocofMode::Verbatim),
        "derivative" => Ok(RocofMode::Derivative),
        other => Err(HarnessError::Usage(format!("unknown rocof mode `{other}`"))),
    }
}

/// Per-frame stage breakdown from a simulated run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameBudget {
    pub stream_id: u16,
    pub sequence_number: u64,
    pub delay: Micros,
    pub budget: DelayBudget,
}

/// Everything a simulated experiment produced.
#[derive(Debug, Clone, Default)]
pub struct Experiment {
    /// Realigned by (t_i, sequence number); includes lost frames.
    pub records: Vec<Realigned>,
    /// Delivered frames only, in record order.
    pub budgets: Vec<FrameBudget>,
    /// One row per PMU (`pmu<id>`) then `all`; streams with nothing delivered are omitted.
    pub stats: Vec<(String, DelayStats)>,
    /// ξ(t_i) series per PMU.
    pub phasors: Vec<Vec<Synchrophasor>>,
    /// One per datagram, departure order.
    pub transits: Vec<TransitResult>,
}

impl Experiment {
    pub fn delay_records(&self) -> Vec<DelayRecord> {
        self.records.iter().map(|r| r.record.clone()).collect()
    }
}

struct Frame {
    stream: u16,
    seq: u64,
    t: Micros,
}

/// Run a simulated experiment in memory.
pub fn simulate_experiment(spec: &ExperimentSpec) -> Result<Experiment, HarnessError> {
    spec.validate()?;
    if spec.duration == 0.0 {
        return Ok(Experiment::default());
    }
    let waveform = WaveformConfig {
        duration: spec.duration,
        ..spec.waveform.clone()
    };
    let channel = ChannelConfig {
        seed: spec.seed,
        ..spec.channel.clone()
    };
    let estimator_config = spec.estimator_config();
    let scaling = spec.scaling();
    let t0 = waveform.start_time;
    let period = estimator_config.period();
    let edges = square_wave_edges(&waveform);

    let mut phasors = Vec::with_capacity(spec.pmu_count);
    let mut frames = Vec::new();
    let mut datagrams = Vec::new();
    for p in 0..spec.pmu_count {
        let stream = (p + 1) as u16;
        let noise_seed = spec.seed.wrapping_add(stream as u64);
        let blocks = generate(&waveform, noise_seed)?;
        let series = estimator::report(&blocks, &edges, &estimator_config, spec.duration)?;
        for (k, chunk) in series.chunks(spec.frames_per_datagram).enumerate() {
            let mut bytes = Vec::new();
            for s in chunk {
                bytes.extend(encode(s, stream, &scaling, spec.phase_count)?);
                frames.push(Frame {
                    stream,
                    seq: ((s.timestamp - t0) as f64 / period as f64).round() as u64,
                    t: s.timestamp,
                });
            }
            let last = chunk.last().expect("chunks are non-empty").timestamp;
            datagrams.push(Datagram {
                stream,
                seq: k as u64,
                departure: last + spec.pre_channel.total(),
                bytes,
            });
        }
        phasors.push(series);
    }
    info!("simulating {} frames in {} datagrams", frames.len(), datagrams.len());
    let outcome = simulate(&datagrams, &channel, t0)?;

    // (stream, datagram seq) → (datagram index, index of its first frame).
    let frame_len = spec.phase_count.frame_len();
    let mut index = std::collections::HashMap::with_capacity(datagrams.len());
    let mut next = 0;
    for (i, d) in datagrams.iter().enumerate() {
        index.insert((d.stream, d.seq), (i, next));
        next += d.bytes.len() / frame_len;
    }

    let mut pdc = Pdc::new(scaling);
    let mut records = Vec::with_capacity(frames.len());
    let mut budgets = std::collections::HashMap::new();
    for &(arrival, idx) in &outcome.arrivals {
        let tr = &outcome.transits[idx];
        let (di, base) = index[&(tr.stream, tr.seq)];
        let d = &datagrams[di];
        for (j, mut r) in pdc.ingest(&d.bytes, arrival).into_iter().enumerate() {
            let f = &frames[base + j];
            r.sequence_number = f.seq;
            if r.status == RecordStatus::Delivered {
                budgets.insert(
                    (f.stream, f.seq),
                    DelayBudget {
                        sampling: Some(spec.pre_channel.sampling),
                        handoff: Some(spec.pre_channel.handoff),
                        framing: Some(spec.pre_channel.framing + (d.departure - spec.pre_channel.total() - f.t)),
                        access_wait: Some(tr.wait),
                        uplink_tx: Some(tr.tx),
                        internet: Some(tr.internet),
                        buffer: None,
                    },
                );
            }
            records.push(r);
        }
    }
    for tr in outcome.transits.iter().filter(|t| !t.delivered) {
        let (_, base) = index[&(tr.stream, tr.seq)];
        for f in &frames[base..base + tr.size / frame_len] {
            records.push(DelayRecord::lost(f.stream, f.seq, f.t, frame_len));
        }
    }

    let records = realign(records);
    let mut budget_rows = Vec::new();
    for r in &records {
        if let Some(mut b) = budgets.remove(&(r.record.stream_id, r.record.sequence_number)) {
            b.buffer = Some(r.buffer_delay);
            budget_rows.push(FrameBudget {
                stream_id: r.record.stream_id,
                sequence_number: r.record.sequence_number,
                delay: r.record.delay_us.unwrap_or_default(),
                budget: b,
            });
        }
    }

    let stats = stats_rows(&records, spec.pmu_count, spec.skip_first)?;
    Ok(Experiment {
        records,
        budgets: budget_rows,
        stats,
        phasors,
        transits: outcome.transits,
    })
}

fn stats_rows(records: &[Realigned], pmu_count: usize, skip_first: bool) -> Result<Vec<(String, DelayStats)>, HarnessError> {
    let kept: Vec<DelayRecord> = records
        .iter()
        .map(|r| &r.record)
        .filter(|r| !(skip_first && r.sequence_number == 0))
        .cloned()
        .collect();
    let mut rows = Vec::new();
    let mut push = |label: String, subset: Vec<DelayRecord>| -> Result<(), HarnessError> {
        let expected = subset.len();
        match compute_stats(&subset, expected) {
            Ok(s) => rows.push((label, s)),
            Err(StatsError::Empty) => warn!("{label}: nothing delivered, no stats row"),
            Err(e) => return Err(HarnessError::Usage(e.to_string())),
        }
        Ok(())
    };
    for p in 1..=pmu_count as u16 {
        push(format!("pmu{p}"), kept.iter().filter(|r| r.stream_id == p).cloned().collect())?;
    }
    if pmu_count > 1 {
        push("all".into(), kept)?;
    }
    Ok(rows)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, HarnessError> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|source| HarnessError::Output { path, source })
}

fn write_budgets(rows: &[FrameBudget], out: BufWriter<File>) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "stream_id", "seq", "delay_us", "d1_us", "d2_us", "d3_us", "d4_wait_us", "d4_tx_us", "d5_us", "d6_us",
    ])?;
    for r in rows {
        let b = &r.budget;
        let cell = |v: Option<Micros>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            r.stream_id.to_string(),
            r.sequence_number.to_string(),
            r.delay.to_string(),
            cell(b.sampling),
            cell(b.handoff),
            cell(b.framing),
            cell(b.access_wait),
            cell(b.uplink_tx),
            cell(b.internet),
            cell(b.buffer),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Run a simulated experiment and write its artifacts into `spec.output_dir`:
/// records.csv, stats.csv, budget.csv, phasors.csv (first PMU) and the figure
/// datasets fig4a..fig7.csv. A zero duration writes header-only files.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Experiment, HarnessError> {
    spec.validate()?;
    let dir = &spec.output_dir;
    fs::create_dir_all(dir).map_err(|source| HarnessError::Output {
        path: dir.clone(),
        source,
    })?;
    let records_out = create(dir, "records.csv")?;

    let exp = simulate_experiment(spec)?;
    let delay_records = exp.delay_records();
    write_records(&delay_records, records_out)?;
    write_stats_csv(&exp.stats, create(dir, "stats.csv")?)?;
    write_budgets(&exp.budgets, create(dir, "budget.csv")?)?;
    let first = exp.phasors.first().map(Vec::as_slice).unwrap_or(&[]);
    estimator::write_csv(first, create(dir, "phasors.csv")?)?;

    for fig in [FigureId::Fig4a, FigureId::Fig4b, FigureId::Fig4c, FigureId::Fig4d] {
        emit_phasor_figure(first, fig, create(dir, &format!("{}.csv", fig.file_stem()))?)?;
    }
    let shown: Vec<DelayRecord> = delay_records
        .into_iter()
        .filter(|r| !(spec.skip_first && r.sequence_number == 0))
        .collect();
    if shown.iter().any(|r| r.status == RecordStatus::Delivered) {
        let ctx = spec.figure_context();
        for fig in [FigureId::Fig5, FigureId::Fig6, FigureId::Fig7] {
            emit_figure_data(&shown, fig, &ctx, create(dir, &format!("{}.csv", fig.file_stem()))?)?;
        }
    }
    for (label, s) in &exp.stats {
        info!(
            "{label}: n {} mean {:.2}±{:.2} ms, st.d. {:.2}, min {:.2}, max {:.2}, jitter {:.2}, loss {:.3}%",
            s.n,
            s.mean,
            s.ci95_halfwidth,
            s.stddev,
            s.min,
            s.max,
            s.jitter,
            100.0 * s.loss_fraction
        );
    }
    Ok(exp)
}

/// Parse a `--phases` value.
pub fn parse_phases(s: &str) -> Result<PhaseCount, HarnessError> {
    u8::from_str(s)
        .ok()
        .and_then(|p| PhaseCount::try_from(p).ok())
        .ok_or_else(|| HarnessError::Usage(format!("phases must be 1 or 3, got `{s}`")))
}
