use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use catm_pmu::c37codec::{hex_dump, PhaseCount, ScalingConfig};
use catm_pmu::catm_sim::DEFAULT_SETUP_DELAY_MS;
use catm_pmu::harness::{
    emit_figure_data, emit_phasor_figure, parse_rocof_mode, read_phasors, run_experiment, run_udp_client,
    ExperimentSpec, FigureContext, FigureId, HarnessError, Mode, UdpClientOptions,
};
use catm_pmu::kv::KvMap;
use catm_pmu::pdc::{read_records, serve_udp, ServerOptions};
use catm_pmu::time::{from_millis_f64, MICROS_PER_SEC};
use catm_pmu::waveform::WaveformConfig;

#[derive(Parser)]
#[command(name = "catm-pmu", version, about = "Synchrophasor streaming over an LTE cat-M uplink: simulation and measurement")]
struct Cli {
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulated experiment and write CSV artifacts.
    Simulate(SimulateArgs),
    /// Stream synthetic frames to a PDC over UDP.
    UdpClient(ClientArgs),
    /// Receive frames over UDP and record delays.
    UdpServer(ServerArgs),
    /// Build a figure dataset from a records or phasor CSV.
    Report(ReportArgs),
    /// Decode and dump a datagram.
    Hexdump(HexdumpArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Key-value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reporting rate in frames per second.
    #[arg(long)]
    rate: Option<f64>,
    /// Seconds of signal.
    #[arg(long)]
    duration: Option<f64>,
    /// SI window in ms.
    #[arg(long)]
    si_window: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// 1 or 3.
    #[arg(long)]
    phases: Option<u8>,
    #[arg(long)]
    frames_per_datagram: Option<usize>,
    #[arg(long)]
    pmus: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Source frequency in Hz.
    #[arg(long)]
    frequency: Option<f64>,
    /// Additive noise standard deviation in volts.
    #[arg(long)]
    noise: Option<f64>,
    /// verbatim or derivative.
    #[arg(long)]
    rocof_mode: Option<String>,
    /// Add the connection-setup delay to each stream's first datagram.
    #[arg(long)]
    connection_setup: bool,
    /// Leave each stream's first frame out of statistics and figures.
    #[arg(long)]
    skip_first: bool,
    /// Let frames overtake each other on the uplink.
    #[arg(long)]
    allow_reorder: bool,
}

#[derive(Args)]
struct ClientArgs {
    /// PDC address, host:port.
    #[arg(long)]
    server: String,
    #[arg(long, default_value_t = 50.0)]
    rate: f64,
    #[arg(long, default_value_t = 60.0)]
    duration: f64,
    #[arg(long, default_value_t = 1)]
    idcode: u16,
    #[arg(long, default_value_t = 1)]
    phases: u8,
    #[arg(long, default_value_t = 1)]
    frames_per_datagram: usize,
    #[arg(long, default_value_t = 50.0)]
    frequency: f64,
    #[arg(long, default_value_t = 2.0)]
    amplitude: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct ServerArgs {
    #[arg(long, default_value = "0.0.0.0:4712")]
    bind: String,
    /// Output directory for records.csv and stats.csv.
    #[arg(long)]
    out: PathBuf,
    /// Seconds between statistics snapshots.
    #[arg(long, default_value_t = 10)]
    snapshot_secs: u64,
    /// Stop after this many datagrams.
    #[arg(long)]
    max_datagrams: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    /// 4a, 4b, 4c, 4d, 5, 6 or 7.
    #[arg(long)]
    figure: String,
    /// records.csv for 5–7, phasors.csv for 4a–4d.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// SI window in ms, for the fig 7 groups.
    #[arg(long, default_value_t = 80.0)]
    si_window: f64,
    /// SI grid offset in ms.
    #[arg(long, default_value_t = 32.5)]
    si_grid_offset: f64,
    /// δ1+δ2+δ3 in ms.
    #[arg(long, default_value_t = 2.5)]
    pre_channel: f64,
}

#[derive(Args)]
struct HexdumpArgs {
    /// Binary datagram file.
    file: PathBuf,
    /// The file holds hex text instead of raw bytes.
    #[arg(long)]
    hex: bool,
}

fn simulate(args: SimulateArgs) -> Result<(), HarnessError> {
    let mut spec = ExperimentSpec {
        mode: Mode::Simulate,
        ..ExperimentSpec::default()
    };
    if let Some(path) = &args.config {
        spec.apply_kv(&KvMap::load(path)?)?;
    }
    if let Some(v) = args.rate {
        spec.rate = v;
    }
    if let Some(v) = args.duration {
        spec.duration = v;
    }
    if let Some(v) = args.si_window {
        spec.channel.si_window_ms = v;
        spec.channel.si_grid_offset_ms %= v;
    }
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    if let Some(v) = args.phases {
        spec.phase_count = PhaseCount::try_from(v).map_err(|e| HarnessError::Usage(e.to_string()))?;
    }
    if let Some(v) = args.frames_per_datagram {
        spec.frames_per_datagram = v;
    }
    if let Some(v) = args.pmus {
        spec.pmu_count = v;
    }
    if let Some(v) = args.out {
        spec.output_dir = v;
    }
    if let Some(v) = args.frequency {
        spec.waveform.actual_frequency = v;
    }
    if let Some(v) = args.noise {
        spec.waveform.noise_stddev = v;
    }
    if let Some(m) = &args.rocof_mode {
        spec.rocof_mode = parse_rocof_mode(m)?;
    }
    if args.connection_setup {
        spec.channel.setup_delay_ms = DEFAULT_SETUP_DELAY_MS;
    }
    if args.allow_reorder {
        spec.channel.in_order_delivery = false;
    }
    spec.skip_first |= args.skip_first;
    run_experiment(&spec)?;
    info!("artifacts written to {}", spec.output_dir.display());
    Ok(())
}

fn shutdown_flag() -> Result<Arc<AtomicBool>, HarnessError> {
    let flag = Arc::new(AtomicBool::new(false));
    let f = flag.clone();
    ctrlc::set_handler(move || f.store(true, Ordering::Relaxed))
        .map_err(|e| HarnessError::Io(std::io::Error::other(e)))?;
    Ok(flag)
}

fn udp_client(args: ClientArgs) -> Result<(), HarnessError> {
    let options = UdpClientOptions {
        server: args.server,
        rate: args.rate,
        duration: args.duration,
        idcode: args.idcode,
        phase_count: PhaseCount::try_from(args.phases).map_err(|e| HarnessError::Usage(e.to_string()))?,
        frames_per_datagram: args.frames_per_datagram,
        waveform: WaveformConfig {
            actual_frequency: args.frequency,
            amplitude: args.amplitude,
            noise_stddev: args.noise,
            ..WaveformConfig::default()
        },
        rocof_mode: Default::default(),
        seed: args.seed,
    };
    let summary = run_udp_client(&options, shutdown_flag()?)?;
    info!("sent {} frames in {} datagrams", summary.frames, summary.datagrams);
    Ok(())
}

fn udp_server(args: ServerArgs) -> Result<(), HarnessError> {
    fs::create_dir_all(&args.out).map_err(|source| HarnessError::Output {
        path: args.out.clone(),
        source,
    })?;
    let options = ServerOptions {
        records_path: args.out.join("records.csv"),
        stats_path: Some(args.out.join("stats.csv")),
        snapshot_every: Duration::from_secs(args.snapshot_secs.max(1)),
        max_datagrams: args.max_datagrams,
        scaling: ScalingConfig::default(),
    };
    info!("listening on {}", args.bind);
    let summary = serve_udp(&args.bind, &options, shutdown_flag()?)?;
    info!("{} datagrams, {} frames", summary.counters.datagrams, summary.counters.frames);
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), HarnessError> {
    let figure: FigureId = args.figure.parse()?;
    let input = File::open(&args.input)?;
    let out = BufWriter::new(File::create(&args.out)?);
    if figure.uses_phasors() {
        return emit_phasor_figure(&read_phasors(input)?, figure, out);
    }
    let records = read_records(input)?;
    let first = records.iter().filter_map(|r| r.t_us).min().unwrap_or(0);
    let ctx = FigureContext {
        origin: first.div_euclid(MICROS_PER_SEC) * MICROS_PER_SEC,
        si_window: from_millis_f64(args.si_window),
        si_grid_offset: from_millis_f64(args.si_grid_offset),
        pre_channel: from_millis_f64(args.pre_channel),
    };
    if ctx.si_window <= 0 {
        return Err(HarnessError::Usage("si window must be positive".into()));
    }
    emit_figure_data(&records, figure, &ctx, out)
}

fn hexdump(args: HexdumpArgs) -> Result<(), HarnessError> {
    let raw = fs::read(&args.file)?;
    let bytes = if args.hex {
        let text: String = String::from_utf8_lossy(&raw).split_whitespace().collect();
        if !text.len().is_multiple_of(2) {
            return Err(HarnessError::Usage("odd number of hex digits".into()));
        }
        (0..text.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&text[i..i + 2], 16))
            .collect::<Result<Vec<u8>, _>>()
            .map_err(|e| HarnessError::Usage(format!("bad hex: {e}")))?
    } else {
        raw
    };
    print!("{}", hex_dump(&bytes));
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::UdpClient(a) => udp_client(a),
        Command::UdpServer(a) => udp_server(a),
        Command::Report(a) => report(a),
        Command::Hexdump(a) => hexdump(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
