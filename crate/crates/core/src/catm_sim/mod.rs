//! LTE cat-M uplink plus internet path (δ4, δ5) as a discrete-event model.
//!
//! A frame handed to the modem waits for the next system-information instant
//! (the SI grid, `offset + k·si_window` from the grid origin) before it can use
//! a scheduling grant. Transmission and internet transit are modelled jointly
//! as a base delay: a per-stream Gauss-Markov process with a normal marginal
//! floored at `base_delay_min`. Loss is Bernoulli per datagram, keyed by size.

mod events;

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

pub use events::EventQueue;

use crate::kv::{self, KvError, KvMap};
use crate::time::{from_millis_f64, Micros};

/// Setup delay applied to a stream's first datagram when the connection-setup
/// spike is switched on.
pub const DEFAULT_SETUP_DELAY_MS: f64 = 340.0;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("invalid channel configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Kv(#[from] KvError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    /// si-WindowLength-BR-r13, 20–200 ms.
    pub si_window_ms: f64,
    /// Phase of the SI grid relative to the grid origin, in [0, si_window).
    pub si_grid_offset_ms: f64,
    pub base_delay_mean_ms: f64,
    pub base_delay_stddev_ms: f64,
    pub base_delay_min_ms: f64,
    /// Correlation time of the base-delay process; 0 draws independently per frame.
    pub base_delay_corr_ms: f64,
    /// Fraction of the base delay booked as radio transmission (δ4_tx); the rest is δ5.
    pub tx_share: f64,
    /// Frames of one stream never overtake each other on the uplink.
    pub in_order_delivery: bool,
    /// Extra access delay for each stream's first datagram.
    pub setup_delay_ms: f64,
    /// Datagram size in bytes → loss probability. Unknown sizes never drop.
    pub loss_prob_by_size: BTreeMap<usize, f64>,
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            si_window_ms: 80.0,
            si_grid_offset_ms: 32.5,
            base_delay_mean_ms: 124.5,
            base_delay_stddev_ms: 1.0,
            base_delay_min_ms: 120.0,
            base_delay_corr_ms: 1000.0,
            tx_share: 0.5,
            in_order_delivery: true,
            setup_delay_ms: 0.0,
            loss_prob_by_size: default_loss_table(),
            seed: 1,
        }
    }
}

pub fn default_loss_table() -> BTreeMap<usize, f64> {
    BTreeMap::from([(26, 0.0), (42, 0.002), (52, 0.006), (78, 0.033)])
}

const KEYS: &[&str] = &[
    "si_window",
    "si_grid_offset",
    "base_delay_mean",
    "base_delay_stddev",
    "base_delay_min",
    "base_delay_corr",
    "tx_share",
    "in_order_delivery",
    "setup_delay",
    "seed",
];

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let err = |m: &str| Err(ChannelError::Config(m.to_string()));
        if !(20.0..=200.0).contains(&self.si_window_ms) {
            return err("si_window must lie in [20, 200] ms");
        }
        if !(self.si_grid_offset_ms >= 0.0 && self.si_grid_offset_ms < self.si_window_ms) {
            return err("si_grid_offset must lie in [0, si_window)");
        }
        if !(self.base_delay_min_ms >= 0.0) {
            return err("base_delay_min must be non-negative");
        }
        if !(self.base_delay_stddev_ms >= 0.0) || !self.base_delay_mean_ms.is_finite() {
            return err("base delay mean must be finite and stddev non-negative");
        }
        if !(self.base_delay_corr_ms >= 0.0) {
            return err("base_delay_corr must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.tx_share) {
            return err("tx_share must lie in [0, 1]");
        }
        if !(self.setup_delay_ms >= 0.0) {
            return err("setup_delay must be non-negative");
        }
        if self.loss_prob_by_size.values().any(|p| !(0.0..=1.0).contains(p)) {
            return err("loss probabilities must lie in [0, 1]");
        }
        Ok(())
    }

    /// Apply `key = value` overrides (times in ms; `loss_<bytes> = p` for the loss table).
    pub fn apply_kv(&mut self, map: &KvMap) -> Result<(), ChannelError> {
        kv::set(map, "si_window", &mut self.si_window_ms)?;
        kv::set(map, "si_grid_offset", &mut self.si_grid_offset_ms)?;
        kv::set(map, "base_delay_mean", &mut self.base_delay_mean_ms)?;
        kv::set(map, "base_delay_stddev", &mut self.base_delay_stddev_ms)?;
        kv::set(map, "base_delay_min", &mut self.base_delay_min_ms)?;
        kv::set(map, "base_delay_corr", &mut self.base_delay_corr_ms)?;
        kv::set(map, "tx_share", &mut self.tx_share)?;
        kv::set(map, "in_order_delivery", &mut self.in_order_delivery)?;
        kv::set(map, "setup_delay", &mut self.setup_delay_ms)?;
        kv::set(map, "seed", &mut self.seed)?;
        for key in map.keys() {
            if let Some(size) = key.strip_prefix("loss_") {
                let size: usize = size
                    .parse()
                    .map_err(|_| ChannelError::Config(format!("bad loss key `{key}`")))?;
                let p = map.get::<f64>(key)?.unwrap_or(0.0);
                self.loss_prob_by_size.insert(size, p);
            }
        }
        self.validate()
    }

    pub fn known_keys() -> &'static [&'static str] {
        KEYS
    }

    pub fn loss_probability(&self, size: usize) -> f64 {
        self.loss_prob_by_size.get(&size).copied().unwrap_or(0.0)
    }

    pub fn si_window(&self) -> Micros {
        from_millis_f64(self.si_window_ms)
    }

    pub fn si_grid_offset(&self) -> Micros {
        from_millis_f64(self.si_grid_offset_ms)
    }
}

/// Outcome of one datagram crossing the channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitResult {
    pub stream: u16,
    pub seq: u64,
    pub size: usize,
    /// Instant the datagram reached the modem.
    pub departure_time: Micros,
    /// Meaningful only when delivered.
    pub arrival_time: Micros,
    pub delivered: bool,
    /// δ4 access part: setup plus wait for the next SI instant.
    pub wait: Micros,
    /// δ4 transmission part, including any in-order hold.
    pub tx: Micros,
    /// δ5, internet transit.
    pub internet: Micros,
}

/// Time from `t` to the next SI instant at or after it.
pub fn si_wait(t: Micros, origin: Micros, window: Micros, offset: Micros) -> Micros {
    let r = (t - origin - offset).rem_euclid(window);
    if r == 0 {
        0
    } else {
        window - r
    }
}

#[derive(Debug, Clone, Copy)]
struct StreamState {
    last_sample_time: Micros,
    latent: f64,
    last_arrival: Option<Micros>,
}

/// Stateful channel shared by every stream of a run.
pub struct Channel {
    config: ChannelConfig,
    origin: Micros,
    rng: ChaCha8Rng,
    streams: HashMap<u16, StreamState>,
}

impl Channel {
    /// `origin` anchors the SI grid (normally the experiment start).
    pub fn new(config: ChannelConfig, origin: Micros) -> Result<Self, ChannelError> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            config,
            origin,
            rng,
            streams: HashMap::new(),
        })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    fn base_delay(&mut self, stream: u16, t: Micros) -> (Micros, Option<Micros>, bool) {
        let innovation: f64 = self.rng.sample(StandardNormal);
        let corr = self.config.base_delay_corr_ms * 1_000.0;
        let (latent, last_arrival, first) = match self.streams.get(&stream) {
            Some(s) if corr > 0.0 => {
                let rho = (-((t - s.last_sample_time) as f64) / corr).exp();
                (rho * s.latent + (1.0 - rho * rho).sqrt() * innovation, s.last_arrival, false)
            }
            Some(s) => (innovation, s.last_arrival, false),
            None => (innovation, None, true),
        };
        self.streams.insert(
            stream,
            StreamState {
                last_sample_time: t,
                latent,
                last_arrival,
            },
        );
        let ms = (self.config.base_delay_mean_ms + self.config.base_delay_stddev_ms * latent)
            .max(self.config.base_delay_min_ms);
        (from_millis_f64(ms), last_arrival, first)
    }

    /// Push one datagram into the uplink at `departure`.
    pub fn transmit(&mut self, stream: u16, seq: u64, frame_bytes: &[u8], departure: Micros) -> TransitResult {
        let (base, last_arrival, first) = self.base_delay(stream, departure);
        let lost = self.rng.random::<f64>() < self.config.loss_probability(frame_bytes.len());

        let setup = if first { from_millis_f64(self.config.setup_delay_ms) } else { 0 };
        let wait = setup
            + si_wait(
                departure + setup,
                self.origin,
                self.config.si_window(),
                self.config.si_grid_offset(),
            );
        let mut tx = (base as f64 * self.config.tx_share).round() as Micros;
        let internet = base - tx;
        let mut arrival = departure + wait + tx + internet;
        if self.config.in_order_delivery && !lost {
            if let Some(prev) = last_arrival {
                if prev > arrival {
                    tx += prev - arrival;
                    arrival = prev;
                }
            }
        }
        if !lost {
            if let Some(s) = self.streams.get_mut(&stream) {
                s.last_arrival = Some(arrival);
            }
        }
        TransitResult {
            stream,
            seq,
            size: frame_bytes.len(),
            departure_time: departure,
            arrival_time: arrival,
            delivered: !lost,
            wait,
            tx,
            internet,
        }
    }
}

/// Transmit one datagram on a throwaway channel whose SI grid is anchored at 0.
pub fn transmit(frame_bytes: &[u8], departure: Micros, config: &ChannelConfig) -> Result<TransitResult, ChannelError> {
    let mut ch = Channel::new(config.clone(), 0)?;
    Ok(ch.transmit(0, 0, frame_bytes, departure))
}

/// A datagram queued for the uplink.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Datagram {
    pub stream: u16,
    pub seq: u64,
    pub departure: Micros,
    pub bytes: Vec<u8>,
}

/// Everything a run produced: per-datagram transits (departure order) and
/// delivered datagrams in arrival order.
#[derive(Debug, Clone, Default)]
pub struct SimOutcome {
    pub transits: Vec<TransitResult>,
    /// (arrival time, index into `transits`).
    pub arrivals: Vec<(Micros, usize)>,
}

enum Event {
    Depart(usize),
    Arrive(usize),
}

/// Run every datagram of every stream through one shared event queue.
pub fn simulate(datagrams: &[Datagram], config: &ChannelConfig, origin: Micros) -> Result<SimOutcome, ChannelError> {
    let mut channel = Channel::new(config.clone(), origin)?;
    let mut queue = EventQueue::new();
    let mut order: Vec<usize> = (0..datagrams.len()).collect();
    order.sort_by_key(|&i| (datagrams[i].departure, datagrams[i].stream, datagrams[i].seq));
    for i in order {
        queue.push(datagrams[i].departure, Event::Depart(i));
    }

    let mut slots: Vec<Option<TransitResult>> = vec![None; datagrams.len()];
    let mut departed = Vec::with_capacity(datagrams.len());
    let mut arrivals = Vec::new();
    while let Some((time, event)) = queue.pop() {
        match event {
            Event::Depart(i) => {
                let d = &datagrams[i];
                let r = channel.transmit(d.stream, d.seq, &d.bytes, time);
                if r.delivered {
                    queue.push(r.arrival_time, Event::Arrive(i));
                }
                slots[i] = Some(r);
                departed.push(i);
            }
            Event::Arrive(i) => arrivals.push((time, i)),
        }
    }

    // Re-index from input order to departure order.
    let mut position = vec![0; datagrams.len()];
    for (pos, &i) in departed.iter().enumerate() {
        position[i] = pos;
    }
    let transits = departed
        .iter()
        .map(|&i| slots[i].take().expect("every datagram departs"))
        .collect();
    let arrivals = arrivals.into_iter().map(|(t, i)| (t, position[i])).collect();
    Ok(SimOutcome { transits, arrivals })
}

/// Single-stream run: frames depart on the given times in order.
pub fn run_stream(frames: &[(Micros, Vec<u8>)], config: &ChannelConfig, origin: Micros) -> Result<Vec<TransitResult>, ChannelError> {
    let datagrams: Vec<Datagram> = frames
        .iter()
        .enumerate()
        .map(|(i, (t, b))| Datagram {
            stream: 0,
            seq: i as u64,
            departure: *t,
            bytes: b.clone(),
        })
        .collect();
    Ok(simulate(&datagrams, config, origin)?.transits)
}
