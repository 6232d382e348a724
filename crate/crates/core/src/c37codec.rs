//! IEEE C37.118.2 data frames with fixed 16-bit polar phasors.
//!
//! Wire layout (big-endian):
//!
//! ```text
//! SYNC(2) FRAMESIZE(2) IDCODE(2) SOC(4) FRACSEC(4) STAT(2)
//! PHASORS(4·n) FREQ(2) DFREQ(2) [ANALOG(2·4), three-phase only] CHK(2)
//! ```
//!
//! A single-phase frame is 26 bytes, a three-phase frame 42 bytes. Scaling
//! (PHUNIT, TIME_BASE, FNOM) normally lives in a CFG-2 frame; here it is
//! passed out of band as a [`ScalingConfig`].

use std::f64::consts::PI;
use std::fmt::Write as _;

use thiserror::Error;

use crate::estimator::{wrap_phase, Synchrophasor};
use crate::time::{Micros, MICROS_PER_SEC};

/// Data frame, version 1.
pub const SYNC_DATA_V1: u16 = 0xAA01;
pub const SINGLE_PHASE_FRAME_LEN: usize = 26;
pub const THREE_PHASE_FRAME_LEN: usize = 42;
/// Zero-filled 16-bit analog words padding the three-phase frame to 42 bytes.
pub const THREE_PHASE_ANALOG_WORDS: usize = 4;
/// Smallest frame the decoder accepts.
pub const MIN_FRAME_LEN: usize = SINGLE_PHASE_FRAME_LEN;

const HEADER_LEN: usize = 16;
const ANGLE_SCALE: f64 = 1e4;
const FREQ_SCALE: f64 = 1e3;
const DFREQ_SCALE: f64 = 1e2;
const FRACTION_MASK: u32 = 0x00FF_FFFF;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("value out of range: {0}")]
    Range(String),
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("truncated frame: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("CRC mismatch: frame carries {carried:#06x}, computed {computed:#06x}")]
    Integrity { carried: u16, computed: u16 },
    #[error("invalid scaling: {0}")]
    Scaling(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhaseCount {
    #[default]
    Single,
    Three,
}

impl PhaseCount {
    pub fn phasors(self) -> usize {
        match self {
            PhaseCount::Single => 1,
            PhaseCount::Three => 3,
        }
    }

    pub fn frame_len(self) -> usize {
        match self {
            PhaseCount::Single => SINGLE_PHASE_FRAME_LEN,
            PhaseCount::Three => THREE_PHASE_FRAME_LEN,
        }
    }

    fn analog_words(self) -> usize {
        match self {
            PhaseCount::Single => 0,
            PhaseCount::Three => THREE_PHASE_ANALOG_WORDS,
        }
    }

    fn from_frame_len(len: usize) -> Option<Self> {
        match len {
            SINGLE_PHASE_FRAME_LEN => Some(PhaseCount::Single),
            THREE_PHASE_FRAME_LEN => Some(PhaseCount::Three),
            _ => None,
        }
    }
}

impl TryFrom<u8> for PhaseCount {
    type Error = CodecError;

    fn try_from(n: u8) -> Result<Self, Self::Error> {
        match n {
            1 => Ok(PhaseCount::Single),
            3 => Ok(PhaseCount::Three),
            other => Err(CodecError::Range(format!("phase count must be 1 or 3, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingConfig {
    /// Volts per magnitude count.
    pub phunit: f64,
    /// FRACSEC ticks per second.
    pub time_base: u32,
    /// FNOM; FREQ is carried as a deviation from it.
    pub nominal_frequency: f64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            phunit: 2.0 / 65535.0,
            time_base: 1_000_000,
            nominal_frequency: 50.0,
        }
    }
}

impl ScalingConfig {
    pub fn validate(&self) -> Result<(), CodecError> {
        if !(self.phunit.is_finite() && self.phunit > 0.0) {
            return Err(CodecError::Scaling("phunit must be positive".into()));
        }
        if self.time_base == 0 || self.time_base > FRACTION_MASK + 1 {
            return Err(CodecError::Scaling("time_base must be in 1..=2^24".into()));
        }
        if !(self.nominal_frequency.is_finite() && self.nominal_frequency > 0.0) {
            return Err(CodecError::Scaling("nominal frequency must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhasorField {
    pub magnitude: u16,
    /// Radians × 10⁴.
    pub angle: i16,
}

/// A decoded data frame, fields as carried on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataFrame {
    pub sync: u16,
    pub frame_size: u16,
    pub idcode: u16,
    pub soc: u32,
    /// Time-quality byte in the top 8 bits, fraction count in the low 24.
    pub fracsec: u32,
    pub stat: u16,
    pub phasors: Vec<PhasorField>,
    /// Deviation from FNOM in mHz.
    pub freq: i16,
    /// ROCOF × 100.
    pub dfreq: i16,
    pub analog: Vec<i16>,
    pub chk: u16,
}

impl DataFrame {
    pub fn fraction(&self) -> u32 {
        self.fracsec & FRACTION_MASK
    }

    pub fn time_quality(&self) -> u8 {
        (self.fracsec >> 24) as u8
    }

    pub fn phase_count(&self) -> PhaseCount {
        if self.phasors.len() == 3 {
            PhaseCount::Three
        } else {
            PhaseCount::Single
        }
    }

    /// t_i in microseconds since the UNIX epoch.
    pub fn timestamp(&self, scaling: &ScalingConfig) -> Micros {
        let frac = self.fraction() as f64 * MICROS_PER_SEC as f64 / scaling.time_base as f64;
        self.soc as Micros * MICROS_PER_SEC + frac.round() as Micros
    }

    /// Phase-A synchrophasor recovered from the frame.
    pub fn to_synchrophasor(&self, scaling: &ScalingConfig) -> Synchrophasor {
        let a = self.phasors[0];
        Synchrophasor {
            magnitude: a.magnitude as f64 * scaling.phunit,
            phase: wrap_phase(a.angle as f64 / ANGLE_SCALE),
            frequency: scaling.nominal_frequency + self.freq as f64 / FREQ_SCALE,
            rocof: self.dfreq as f64 / DFREQ_SCALE,
            timestamp: self.timestamp(scaling),
        }
    }
}

/// CRC-CCITT: polynomial 0x1021, initial value 0xFFFF, no reflection, no final XOR.
pub fn crc16(bytes: &[u8]) -> u16 {
    let mut crc: u16 = 0xFFFF;
    for &byte in bytes {
        crc ^= (byte as u16) << 8;
        for _ in 0..8 {
            crc = if crc & 0x8000 != 0 {
                (crc << 1) ^ 0x1021
            } else {
                crc << 1
            };
        }
    }
    crc
}

fn to_i16(value: f64, what: &str) -> Result<i16, CodecError> {
    let r = value.round();
    if !r.is_finite() || r < i16::MIN as f64 || r > i16::MAX as f64 {
        return Err(CodecError::Range(format!("{what} {value} does not fit a signed 16-bit field")));
    }
    Ok(r as i16)
}

fn angle_field(phase: f64) -> Result<i16, CodecError> {
    if !phase.is_finite() {
        return Err(CodecError::Range("phase must be finite".into()));
    }
    to_i16(wrap_phase(phase) * ANGLE_SCALE, "angle")
}

/// Pack a synchrophasor into a 26-byte (single-phase) or 42-byte (three-phase)
/// data frame. Phases B and C are phase A shifted by −120° and +120°.
pub fn encode(
    s: &Synchrophasor,
    idcode: u16,
    scaling: &ScalingConfig,
    phases: PhaseCount,
) -> Result<Vec<u8>, CodecError> {
    scaling.validate()?;
    if s.timestamp < 0 {
        return Err(CodecError::Range("timestamp precedes the epoch".into()));
    }
    let mut soc = s.timestamp / MICROS_PER_SEC;
    let sub = s.timestamp % MICROS_PER_SEC;
    let mut fraction =
        (sub as f64 * scaling.time_base as f64 / MICROS_PER_SEC as f64).round() as u64;
    if fraction >= scaling.time_base as u64 {
        fraction -= scaling.time_base as u64;
        soc += 1;
    }
    let soc = u32::try_from(soc).map_err(|_| CodecError::Range("SOC exceeds 32 bits".into()))?;

    let counts = (s.magnitude / scaling.phunit).round();
    if !(counts.is_finite() && (0.0..=u16::MAX as f64).contains(&counts)) {
        return Err(CodecError::Range(format!(
            "magnitude {} V does not fit 16 bits at phunit {}",
            s.magnitude, scaling.phunit
        )));
    }
    let magnitude = counts as u16;
    let shift = 2.0 * PI / 3.0;
    let angles = match phases {
        PhaseCount::Single => vec![angle_field(s.phase)?],
        PhaseCount::Three => vec![
            angle_field(s.phase)?,
            angle_field(s.phase - shift)?,
            angle_field(s.phase + shift)?,
        ],
    };
    let freq = to_i16((s.frequency - scaling.nominal_frequency) * FREQ_SCALE, "frequency deviation")?;
    let dfreq = to_i16(s.rocof * DFREQ_SCALE, "rocof")?;

    let len = phases.frame_len();
    let mut out = Vec::with_capacity(len);
    out.extend_from_slice(&SYNC_DATA_V1.to_be_bytes());
    out.extend_from_slice(&(len as u16).to_be_bytes());
    out.extend_from_slice(&idcode.to_be_bytes());
    out.extend_from_slice(&soc.to_be_bytes());
    out.extend_from_slice(&(fraction as u32).to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    for angle in angles {
        out.extend_from_slice(&magnitude.to_be_bytes());
        out.extend_from_slice(&angle.to_be_bytes());
    }
    out.extend_from_slice(&freq.to_be_bytes());
    out.extend_from_slice(&dfreq.to_be_bytes());
    for _ in 0..phases.analog_words() {
        out.extend_from_slice(&0i16.to_be_bytes());
    }
    let chk = crc16(&out);
    out.extend_from_slice(&chk.to_be_bytes());
    debug_assert_eq!(out.len(), len);
    Ok(out)
}

fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

fn be32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decode exactly one data frame.
///
/// A frame cut short of a legal FRAMESIZE is truncated. Otherwise the CRC is
/// checked before SYNC and FRAMESIZE so that any corruption of a complete
/// frame surfaces as [`CodecError::Integrity`].
pub fn decode(bytes: &[u8]) -> Result<DataFrame, CodecError> {
    let n = bytes.len();
    if n < MIN_FRAME_LEN {
        return Err(CodecError::Truncated { expected: MIN_FRAME_LEN, actual: n });
    }
    let declared = be16(bytes, 2) as usize;
    if PhaseCount::from_frame_len(declared).is_some() && declared > n {
        return Err(CodecError::Truncated { expected: declared, actual: n });
    }
    let carried = be16(bytes, n - 2);
    let computed = crc16(&bytes[..n - 2]);
    if carried != computed {
        return Err(CodecError::Integrity { carried, computed });
    }
    let sync = be16(bytes, 0);
    if sync != SYNC_DATA_V1 {
        return Err(CodecError::Malformed(format!("sync word {sync:#06x} is not a data frame")));
    }
    let frame_size = be16(bytes, 2);
    if frame_size as usize != n {
        return Err(CodecError::Truncated { expected: frame_size as usize, actual: n });
    }
    let phases = PhaseCount::from_frame_len(n)
        .ok_or_else(|| CodecError::Malformed(format!("unsupported frame size {n}")))?;

    let mut at = HEADER_LEN;
    let phasors = (0..phases.phasors())
        .map(|_| {
            let p = PhasorField {
                magnitude: be16(bytes, at),
                angle: be16(bytes, at + 2) as i16,
            };
            at += 4;
            p
        })
        .collect();
    let freq = be16(bytes, at) as i16;
    let dfreq = be16(bytes, at + 2) as i16;
    at += 4;
    let analog = (0..phases.analog_words())
        .map(|i| be16(bytes, at + 2 * i) as i16)
        .collect();

    Ok(DataFrame {
        sync,
        frame_size,
        idcode: be16(bytes, 4),
        soc: be32(bytes, 6),
        fracsec: be32(bytes, 10),
        stat: be16(bytes, 14),
        phasors,
        freq,
        dfreq,
        analog,
        chk: carried,
    })
}

/// One frame-sized slice of a datagram and its decode outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitFrame {
    pub size: usize,
    pub result: Result<DataFrame, CodecError>,
}

/// Split a datagram of concatenated frames on FRAMESIZE boundaries and decode
/// each. When a FRAMESIZE cannot be trusted the remainder is reported as one
/// failed chunk.
pub fn split_datagram(bytes: &[u8]) -> Vec<SplitFrame> {
    let mut out = Vec::new();
    let mut rest = bytes;
    if rest.is_empty() {
        out.push(SplitFrame {
            size: 0,
            result: Err(CodecError::Truncated { expected: MIN_FRAME_LEN, actual: 0 }),
        });
        return out;
    }
    while !rest.is_empty() {
        let declared = if rest.len() >= 4 { be16(rest, 2) as usize } else { 0 };
        let plausible = PhaseCount::from_frame_len(declared).is_some() && declared <= rest.len();
        let take = if plausible { declared } else { rest.len() };
        out.push(SplitFrame {
            size: take,
            result: decode(&rest[..take]),
        });
        rest = &rest[take..];
    }
    out
}

/// Hex dump with offsets and a per-field breakdown when the frame decodes.
pub fn hex_dump(bytes: &[u8]) -> String {
    let mut s = String::new();
    for (row, chunk) in bytes.chunks(16).enumerate() {
        let _ = write!(s, "{:04x}:", row * 16);
        for b in chunk {
            let _ = write!(s, " {b:02x}");
        }
        s.push('\n');
    }
    for part in split_datagram(bytes) {
        match part.result {
            Ok(f) => {
                let _ = writeln!(
                    s,
                    "frame {} bytes: idcode={} soc={} fracsec={:#010x} stat={:#06x} phasors={:?} freq={} dfreq={} chk={:#06x}",
                    part.size, f.idcode, f.soc, f.fracsec, f.stat, f.phasors, f.freq, f.dfreq, f.chk
                );
            }
            Err(e) => {
                let _ = writeln!(s, "frame {} bytes: {e}", part.size);
            }
        }
    }
    s
}
