//! Plot-ready CSV datasets for the phasor plots (4a–4d) and the delay plots (5–7).

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use super::HarnessError;
use crate::estimator::Synchrophasor;
use crate::pdc::{DelayRecord, RecordStatus};
use crate::time::{Micros, MICROS_PER_SEC};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureId {
    /// Magnitude over time.
    Fig4a,
    /// Phase over time.
    Fig4b,
    /// Frequency over time.
    Fig4c,
    /// ROCOF over time.
    Fig4d,
    /// Delay histogram, 1 ms bins.
    Fig5,
    /// D_i against t_i.
    Fig6,
    /// Generation and reception instants with SI group.
    Fig7,
}

impl FromStr for FigureId {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim_start_matches("fig") {
            "4a" => FigureId::Fig4a,
            "4b" => FigureId::Fig4b,
            "4c" => FigureId::Fig4c,
            "4d" => FigureId::Fig4d,
            "5" => FigureId::Fig5,
            "6" => FigureId::Fig6,
            "7" => FigureId::Fig7,
            other => return Err(HarnessError::Usage(format!("unknown figure `{other}`"))),
        })
    }
}

impl fmt::Display for FigureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FigureId::Fig4a => "4a",
            FigureId::Fig4b => "4b",
            FigureId::Fig4c => "4c",
            FigureId::Fig4d => "4d",
            FigureId::Fig5 => "5",
            FigureId::Fig6 => "6",
            FigureId::Fig7 => "7",
        })
    }
}

impl FigureId {
    pub fn file_stem(self) -> String {
        format!("fig{self}")
    }

    pub fn uses_phasors(self) -> bool {
        matches!(self, FigureId::Fig4a | FigureId::Fig4b | FigureId::Fig4c | FigureId::Fig4d)
    }
}

/// What the delay figures need to know about the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FigureContext {
    /// SI grid origin and time zero of the plots.
    pub origin: Micros,
    pub si_window: Micros,
    pub si_grid_offset: Micros,
    /// δ1 + δ2 + δ3.
    pub pre_channel: Micros,
}

impl FigureContext {
    /// SI instant index that serves a frame generated at `t`.
    pub fn group(&self, t: Micros) -> i64 {
        let x = t + self.pre_channel - self.origin - self.si_grid_offset;
        (x + self.si_window - 1).div_euclid(self.si_window)
    }
}

fn secs(us: Micros) -> f64 {
    us as f64 / MICROS_PER_SEC as f64
}

/// Write one of figures 4a–4d from a ξ(t_i) series; time is relative to the first report.
pub fn emit_phasor_figure<W: Write>(phasors: &[Synchrophasor], figure: FigureId, out: W) -> Result<(), HarnessError> {
    let (column, pick): (&str, fn(&Synchrophasor) -> f64) = match figure {
        FigureId::Fig4a => ("v", |p| p.magnitude),
        FigureId::Fig4b => ("phi", |p| p.phase),
        FigureId::Fig4c => ("f", |p| p.frequency),
        FigureId::Fig4d => ("rho", |p| p.rocof),
        other => return Err(HarnessError::Usage(format!("figure {other} is built from delay records"))),
    };
    let t0 = phasors.first().map_or(0, |p| p.timestamp);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t_s", column])?;
    for p in phasors {
        w.write_record([secs(p.timestamp - t0).to_string(), pick(p).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Write one of figures 5–7 from delay records. Only delivered frames appear.
pub fn emit_figure_data<W: Write>(
    records: &[DelayRecord],
    figure: FigureId,
    ctx: &FigureContext,
    out: W,
) -> Result<(), HarnessError> {
    if figure.uses_phasors() {
        return Err(HarnessError::Usage(format!("figure {figure} is built from a phasor series")));
    }
    let mut delivered: Vec<(Micros, Micros)> = records
        .iter()
        .filter(|r| r.status == RecordStatus::Delivered)
        .filter_map(|r| Some((r.t_us?, r.t_prime_us?)))
        .collect();
    if delivered.is_empty() {
        return Err(HarnessError::Usage(format!("figure {figure} needs at least one delivered record")));
    }
    delivered.sort_unstable();

    let mut w = csv::Writer::from_writer(out);
    match figure {
        FigureId::Fig5 => {
            let mut bins: BTreeMap<i64, u64> = BTreeMap::new();
            for &(t, tp) in &delivered {
                *bins.entry((tp - t).div_euclid(1_000)).or_default() += 1;
            }
            let lo = *bins.keys().next().expect("non-empty");
            let hi = *bins.keys().next_back().expect("non-empty");
            w.write_record(["bin_ms", "count"])?;
            for b in lo..=hi {
                w.write_record([b.to_string(), bins.get(&b).copied().unwrap_or(0).to_string()])?;
            }
        }
        FigureId::Fig6 => {
            w.write_record(["t_s", "delay_ms"])?;
            for &(t, tp) in &delivered {
                w.write_record([secs(t - ctx.origin).to_string(), ((tp - t) as f64 / 1_000.0).to_string()])?;
            }
        }
        FigureId::Fig7 => {
            w.write_record(["t_s", "t_prime_s", "group"])?;
            for &(t, tp) in &delivered {
                w.write_record([
                    secs(t - ctx.origin).to_string(),
                    secs(tp - ctx.origin).to_string(),
                    ctx.group(t).to_string(),
                ])?;
            }
        }
        _ => unreachable!("phasor figures rejected above"),
    }
    w.flush()?;
    Ok(())
}

/// Read a `t_us,v,phi,f,rho` series as written by the estimator.
pub fn read_phasors<R: Read>(input: R) -> Result<Vec<Synchrophasor>, HarnessError> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let bad = || HarnessError::Usage(format!("phasor row {}: expected t_us,v,phi,f,rho", i + 1));
        if row.len() != 5 {
            return Err(bad());
        }
        let num = |k: usize| row[k].trim().parse::<f64>().map_err(|_| bad());
        out.push(Synchrophasor {
            timestamp: row[0].trim().parse().map_err(|_| bad())?,
            magnitude: num(1)?,
            phase: num(2)?,
            frequency: num(3)?,
            rocof: num(4)?,
        });
    }
    Ok(out)
}
