//! Integer-microsecond timekeeping shared by every stage.

/// Microseconds since the UNIX epoch (or a relative span in microseconds).
pub type Micros = i64;

pub const MICROS_PER_SEC: Micros = 1_000_000;

pub fn from_secs_f64(secs: f64) -> Micros {
    (secs * MICROS_PER_SEC as f64).round() as Micros
}

pub fn from_millis_f64(ms: f64) -> Micros {
    (ms * 1_000.0).round() as Micros
}

pub fn to_millis(us: Micros) -> f64 {
    us as f64 / 1_000.0
}

/// Reporting period `round(1e6 / rate)` in microseconds.
pub fn period_for_rate(rate: f64) -> Micros {
    (MICROS_PER_SEC as f64 / rate).round() as Micros
}

/// Current wall-clock time in microseconds since the UNIX epoch.
pub fn now_micros() -> Micros {
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .unwrap_or_default();
    now.as_micros() as Micros
}
