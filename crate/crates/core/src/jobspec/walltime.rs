use std::fmt;

use serde::{Deserialize, Serialize};

use super::ParseError;

/// A wall-clock limit in whole seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Walltime(pub u64);

impl Walltime {
    pub const fn from_secs(secs: u64) -> Self {
        Walltime(secs)
    }

    pub const fn secs(self) -> u64 {
        self.0
    }

    pub const fn millis(self) -> u64 {
        self.0.saturating_mul(1000)
    }
}

impl fmt::Display for Walltime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_hms(self.0))
    }
}

/// Parses `D-HH:MM:SS`, `HH:MM:SS`, `MM:SS` or a bare number of minutes.
pub fn parse_walltime(text: &str) -> Result<Walltime, ParseError> {
    let bad = || ParseError::BadTimeFormat(text.to_string());
    let field = |s: &str| -> Result<u64, ParseError> {
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        s.parse::<u64>().map_err(|_| bad())
    };
    let below = |v: u64, limit: u64| if v < limit { Ok(v) } else { Err(bad()) };

    let trimmed = text.trim();
    let (days, clock) = match trimmed.split_once('-') {
        Some((d, rest)) => (Some(field(d)?), rest),
        None => (None, trimmed),
    };
    let parts: Vec<&str> = clock.split(':').collect();
    let (days, hours, minutes, seconds) = match (days, parts.as_slice()) {
        (Some(d), [h, m, s]) => (d, below(field(h)?, 24)?, below(field(m)?, 60)?, below(field(s)?, 60)?),
        (None, [h, m, s]) => (0, field(h)?, below(field(m)?, 60)?, below(field(s)?, 60)?),
        (None, [m, s]) => (0, 0, below(field(m)?, 60)?, below(field(s)?, 60)?),
        (None, [m]) => (0, 0, field(m)?, 0),
        _ => return Err(bad()),
    };
    days.checked_mul(86_400)
        .and_then(|v| v.checked_add(hours.checked_mul(3600)?))
        .and_then(|v| v.checked_add(minutes.checked_mul(60)?))
        .and_then(|v| v.checked_add(seconds))
        .map(Walltime)
        .ok_or_else(bad)
}

/// Renders seconds as `H:MM:SS`, the notation used in job scripts.
pub fn format_hms(secs: u64) -> String {
    format!("{}:{:02}:{:02}", secs / 3600, (secs / 60) % 60, secs % 60)
}
