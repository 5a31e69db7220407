//! Data-term weights per peak, found by grid search on a validation set.
//!
//! Entries are keyed by data term and peak. Lookups between two calibrated
//! peaks interpolate `log lambda` linearly in `log peak`; lookups outside the
//! calibrated range use the nearest entry.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LambdaKey {
    /// I-divergence on raw counts.
    Direct,
    /// Quadratic data term in the Anscombe domain.
    Quadratic,
    /// I-divergence data term in the Anscombe domain.
    IDivergence,
}

impl fmt::Display for LambdaKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LambdaKey::Direct => "direct",
            LambdaKey::Quadratic => "quadratic",
            LambdaKey::IDivergence => "idiv",
        })
    }
}

impl FromStr for LambdaKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(LambdaKey::Direct),
            "quadratic" => Ok(LambdaKey::Quadratic),
            "idiv" => Ok(LambdaKey::IDivergence),
            other => Err(Error::invalid(format!("unknown lambda key '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaEntry {
    pub key: LambdaKey,
    pub peak: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LambdaTable {
    /// Free-form provenance line (model, validation set, grid).
    pub provenance: String,
    entries: Vec<LambdaEntry>,
}

/// Calibration of the bundled desk-scale models; regenerate with
/// `pfoe calibrate`.
const BUILTIN: &str = include_str!("lambda_table.txt");

impl LambdaTable {
    pub fn new(provenance: impl Into<String>, mut entries: Vec<LambdaEntry>) -> Result<Self> {
        for e in &entries {
            if !(e.peak > 0.0 && e.peak.is_finite()) {
                return Err(Error::invalid(format!("table peak must be positive, got {}", e.peak)));
            }
            if !(e.lambda > 0.0 && e.lambda.is_finite()) {
                return Err(Error::invalid(format!("table lambda must be positive, got {}", e.lambda)));
            }
        }
        entries.sort_by(|a, b| a.key.cmp(&b.key).then(a.peak.total_cmp(&b.peak)));
        if entries.windows(2).any(|w| w[0].key == w[1].key && w[0].peak == w[1].peak) {
            return Err(Error::invalid("duplicate (key, peak) entry in lambda table"));
        }
        Ok(Self {
            provenance: provenance.into(),
            entries,
        })
    }

    pub fn builtin() -> Self {
        BUILTIN.parse().expect("bundled lambda table is well-formed")
    }

    pub fn entries(&self) -> &[LambdaEntry] {
        &self.entries
    }

    /// `None` when the table has no entry for `key`.
    pub fn lookup(&self, key: LambdaKey, peak: f64) -> Option<f64> {
        let rows: Vec<&LambdaEntry> = self.entries.iter().filter(|e| e.key == key).collect();
        let first = rows.first()?;
        let last = rows.last()?;
        if peak <= first.peak {
            return Some(first.lambda);
        }
        if peak >= last.peak {
            return Some(last.lambda);
        }
        let hi = rows.iter().position(|e| e.peak >= peak)?;
        let (a, b) = (rows[hi - 1], rows[hi]);
        if b.peak == peak {
            return Some(b.lambda);
        }
        let s = (peak.ln() - a.peak.ln()) / (b.peak.ln() - a.peak.ln());
        Some((a.lambda.ln() + s * (b.lambda.ln() - a.lambda.ln())).exp())
    }
}

impl fmt::Display for LambdaTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# key peak lambda")?;
        writeln!(f, "provenance {}", self.provenance)?;
        for e in &self.entries {
            writeln!(f, "{} {} {}", e.key, e.peak, e.lambda)?;
        }
        Ok(())
    }
}

impl FromStr for LambdaTable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut provenance = String::new();
        let mut entries = Vec::new();
        for (n, line) in s.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("provenance") {
                provenance = rest.trim().to_string();
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::invalid(format!("lambda table line {}: '{line}'", n + 1));
            if fields.len() != 3 {
                return Err(bad());
            }
            entries.push(LambdaEntry {
                key: fields[0].parse()?,
                peak: fields[1].parse().map_err(|_| bad())?,
                lambda: fields[2].parse().map_err(|_| bad())?,
            });
        }
        Self::new(provenance, entries)
    }
}
