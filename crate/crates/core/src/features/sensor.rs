use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HohsmmError, Result};

pub const NUM_SETTINGS: usize = 3;
pub const NUM_SENSORS: usize = 21;
/// Feature columns per row: settings followed by sensors.
pub const NUM_FEATURES: usize = NUM_SETTINGS + NUM_SENSORS;

/// One engine's cycles, sorted ascending, with `NUM_FEATURES` values each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub unit: u32,
    pub cycles: Vec<u32>,
    pub rows: Vec<Vec<f64>>,
}

impl UnitRecord {
    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    /// The first `len` cycles.
    pub fn prefix(&self, len: usize) -> UnitRecord {
        UnitRecord {
            unit: self.unit,
            cycles: self.cycles[..len].to_vec(),
            rows: self.rows[..len].to_vec(),
        }
    }
}

/// Condition-monitoring table: `unit cycle setting*3 sensor*21` per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorTable {
    pub units: Vec<UnitRecord>,
}

fn parse_field(field: &str, path: &Path, line: usize, what: &str) -> Result<f64> {
    field.parse::<f64>().map_err(|_| HohsmmError::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("non-numeric {what} field {field:?}"),
    })
}

fn parse_index(field: &str, path: &Path, line: usize, what: &str) -> Result<u32> {
    let v = parse_field(field, path, line, what)?;
    if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
        return Err(HohsmmError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{what} must be a non-negative integer, got {field:?}"),
        });
    }
    Ok(v as u32)
}

impl SensorTable {
    pub fn num_rows(&self) -> usize {
        self.units.iter().map(UnitRecord::len).sum()
    }

    /// Parse whitespace- or comma-delimited text. Rows are grouped by unit
    /// and sorted by cycle; a repeated cycle within a unit is an error.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut units: BTreeMap<u32, Vec<(u32, Vec<f64>, usize)>> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let fields: Vec<&str> = raw
                .split(|ch: char| ch == ',' || ch.is_whitespace())
                .filter(|f| !f.is_empty())
                .collect();
            if fields.is_empty() {
                continue;
            }
            if fields.len() != NUM_FEATURES + 2 {
                return Err(HohsmmError::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("expected {} columns, found {}", NUM_FEATURES + 2, fields.len()),
                });
            }
            let unit = parse_index(fields[0], path, line, "unit")?;
            let cycle = parse_index(fields[1], path, line, "cycle")?;
            let values = fields[2..]
                .iter()
                .map(|f| {
                    let v = parse_field(f, path, line, "measurement")?;
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(HohsmmError::Parse {
                            path: path.to_path_buf(),
                            line,
                            message: format!("non-finite value {f:?}"),
                        })
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            units.entry(unit).or_default().push((cycle, values, line));
        }
        if units.is_empty() {
            return Err(HohsmmError::Empty(format!("{} contains no rows", path.display())));
        }
        let units = units
            .into_iter()
            .map(|(unit, mut rows)| {
                rows.sort_by_key(|r| r.0);
                if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
                    return Err(HohsmmError::Parse {
                        path: path.to_path_buf(),
                        line: w[1].2.max(w[0].2),
                        message: format!("unit {unit} repeats cycle {}", w[0].0),
                    });
                }
                Ok(UnitRecord {
                    unit,
                    cycles: rows.iter().map(|r| r.0).collect(),
                    rows: rows.into_iter().map(|r| r.1).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SensorTable { units })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HohsmmError::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Space-separated text with four decimals, one row per cycle.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for u in &self.units {
            for (cycle, row) in u.cycles.iter().zip(&u.rows) {
                write!(out, "{} {}", u.unit, cycle).unwrap();
                for v in row {
                    write!(out, " {v:.4}").unwrap();
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Read a remaining-life file: one non-negative integer per line, in unit order.
pub fn load_rul_file(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| HohsmmError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let v = parse_field(l.trim(), path, i + 1, "remaining life")?;
            if v < 0.0 {
                return Err(HohsmmError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "remaining life must be non-negative".into(),
                });
            }
            Ok(v)
        })
        .collect()
}
