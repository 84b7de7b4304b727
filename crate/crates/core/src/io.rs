//! File formats: trajectory CSV, NDJSON traces and atomic writes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{HohsmmError, Result};
use crate::sampler::{ParameterDraw, TraceRecord};
use crate::segmentation::Trajectory;

/// Write `bytes` to a sibling temp file, then rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| HohsmmError::InvalidConfig(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        HohsmmError::io(path, e)
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| HohsmmError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HohsmmError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// CSV with header `unit,cycle,value` (or `value_1..value_d` for `d > 1`).
/// Cycles are 1-based positions.
pub fn trajectories_to_csv(trajectories: &[Trajectory]) -> Result<String> {
    let dim = trajectories.first().map_or(1, Trajectory::dim);
    if trajectories.iter().any(|t| t.dim() != dim) {
        return Err(HohsmmError::Schema("trajectories differ in dimension".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["unit".to_string(), "cycle".to_string()];
    if dim == 1 {
        header.push("value".into());
    } else {
        header.extend((1..=dim).map(|k| format!("value_{k}")));
    }
    w.write_record(&header)?;
    for t in trajectories {
        for i in 0..t.len() {
            let mut rec = vec![t.unit_id.clone(), (i + 1).to_string()];
            rec.extend(t.point(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| HohsmmError::Schema(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_trajectories(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    write_atomic(path, trajectories_to_csv(trajectories)?.as_bytes())
}

/// Inverse of [`trajectories_to_csv`]. Units keep their first-appearance
/// order; rows within a unit are sorted by cycle and cycles must be distinct.
pub fn parse_trajectories(text: &str, path: &Path) -> Result<Vec<Trajectory>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    if header.len() < 3 || &header[0] != "unit" || &header[1] != "cycle" {
        return Err(HohsmmError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "header must start with unit,cycle followed by value columns".into(),
        });
    }
    let dim = header.len() - 2;
    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, Vec<(u64, Vec<f64>, usize)>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| HohsmmError::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        let bad = |message: String| HohsmmError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if rec.len() != header.len() {
            return Err(bad(format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        let unit = rec[0].to_string();
        let cycle: u64 = rec[1].parse().map_err(|_| bad(format!("invalid cycle {:?}", &rec[1])))?;
        let values = (2..rec.len())
            .map(|k| {
                rec[k]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(format!("invalid value {:?}", &rec[k])))
            })
            .collect::<Result<Vec<_>>>()?;
        if !rows.contains_key(&unit) {
            order.push(unit.clone());
        }
        rows.entry(unit).or_default().push((cycle, values, line));
    }
    if order.is_empty() {
        return Err(HohsmmError::Empty(format!("{} has no trajectory rows", path.display())));
    }
    order
        .into_iter()
        .map(|unit| {
            let mut r = rows.remove(&unit).unwrap_or_default();
            r.sort_by_key(|x| x.0);
            if let Some(w) = r.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(HohsmmError::Parse {
                    path: path.to_path_buf(),
                    line: w[1].2.max(w[0].2),
                    message: format!("unit {unit} repeats cycle {}", w[0].0),
                });
            }
            Trajectory::new(unit, dim, r.into_iter().flat_map(|x| x.1).collect())
        })
        .collect()
}

pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let text = fs::read_to_string(path).map_err(|e| HohsmmError::io(path, e))?;
    parse_trajectories(&text, path)
}

pub fn trace_to_ndjson<'a>(records: impl IntoIterator<Item = TraceRecord> + 'a) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_trace(text: &str, path: &Path) -> Result<Vec<TraceRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| HohsmmError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Parameter draws stored in a trace file.
pub fn read_trace_draws(path: &Path) -> Result<Vec<ParameterDraw>> {
    let text = fs::read_to_string(path).map_err(|e| HohsmmError::io(path, e))?;
    Ok(parse_trace(&text, path)?
        .into_iter()
        .filter_map(|r| match r {
            TraceRecord::Draw(d) => Some(d.params),
            TraceRecord::Outer(_) => None,
        })
        .collect())
}
