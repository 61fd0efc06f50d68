//! Per-step trajectory logs and their CSV form.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::weights::SamplingDiagnostics;

/// First line of every log file.
pub const LOG_VERSION_LINE: &str = "# pic-log v1";

/// Diagnostic columns, in file order, after the cost columns.
pub const DIAGNOSTIC_COLUMNS: [&str; 9] = [
    "ess",
    "weight_entropy",
    "max_weight",
    "free_energy",
    "cost_mean",
    "cost_min",
    "cost_std",
    "num_samples",
    "temperature",
];

/// Wall-clock column; excluded from determinism comparisons.
pub const TIMING_COLUMN: &str = "plan_ms";

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub time: f64,
    /// State at `time`, before the control is applied.
    pub state: Vec<f64>,
    pub control: Vec<f64>,
    pub stage_cost: f64,
    /// Free-energy estimate of the planner at this step.
    pub cost_to_go: f64,
    pub diagnostics: Option<SamplingDiagnostics>,
    pub plan_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    state_dim: usize,
    control_dim: usize,
    rows: Vec<LogRow>,
}

impl TrajectoryLog {
    pub fn new(state_dim: usize, control_dim: usize) -> Self {
        TrajectoryLog {
            state_dim,
            control_dim,
            rows: Vec::new(),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn rows(&self) -> &[LogRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Appends a row; time must increase strictly and shapes must match.
    pub fn push(&mut self, row: LogRow) -> Result<()> {
        if row.state.len() != self.state_dim || row.control.len() != self.control_dim {
            return Err(Error::MalformedLog(format!(
                "row {} has state {} / control {}, log expects {} / {}",
                row.step,
                row.state.len(),
                row.control.len(),
                self.state_dim,
                self.control_dim
            )));
        }
        if let Some(last) = self.rows.last() {
            if !(row.time > last.time) {
                return Err(Error::MalformedLog(format!(
                    "time {} does not increase past {}",
                    row.time, last.time
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["step".to_string(), "time".to_string()];
        h.extend((0..self.state_dim).map(|i| format!("x{i}")));
        h.extend((0..self.control_dim).map(|i| format!("u{i}")));
        h.push("stage_cost".into());
        h.push("cost_to_go".into());
        h.extend(DIAGNOSTIC_COLUMNS.iter().map(|s| s.to_string()));
        h.push(TIMING_COLUMN.into());
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut out = out;
        writeln!(out, "{LOG_VERSION_LINE}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        for r in &self.rows {
            let mut rec = vec![r.step.to_string(), fmt(r.time)];
            rec.extend(r.state.iter().map(|v| fmt(*v)));
            rec.extend(r.control.iter().map(|v| fmt(*v)));
            rec.push(fmt(r.stage_cost));
            rec.push(fmt(r.cost_to_go));
            match &r.diagnostics {
                Some(d) => {
                    for v in [
                        d.ess,
                        d.weight_entropy,
                        d.max_weight,
                        d.free_energy,
                        d.cost_mean,
                        d.cost_min,
                        d.cost_std,
                    ] {
                        rec.push(fmt(v));
                    }
                    rec.push(d.num_samples.to_string());
                    rec.push(fmt(d.temperature));
                }
                None => rec.extend(std::iter::repeat_n(String::new(), DIAGNOSTIC_COLUMNS.len())),
            }
            rec.push(fmt(r.plan_ms));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::MalformedLog(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
        if first.trim_end() != LOG_VERSION_LINE {
            return Err(Error::MalformedLog(format!(
                "expected version line '{LOG_VERSION_LINE}', found '{}'",
                first.trim_end()
            )));
        }
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(rest.as_bytes());
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| Error::MalformedLog(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let count = |prefix: char| {
            header
                .iter()
                .filter(|h| h.starts_with(prefix) && h[1..].parse::<usize>().is_ok())
                .count()
        };
        let (n, m) = (count('x'), count('u'));
        let log = TrajectoryLog::new(n, m);
        if header != log.header() {
            return Err(Error::MalformedLog(format!(
                "unexpected columns: {}",
                header.join(",")
            )));
        }
        let mut log = log;
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::MalformedLog(e.to_string()))?;
            let field = |j: usize| -> Result<f64> {
                let s = rec.get(j).unwrap_or("");
                if s.is_empty() {
                    return Ok(f64::NAN);
                }
                s.parse::<f64>().map_err(|_| {
                    Error::MalformedLog(format!("row {}: column '{}' = '{s}'", line + 1, header[j]))
                })
            };
            let step = rec
                .get(0)
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| Error::MalformedLog(format!("row {}: bad step", line + 1)))?;
            let time = field(1)?;
            let state = (0..n).map(|i| field(2 + i)).collect::<Result<Vec<_>>>()?;
            let control = (0..m).map(|i| field(2 + n + i)).collect::<Result<Vec<_>>>()?;
            let base = 2 + n + m;
            let stage_cost = field(base)?;
            let cost_to_go = field(base + 1)?;
            let d: Vec<f64> = (0..DIAGNOSTIC_COLUMNS.len())
                .map(|j| field(base + 2 + j))
                .collect::<Result<_>>()?;
            let diagnostics = if rec.get(base + 2).is_some_and(|s| !s.is_empty()) {
                Some(SamplingDiagnostics {
                    ess: d[0],
                    weight_entropy: d[1],
                    max_weight: d[2],
                    free_energy: d[3],
                    cost_mean: d[4],
                    cost_min: d[5],
                    cost_std: d[6],
                    num_samples: d[7] as usize,
                    temperature: d[8],
                })
            } else {
                None
            };
            let plan_ms = field(base + 2 + DIAGNOSTIC_COLUMNS.len())?;
            log.push(LogRow {
                step,
                time,
                state,
                control,
                stage_cost,
                cost_to_go,
                diagnostics,
                plan_ms,
            })?;
        }
        Ok(log)
    }
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

/// Drops the timing column from a CSV log text.
pub fn strip_timing(csv_text: &str) -> String {
    csv_text
        .lines()
        .map(|l| {
            if l.starts_with('#') {
                l.to_string()
            } else {
                match l.rfind(',') {
                    Some(p) => l[..p].to_string(),
                    None => l.to_string(),
                }
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(ess: f64) -> SamplingDiagnostics {
        SamplingDiagnostics {
            num_samples: 4,
            temperature: 1.0,
            ess,
            weight_entropy: 0.5,
            max_weight: 0.4,
            free_energy: 2.25,
            cost_mean: 3.0,
            cost_min: 2.0,
            cost_std: 0.1,
        }
    }

    fn sample_log() -> TrajectoryLog {
        let mut log = TrajectoryLog::new(2, 1);
        for j in 0..3 {
            log.push(LogRow {
                step: j,
                time: j as f64 * 0.1,
                state: vec![j as f64, -0.5],
                control: vec![0.25],
                stage_cost: 1.0 / 3.0,
                cost_to_go: 2.25,
                diagnostics: if j == 1 { None } else { Some(diag(3.5)) },
                plan_ms: 1.5,
            })
            .unwrap();
        }
        log
    }

    #[test]
    fn csv_round_trip() {
        let log = sample_log();
        let text = log.to_csv_string().unwrap();
        assert!(text.starts_with(LOG_VERSION_LINE));
        let back = TrajectoryLog::parse(&text).unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn header_layout() {
        let h = sample_log().header();
        assert_eq!(&h[..5], &["step", "time", "x0", "x1", "u0"]);
        assert_eq!(h.last().unwrap(), TIMING_COLUMN);
        assert_eq!(h.len(), 2 + 2 + 1 + 2 + 9 + 1);
    }

    #[test]
    fn time_must_increase() {
        let mut log = sample_log();
        let mut row = log.rows()[2].clone();
        row.step = 3;
        assert!(matches!(log.push(row), Err(Error::MalformedLog(_))));
    }

    #[test]
    fn rejects_missing_version() {
        let text = sample_log().to_csv_string().unwrap();
        let body = text.split_once('\n').unwrap().1;
        assert!(matches!(TrajectoryLog::parse(body), Err(Error::MalformedLog(_))));
    }

    #[test]
    fn rejects_garbage_cell() {
        let text = sample_log().to_csv_string().unwrap().replacen("0.25", "abc", 1);
        assert!(matches!(TrajectoryLog::parse(&text), Err(Error::MalformedLog(_))));
    }

    #[test]
    fn strip_timing_removes_last_column() {
        let text = sample_log().to_csv_string().unwrap();
        let stripped = strip_timing(&text);
        assert!(!stripped.contains(TIMING_COLUMN));
        assert!(stripped.lines().nth(1).unwrap().ends_with(",temperature"));
    }
}
