//! Comma-separated metrics log with a fixed header per run.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::config::Algorithm;
use crate::error::{HarnessError, Result};

/// Per-agent training indicators, in column order.
pub const AGENT_KEYS: [&str; 4] = ["policy_loss", "dist_entropy", "actor_grad_norm", "imp_weights_mean"];
/// Run-wide indicators, in column order (after the per-agent block).
pub const SHARED_KEYS: [&str; 6] = [
    "value_loss",
    "critic_grad_norm",
    "average_step_rewards",
    "train_episode_reward",
    "eval_average_episode_rewards",
    "eval_max_episode_rewards",
];

/// Column names of a run; cells not produced by a logging event are written as NaN.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricsSchema {
    columns: Vec<String>,
}

impl MetricsSchema {
    /// `agents` are the environment ids of the learning aircraft.
    pub fn new(algorithm: Algorithm, agents: &[usize]) -> Self {
        let mut columns = vec!["timestep".to_string()];
        for &k in agents {
            for key in AGENT_KEYS {
                if algorithm == Algorithm::Hasac && key == "imp_weights_mean" {
                    continue;
                }
                columns.push(format!("{key}/agent{k}"));
            }
        }
        columns.extend(SHARED_KEYS.iter().map(|s| s.to_string()));
        if algorithm == Algorithm::Hasac {
            columns.push("alpha".into());
        }
        Self { columns }
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    /// Position of a column among the value cells (the timestep is not counted).
    pub fn index(&self, key: &str) -> Option<usize> {
        self.columns.iter().skip(1).position(|c| c == key)
    }

    /// A row with every value cell unset.
    pub fn empty_row(&self, timestep: u64) -> MetricsRow {
        MetricsRow { timestep, values: vec![f64::NAN; self.columns.len() - 1] }
    }

    fn header(&self) -> String {
        self.columns.join(",")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub timestep: u64,
    pub values: Vec<f64>,
}

impl MetricsRow {
    pub fn set(&mut self, schema: &MetricsSchema, key: &str, value: f64) -> Result<()> {
        let i = schema.index(key).ok_or_else(|| HarnessError::Runtime(format!("metrics key '{key}' not in schema")))?;
        self.values[i] = value;
        Ok(())
    }

    pub fn get(&self, schema: &MetricsSchema, key: &str) -> Option<f64> {
        schema.index(key).map(|i| self.values[i])
    }
}

/// Lossless rendering: 17 significant digits.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub struct MetricsWriter {
    schema: MetricsSchema,
    file: File,
    rows: usize,
}

impl MetricsWriter {
    /// Starts a new file (truncating any existing one) and writes the header.
    pub fn create(path: &Path, schema: MetricsSchema) -> Result<Self> {
        let mut file = File::create(path)?;
        writeln!(file, "{}", schema.header())?;
        Ok(Self { schema, file, rows: 0 })
    }

    /// Keeps only rows logged at or before `timestep`, then continues the file.
    pub fn resume(path: &Path, schema: MetricsSchema, timestep: u64) -> Result<Self> {
        let (columns, rows) = read_metrics(path)?;
        if columns != schema.columns {
            return Err(HarnessError::Runtime(format!("metrics schema drift in {}", path.display())));
        }
        let mut w = Self::create(path, schema)?;
        for row in rows.iter().filter(|r| r.timestep <= timestep) {
            w.write(row)?;
        }
        Ok(w)
    }

    pub fn schema(&self) -> &MetricsSchema {
        &self.schema
    }

    pub fn rows_written(&self) -> usize {
        self.rows
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        if row.values.len() + 1 != self.schema.columns.len() {
            return Err(HarnessError::Runtime(format!(
                "metrics row has {} cells, schema has {}",
                row.values.len() + 1,
                self.schema.columns.len()
            )));
        }
        let mut line = row.timestep.to_string();
        for &v in &row.values {
            line.push(',');
            line.push_str(&format_real(v));
        }
        writeln!(self.file, "{line}")?;
        self.file.flush()?;
        self.rows += 1;
        Ok(())
    }
}

/// Reads a metrics file back into its header and rows.
pub fn read_metrics(path: &Path) -> Result<(Vec<String>, Vec<MetricsRow>)> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header: Vec<String> = match lines.next() {
        Some(l) => l?.split(',').map(str::to_string).collect(),
        None => return Err(HarnessError::Runtime(format!("{} is empty", path.display()))),
    };
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(HarnessError::Runtime(format!("row {} has {} cells, header has {}", n + 1, cells.len(), header.len())));
        }
        let parse_err = |c: &str| HarnessError::Runtime(format!("row {}: cannot parse '{c}'", n + 1));
        let timestep = cells[0].parse().map_err(|_| parse_err(cells[0]))?;
        let values = cells[1..].iter().map(|c| c.parse::<f64>().map_err(|_| parse_err(c))).collect::<Result<_>>()?;
        rows.push(MetricsRow { timestep, values });
    }
    Ok((header, rows))
}
