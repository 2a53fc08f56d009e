//! Per-step CSV loss logs.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::TrainError;

pub struct CsvLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CsvLog {
    /// Creates `path` with `header`, or, when `resume_from` is set, keeps the
    /// rows with `step < resume_from` and appends after them.
    pub fn open(path: &Path, header: &[&str], resume_from: Option<usize>) -> Result<Self, TrainError> {
        let io = |e| TrainError::io(path, e);
        let mut kept = Vec::new();
        if let Some(limit) = resume_from.filter(|_| path.exists()) {
            let f = File::open(path).map_err(io)?;
            for line in BufReader::new(f).lines().skip(1) {
                let line = line.map_err(io)?;
                let step = line.split(',').next().and_then(|s| s.parse::<usize>().ok());
                if step.is_some_and(|s| s < limit) {
                    kept.push(line);
                }
            }
        }
        let f = OpenOptions::new().write(true).create(true).truncate(true).open(path).map_err(io)?;
        let mut out = BufWriter::new(f);
        writeln!(out, "{}", header.join(",")).map_err(io)?;
        for line in kept {
            writeln!(out, "{line}").map_err(io)?;
        }
        Ok(Self { path: path.to_path_buf(), out })
    }

    pub fn row(&mut self, step: usize, values: &[f64]) -> Result<(), TrainError> {
        let mut line = step.to_string();
        for v in values {
            line.push(',');
            line.push_str(&v.to_string());
        }
        writeln!(self.out, "{line}").map_err(|e| TrainError::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<(), TrainError> {
        self.out.flush().map_err(|e| TrainError::io(&self.path, e))
    }
}

/// Reads a log written by [`CsvLog`]: header and numeric rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), TrainError> {
    let text = std::fs::read_to_string(path).map_err(|e| TrainError::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default().split(',').map(str::to_string).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse::<f64>().map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))).collect())
        .collect::<Result<_, _>>()?;
    Ok((header, rows))
}
