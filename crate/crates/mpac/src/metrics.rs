//! Per-epoch CSV metrics.
//!
//! Columns: `epoch, env_steps, eval_mean, eval_min, eval_max`, then
//! `d_<kind>` and `lambda_<kind>` for each active preference in config
//! order, then `loss, policy_loss, entropy, value_loss`. Reals are written
//! as the shortest decimal that round-trips.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use mpac_core::harness::EpochReport;
use mpac_core::preferences::PreferenceKind;

pub fn header(kinds: &[PreferenceKind]) -> String {
    let mut cols: Vec<String> = ["epoch", "env_steps", "eval_mean", "eval_min", "eval_max"].map(String::from).into();
    for k in kinds {
        cols.push(format!("d_{}", k.name()));
        cols.push(format!("lambda_{}", k.name()));
    }
    cols.extend(["loss", "policy_loss", "entropy", "value_loss"].map(String::from));
    cols.join(",")
}

fn real(x: f64) -> String {
    format!("{x:?}")
}

pub fn row(r: &EpochReport) -> String {
    let mut cols =
        vec![r.epoch.to_string(), r.env_steps.to_string(), real(r.eval.mean), real(r.eval.min), real(r.eval.max)];
    for (d, l) in r.mean_d.iter().zip(&r.lambdas) {
        cols.push(real(*d));
        cols.push(real(*l));
    }
    cols.extend([r.loss, r.terms.policy, r.terms.entropy, r.terms.value].map(real));
    cols.join(",")
}

/// Append-only metrics file, flushed after every row.
pub struct MetricsWriter {
    file: File,
    columns: usize,
}

impl MetricsWriter {
    /// Start a fresh file at `path`.
    pub fn create(path: &Path, kinds: &[PreferenceKind]) -> io::Result<Self> {
        let mut file = File::create(path)?;
        let h = header(kinds);
        writeln!(file, "{h}")?;
        file.flush()?;
        Ok(MetricsWriter { file, columns: h.split(',').count() })
    }

    /// Reopen `path` keeping the header and the first `epochs` rows, as
    /// when resuming from a checkpoint taken after that many epochs.
    pub fn resume(path: &Path, kinds: &[PreferenceKind], epochs: u64) -> io::Result<Self> {
        let h = header(kinds);
        let kept: Vec<String> = {
            let reader = BufReader::new(File::open(path)?);
            let mut lines = reader.lines();
            match lines.next() {
                Some(Ok(first)) if first == h => {}
                _ => return Err(io::Error::new(io::ErrorKind::InvalidData, "metrics header does not match the run")),
            }
            lines.take(epochs as usize).collect::<io::Result<_>>()?
        };
        if kept.len() as u64 != epochs {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("metrics file holds {} rows, checkpoint is at epoch {epochs}", kept.len()),
            ));
        }
        let mut text = h.clone();
        text.push('\n');
        for line in kept {
            text.push_str(&line);
            text.push('\n');
        }
        fs::write(path, text)?;
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(MetricsWriter { file, columns: h.split(',').count() })
    }

    pub fn write(&mut self, report: &EpochReport) -> io::Result<()> {
        let line = row(report);
        debug_assert_eq!(line.split(',').count(), self.columns);
        writeln!(self.file, "{line}")?;
        self.file.flush()
    }
}
