use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HEADER: &str = "epoch,batch,mean_return,win_rate,grad_norm,sigma,episode_len_mean,wall_ms";

/// Training rows carry a batch index; evaluation rows leave it empty and
/// report the greedy win rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub batch: Option<usize>,
    pub mean_return: f64,
    pub win_rate: Option<f64>,
    pub grad_norm: Option<f64>,
    pub sigma: Option<f64>,
    pub episode_len_mean: f64,
    pub wall_ms: u64,
}

impl MetricsRow {
    pub fn is_eval(&self) -> bool {
        self.batch.is_none()
    }
}

pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    /// Creates the file with its header, or appends to an existing one.
    pub fn open(path: &Path) -> Result<Self> {
        let exists = path.exists();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if !exists {
            inner.write_record(HEADER.split(','))?;
            inner.flush().map_err(|e| Error::io(path, e))?;
        }
        Ok(MetricsWriter { inner })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.serialize(row)?;
        self.inner.flush().map_err(|e| Error::io("metrics", e))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != HEADER {
        return Err(Error::contract(format!("{}: unexpected metrics header", path.display())));
    }
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Rewrites `path` keeping only rows of epochs before `epoch`.
pub fn truncate_metrics(path: &Path, epoch: usize) -> Result<()> {
    let rows = read_metrics(path)?;
    std::fs::remove_file(path).map_err(|e| Error::io(path, e))?;
    let mut w = MetricsWriter::open(path)?;
    for row in rows.iter().filter(|r| r.epoch < epoch) {
        w.append(row)?;
    }
    Ok(())
}

/// One row per (run, epoch) of a long-format curve table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub run: String,
    pub epoch: usize,
    /// Mean of the epoch's training-batch returns.
    pub mean_return: f64,
    pub train_win_rate: Option<f64>,
    /// Greedy evaluation at the end of the epoch.
    pub eval_win_rate: Option<f64>,
    pub grad_norm: Option<f64>,
}

pub fn curves(run: &str, rows: &[MetricsRow]) -> Vec<CurveRow> {
    #[derive(Default)]
    struct Acc {
        n: usize,
        ret: f64,
        win: f64,
        grad: f64,
        eval: Option<f64>,
    }
    let mut by_epoch: BTreeMap<usize, Acc> = BTreeMap::new();
    for r in rows {
        let a = by_epoch.entry(r.epoch).or_default();
        if r.is_eval() {
            a.eval = r.win_rate;
        } else {
            a.n += 1;
            a.ret += r.mean_return;
            a.win += r.win_rate.unwrap_or(0.0);
            a.grad += r.grad_norm.unwrap_or(0.0);
        }
    }
    by_epoch
        .into_iter()
        .map(|(epoch, a)| {
            let n = a.n as f64;
            CurveRow {
                run: run.to_string(),
                epoch,
                mean_return: if a.n > 0 { a.ret / n } else { 0.0 },
                train_win_rate: (a.n > 0).then(|| a.win / n),
                eval_win_rate: a.eval,
                grad_norm: (a.n > 0).then(|| a.grad / n),
            }
        })
        .collect()
}

/// Merges metrics files into a curve table; each run is named after the
/// directory holding its metrics file.
pub fn export_curves(paths: &[&Path], out: &mut dyn std::io::Write) -> Result<usize> {
    let mut w = csv::Writer::from_writer(out);
    let mut n = 0;
    for path in paths {
        let run = path
            .parent()
            .and_then(Path::file_name)
            .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        for row in curves(&run, &read_metrics(path)?) {
            w.serialize(&row)?;
            n += 1;
        }
    }
    w.flush().map_err(|e| Error::io("curves", e))?;
    Ok(n)
}
