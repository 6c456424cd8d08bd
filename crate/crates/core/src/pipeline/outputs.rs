//! Run-directory layout.
//!
//! ```text
//! <out>/metadata.json                 command, config, creation time
//! <out>/<mode>/report.json            RunReport (mode: single, dep_only, joint)
//! <out>/<mode>/seed_<s>.json          RunResult
//! <out>/<mode>/seed_<s>.log.jsonl     per-epoch trace
//! <out>/<mode>/seed_<s>.sgck          selected parameters
//! <out>/probe/report.json             ProbeReport
//! <out>/transfer.{txt,csv,json,tex}   transfer table
//! <out>/blockwise.{txt,csv,json,tex}  block-wise grid
//! ```
//!
//! Everything except `metadata.json` is a pure function of the config and
//! the corpora.

use std::path::Path;

use serde::Serialize;

use super::{transfer_table, ExperimentConfig, Mode, ModeOutcome, PipelineError};
use crate::evalreport::{BlockwiseTable, LatexOptions, ProbeReport, TransferTable};
use crate::model::write_checkpoint;
use crate::trainer::{write_run_log, RunReport};

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>, PipelineError> {
    match std::fs::read_to_string(path) {
        Ok(text) => serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| PipelineError::Parse { path: path.to_path_buf(), message: e.to_string() }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

pub fn write_mode(out: &Path, outcome: &ModeOutcome) -> Result<(), PipelineError> {
    let dir = out.join(outcome.mode.as_str());
    std::fs::create_dir_all(&dir)?;
    write_json(&outcome.report, dir.join("report.json"))?;
    for (run, (meta, store)) in outcome.report.runs.iter().zip(&outcome.checkpoints) {
        let stem = format!("seed_{}", run.seed);
        write_json(run, dir.join(format!("{stem}.json")))?;
        write_run_log(run, dir.join(format!("{stem}.log.jsonl")))?;
        write_checkpoint(dir.join(format!("{stem}.sgck")), meta, store)?;
    }
    Ok(())
}

pub fn write_probe(out: &Path, report: &ProbeReport) -> Result<(), PipelineError> {
    let dir = out.join("probe");
    std::fs::create_dir_all(&dir)?;
    write_json(report, dir.join("report.json"))
}

/// Records how a run directory was produced. The timestamp lives only here.
pub fn write_metadata(out: &Path, command: &str, cfg: &ExperimentConfig) -> Result<(), PipelineError> {
    std::fs::create_dir_all(out)?;
    let created = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let meta = serde_json::json!({
        "command": command,
        "created_unix": created,
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
    });
    write_json(&meta, out.join("metadata.json"))
}

pub fn load_mode_report(run_dir: &Path, mode: Mode) -> Result<Option<RunReport>, PipelineError> {
    read_json(&run_dir.join(mode.as_str()).join("report.json"))
}

pub fn load_probe_report(run_dir: &Path) -> Result<Option<ProbeReport>, PipelineError> {
    read_json(&run_dir.join("probe").join("report.json"))
}

/// Tables assembled from whatever results a run directory holds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportSet {
    pub transfer: Option<TransferTable>,
    pub blockwise: Option<BlockwiseTable>,
}

impl ReportSet {
    pub fn is_empty(&self) -> bool {
        self.transfer.is_none() && self.blockwise.is_none()
    }

    pub fn check_invariants(&self) -> Vec<String> {
        let mut v = Vec::new();
        if let Some(t) = &self.transfer {
            v.extend(t.check_invariants().into_iter().map(|m| format!("transfer: {m}")));
        }
        if let Some(b) = &self.blockwise {
            v.extend(b.check_invariants().into_iter().map(|m| format!("blockwise: {m}")));
        }
        v
    }

    /// Plain-text rendering of every table, for the terminal.
    pub fn summary(&self) -> String {
        let mut parts = Vec::new();
        if let Some(b) = &self.blockwise {
            parts.push(b.to_text());
        }
        if let Some(t) = &self.transfer {
            parts.push(t.to_text());
        }
        parts.join("\n")
    }
}

pub fn build_reports(run_dir: &Path) -> Result<ReportSet, PipelineError> {
    let single = load_mode_report(run_dir, Mode::Single)?;
    let dep = load_mode_report(run_dir, Mode::DepOnly)?;
    let joint = load_mode_report(run_dir, Mode::Joint)?;
    let transfer = (single.is_some() || dep.is_some() || joint.is_some())
        .then(|| transfer_table(single.as_ref(), dep.as_ref(), joint.as_ref()));
    let blockwise = load_probe_report(run_dir)?.map(|p| p.table());
    Ok(ReportSet { transfer, blockwise })
}

/// Writes every table in the set and returns the invariant violations.
pub fn write_reports(run_dir: &Path, set: &ReportSet) -> Result<Vec<String>, PipelineError> {
    let latex = LatexOptions { bold_best: true };
    if let Some(t) = &set.transfer {
        std::fs::write(run_dir.join("transfer.txt"), t.to_text())?;
        std::fs::write(run_dir.join("transfer.csv"), t.to_csv())?;
        std::fs::write(run_dir.join("transfer.json"), t.to_json())?;
        std::fs::write(run_dir.join("transfer.tex"), t.to_latex(latex))?;
    }
    if let Some(b) = &set.blockwise {
        std::fs::write(run_dir.join("blockwise.txt"), b.to_text())?;
        std::fs::write(run_dir.join("blockwise.csv"), b.to_csv())?;
        std::fs::write(run_dir.join("blockwise.json"), b.to_json())?;
        std::fs::write(run_dir.join("blockwise.tex"), b.to_latex(latex))?;
    }
    Ok(set.check_invariants())
}
