//! Comparison reports over completed run directories: optimizer rows, task
//! columns, the best cell per task starred and every other cell annotated
//! with its gap in percentage points.

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::runner::{CONFIG_FILE, METRICS_FILE, STATUS_FILE};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq)]
pub enum CellStatus {
    Accuracy(f64),
    Diverged,
    Failed(String),
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub task: String,
    pub optimizer: String,
    pub status: CellStatus,
}

/// Read one run directory; unreadable runs become Failed cells rather than
/// errors so one corrupt run does not sink the report.
pub fn summarize_run(dir: &Path) -> RunSummary {
    let fail = |reason: String| RunSummary {
        dir: dir.to_path_buf(),
        task: dir.display().to_string(),
        optimizer: "?".to_string(),
        status: CellStatus::Failed(reason),
    };
    let config_text = match std::fs::read_to_string(dir.join(CONFIG_FILE)) {
        Ok(t) => t,
        Err(e) => return fail(format!("missing config: {e}")),
    };
    let config = match ExperimentConfig::from_toml_str(&config_text) {
        Ok(c) => c,
        Err(e) => return fail(format!("bad config: {e}")),
    };
    let task = config.task_label();
    let optimizer = config.optimizer_label();
    let status_line = std::fs::read_to_string(dir.join(STATUS_FILE)).unwrap_or_default();
    if status_line.starts_with("diverged") {
        return RunSummary {
            dir: dir.to_path_buf(),
            task,
            optimizer,
            status: CellStatus::Diverged,
        };
    }
    let status = match final_test_acc(&dir.join(METRICS_FILE)) {
        Ok(Some(acc)) => CellStatus::Accuracy(acc),
        Ok(None) => CellStatus::Failed("no accuracy rows".to_string()),
        Err(e) => CellStatus::Failed(e.to_string()),
    };
    RunSummary {
        dir: dir.to_path_buf(),
        task,
        optimizer,
        status,
    }
}

fn final_test_acc(path: &Path) -> Result<Option<f64>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    let acc_col = headers
        .iter()
        .position(|h| h == "test_acc")
        .ok_or_else(|| Error::format(path.display().to_string(), "no test_acc column"))?;
    let mut last = None;
    for record in reader.records() {
        let record =
            record.map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
        let field = record.get(acc_col).unwrap_or("");
        if !field.is_empty() {
            last = Some(field.parse::<f64>().map_err(|e| {
                Error::format(path.display().to_string(), e.to_string())
            })?);
        }
    }
    Ok(last)
}

#[derive(Debug)]
pub struct Report {
    pub tasks: Vec<String>,
    pub optimizers: Vec<String>,
    /// cells[opt][task]
    pub cells: Vec<Vec<Option<CellStatus>>>,
    /// best accuracy per task, where any accuracy exists
    pub best: Vec<Option<f64>>,
}

pub fn build_report(dirs: &[PathBuf]) -> Result<Report> {
    if dirs.is_empty() {
        return Err(Error::config("report needs at least one run directory"));
    }
    let summaries: Vec<RunSummary> = dirs.iter().map(|d| summarize_run(d)).collect();
    let mut tasks: Vec<String> = Vec::new();
    let mut optimizers: Vec<String> = Vec::new();
    for s in &summaries {
        if !tasks.contains(&s.task) {
            tasks.push(s.task.clone());
        }
        if !optimizers.contains(&s.optimizer) {
            optimizers.push(s.optimizer.clone());
        }
    }
    let mut cells: Vec<Vec<Option<CellStatus>>> = vec![vec![None; tasks.len()]; optimizers.len()];
    for s in &summaries {
        let ti = tasks.iter().position(|t| *t == s.task).expect("inserted");
        let oi = optimizers
            .iter()
            .position(|o| *o == s.optimizer)
            .expect("inserted");
        cells[oi][ti] = Some(s.status.clone());
    }
    let best = (0..tasks.len())
        .map(|ti| {
            cells
                .iter()
                .filter_map(|row| match &row[ti] {
                    Some(CellStatus::Accuracy(a)) => Some(*a),
                    _ => None,
                })
                .fold(None, |acc: Option<f64>, a| {
                    Some(acc.map_or(a, |b| b.max(a)))
                })
        })
        .collect();
    Ok(Report {
        tasks,
        optimizers,
        cells,
        best,
    })
}

impl Report {
    fn cell_text(&self, oi: usize, ti: usize) -> String {
        match &self.cells[oi][ti] {
            None => "-".to_string(),
            Some(CellStatus::Diverged) => "DIV".to_string(),
            Some(CellStatus::Failed(_)) => "FAILED".to_string(),
            Some(CellStatus::Accuracy(a)) => {
                let best = self.best[ti].unwrap_or(*a);
                let gap = (best - a) * 100.0;
                if gap.abs() < 1e-12 {
                    format!("*{:.2} (0.0)", a * 100.0)
                } else {
                    format!("{:.2} (-{:.1})", a * 100.0, gap)
                }
            }
        }
    }

    pub fn to_text(&self) -> String {
        let mut widths = vec![0usize; self.tasks.len() + 1];
        widths[0] = self
            .optimizers
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(9)
            .max("optimizer".len());
        let mut grid: Vec<Vec<String>> = Vec::new();
        for (oi, name) in self.optimizers.iter().enumerate() {
            let mut row = vec![name.clone()];
            for ti in 0..self.tasks.len() {
                row.push(self.cell_text(oi, ti));
            }
            grid.push(row);
        }
        for (ti, task) in self.tasks.iter().enumerate() {
            widths[ti + 1] = task.len();
            for row in &grid {
                widths[ti + 1] = widths[ti + 1].max(row[ti + 1].len());
            }
        }
        let mut out = String::new();
        out.push_str(&format!("{:<w$}", "optimizer", w = widths[0]));
        for (ti, task) in self.tasks.iter().enumerate() {
            out.push_str(&format!("  {:>w$}", task, w = widths[ti + 1]));
        }
        out.push('\n');
        for row in &grid {
            out.push_str(&format!("{:<w$}", row[0], w = widths[0]));
            for (ti, cell) in row.iter().skip(1).enumerate() {
                out.push_str(&format!("  {:>w$}", cell, w = widths[ti + 1]));
            }
            out.push('\n');
        }
        out.push_str("\n* best per task; (-x.x) gap from best in percentage points\n");
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("optimizer,task,test_acc,gap_points,status\n");
        for (oi, optimizer) in self.optimizers.iter().enumerate() {
            for (ti, task) in self.tasks.iter().enumerate() {
                let (acc, gap, status) = match &self.cells[oi][ti] {
                    None => (String::new(), String::new(), "absent".to_string()),
                    Some(CellStatus::Diverged) => {
                        (String::new(), String::new(), "DIV".to_string())
                    }
                    Some(CellStatus::Failed(r)) => {
                        (String::new(), String::new(), format!("failed: {r}"))
                    }
                    Some(CellStatus::Accuracy(a)) => {
                        let best = self.best[ti].unwrap_or(*a);
                        (
                            format!("{a}"),
                            format!("{}", (best - a) * 100.0),
                            "ok".to_string(),
                        )
                    }
                };
                out.push_str(&format!("{optimizer},{task},{acc},{gap},{status}\n"));
            }
        }
        out
    }
}
