//! Result tables: per-task scores and the gender breakdown.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::experiment::{ExperimentResult, FeatureSet, GenderMode, ModelKind};
use super::grouping::GroupingStrategy;
use super::metrics::MeanStd;
use crate::corpus::Task;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Tsv,
    Json,
    Md,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(ReportFormat::Tsv),
            "json" => Ok(ReportFormat::Json),
            "md" | "markdown" => Ok(ReportFormat::Md),
            other => Err(Error::BadConfig(format!("unknown report format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RowKey {
    pub model: ModelKind,
    pub strategy: GroupingStrategy,
    pub feature_set: FeatureSet,
}

impl RowKey {
    fn label(&self) -> String {
        format!("{} / {} / {}", self.model.label(), self.strategy.label(), self.feature_set.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub key: RowKey,
    pub cells: BTreeMap<Task, MeanStd>,
}

/// Model × strategy × feature set by task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTable {
    pub tasks: Vec<Task>,
    pub rows: Vec<TaskRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderRow {
    pub key: RowKey,
    pub task: Task,
    pub mode: GenderMode,
    pub all: MeanStd,
    pub male: Option<MeanStd>,
    pub female: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tasks: TaskTable,
    pub gender: Vec<GenderRow>,
}

/// Builds both tables. Gender-independent runs fill the task table; every
/// run contributes a gender row. A later result for the same cell replaces an
/// earlier one.
pub fn build_report(results: &[ExperimentResult]) -> Report {
    let mut rows: BTreeMap<RowKey, BTreeMap<Task, MeanStd>> = BTreeMap::new();
    let mut gender: BTreeMap<(RowKey, Task, GenderMode), GenderRow> = BTreeMap::new();
    for r in results {
        let c = &r.config;
        let key = RowKey {
            model: c.model,
            strategy: c.strategy,
            feature_set: c.feature_set,
        };
        if c.gender_mode == GenderMode::Independent {
            rows.entry(key).or_default().insert(c.target_task, r.summary);
        }
        gender.insert(
            (key, c.target_task, c.gender_mode),
            GenderRow {
                key,
                task: c.target_task,
                mode: c.gender_mode,
                all: r.summary,
                male: r.male,
                female: r.female,
            },
        );
    }
    let mut tasks: Vec<Task> = rows.values().flat_map(|m| m.keys().copied()).collect();
    tasks.sort();
    tasks.dedup();
    Report {
        tasks: TaskTable {
            tasks,
            rows: rows.into_iter().map(|(key, cells)| TaskRow { key, cells }).collect(),
        },
        gender: gender.into_values().collect(),
    }
}

fn cell(m: Option<&MeanStd>) -> String {
    m.map_or_else(|| "-".to_string(), MeanStd::percent)
}

fn mode_label(m: GenderMode) -> &'static str {
    match m {
        GenderMode::Independent => "independent",
        GenderMode::Dependent => "dependent",
    }
}

pub fn render_report(report: &Report, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(report)? + "\n"),
        ReportFormat::Tsv => Ok(render_delimited(report, "\t", false)),
        ReportFormat::Md => Ok(render_delimited(report, " | ", true)),
    }
}

fn render_delimited(report: &Report, sep: &str, markdown: bool) -> String {
    let mut out = String::new();
    let line = |out: &mut String, cells: Vec<String>| {
        if markdown {
            let _ = writeln!(out, "| {} |", cells.join(sep));
        } else {
            let _ = writeln!(out, "{}", cells.join(sep));
        }
    };
    let rule = |out: &mut String, n: usize| {
        if markdown {
            let _ = writeln!(out, "|{}", "---|".repeat(n));
        }
    };

    let t = &report.tasks;
    let mut header = vec!["Model / Strategy / Features".to_string()];
    header.extend(t.tasks.iter().map(|x| x.to_string()));
    let n = header.len();
    line(&mut out, header);
    rule(&mut out, n);
    for row in &t.rows {
        let mut cells = vec![row.key.label()];
        cells.extend(t.tasks.iter().map(|task| cell(row.cells.get(task))));
        line(&mut out, cells);
    }

    if !report.gender.is_empty() {
        out.push('\n');
        let header: Vec<String> = ["Model / Strategy / Features", "Task", "Mode", "All", "Male", "Female"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        line(&mut out, header);
        rule(&mut out, 6);
        for g in &report.gender {
            line(
                &mut out,
                vec![
                    g.key.label(),
                    g.task.to_string(),
                    mode_label(g.mode).to_string(),
                    g.all.percent(),
                    cell(g.male.as_ref()),
                    cell(g.female.as_ref()),
                ],
            );
        }
    }
    out
}
