use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::task::TaskKind;

use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    /// Adapters the evaluation routed inputs through; empty for the bare base model.
    pub tasks: Vec<TaskKind>,
    pub instructions: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub run_id: String,
    pub task: String,
    pub adapters: AdapterConfig,
    pub mrl_dim: usize,
    pub metrics: BTreeMap<String, f64>,
    /// Bookkeeping such as evaluated and excluded query counts.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub counts: BTreeMap<String, usize>,
    pub seed: u64,
    /// Left out unless requested so that reports stay byte-reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

impl EvalReport {
    /// Checks every metric against its range: Spearman in [−1, 1], everything else in [0, 1].
    pub fn validate(&self) -> Result<(), EvalError> {
        for (name, &v) in &self.metrics {
            let lo = if name.starts_with("spearman") {
                -1.0
            } else {
                0.0
            };
            if !(lo..=1.0).contains(&v) {
                return Err(EvalError::Input(format!(
                    "metric {name} = {v} outside [{lo}, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn to_table(&self) -> String {
        let adapters = if self.adapters.tasks.is_empty() {
            "none".to_string()
        } else {
            self.adapters
                .tasks
                .iter()
                .map(|t| t.as_str())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut out = format!(
            "{} | task {} | adapters {} | instructions {} | dim {} | seed {}\n",
            self.run_id,
            self.task,
            adapters,
            if self.adapters.instructions {
                "on"
            } else {
                "off"
            },
            self.mrl_dim,
            self.seed
        );
        let mut rows: Vec<Vec<String>> = self
            .metrics
            .iter()
            .map(|(k, v)| vec![k.clone(), format!("{v:.4}")])
            .collect();
        rows.extend(
            self.counts
                .iter()
                .map(|(k, v)| vec![k.clone(), v.to_string()]),
        );
        out.push_str(&render_table(&["metric", "value"], &rows));
        out
    }
}

/// Plain-text table with left-aligned first column and right-aligned others.
pub fn render_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let cols = headers.len();
    let mut width: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (i, cell) in r.iter().enumerate().take(cols) {
            width[i] = width[i].max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &mut dyn Iterator<Item = &str>| {
        let mut parts = Vec::with_capacity(cols);
        for (i, c) in cells.enumerate() {
            parts.push(if i == 0 {
                format!("{c:<w$}", w = width[i])
            } else {
                format!("{c:>w$}", w = width[i])
            });
        }
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &mut headers.iter().copied());
    let rule: Vec<String> = width.iter().map(|&w| "-".repeat(w)).collect();
    let _ = writeln!(out, "{}", rule.join("  "));
    for r in rows {
        line(
            &mut out,
            &mut r
                .iter()
                .map(String::as_str)
                .chain(std::iter::repeat(""))
                .take(cols),
        );
    }
    out
}
