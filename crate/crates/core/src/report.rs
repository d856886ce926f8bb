//! Run reports: one row per executed task, rendered as aligned text for
//! reading and as JSON for machines. Wall times are informational; every
//! other column is deterministic for a fixed configuration and seed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Verdict strings of decided solver tasks.
pub const DECIDED: [&str; 3] = ["SAT", "UNSAT", "DELTA-SAT"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub name: String,
    /// `SAT`, `UNSAT` or `DELTA-SAT` for solver tasks; `COUNTEREXAMPLE`
    /// or `NO-COUNTEREXAMPLE` for falsification rows; `BUDGET-EXHAUSTED`
    /// when the box budget ran out first.
    pub verdict: String,
    /// Precision the task ran at; absent on falsification rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enclosure: Option<BTreeMap<String, [f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Boxes processed (solver rows) or trials run (falsification rows).
    pub work: u64,
    pub wall_seconds: f64,
    pub workers: usize,
}

impl TaskReport {
    /// True when the task reached an outcome rather than an error marker.
    pub fn decided(&self) -> bool {
        DECIDED.contains(&self.verdict.as_str())
            || matches!(self.verdict.as_str(), "COUNTEREXAMPLE" | "NO-COUNTEREXAMPLE")
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<TaskReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Report {
    pub fn all_decided(&self) -> bool {
        self.rows.iter().all(TaskReport::decided)
    }

    pub fn render_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }

    /// Aligned table with one line per task; witnesses, enclosures and
    /// notes follow their row indented.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        if self.rows.is_empty() {
            out.push_str("no tasks executed\n");
            return out;
        }
        let headers = ["task", "precision", "verdict", "work", "time", "workers"];
        let cells: Vec<[String; 6]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.name.clone(),
                    r.delta.map_or_else(|| "-".into(), |d| format!("{d:e}")),
                    r.verdict.clone(),
                    r.work.to_string(),
                    format!("{:.3}s", r.wall_seconds),
                    r.workers.to_string(),
                ]
            })
            .collect();
        let mut width = headers.map(str::len);
        for row in &cells {
            for (w, c) in width.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let line = |row: [&str; 6]| {
            let mut s = String::new();
            for (i, (cell, w)) in row.iter().zip(width).enumerate() {
                if i > 0 {
                    s.push_str("  ");
                }
                s.push_str(cell);
                if i + 1 < row.len() {
                    s.push_str(&" ".repeat(w - cell.len()));
                }
            }
            s.push('\n');
            s
        };
        out.push_str(&line(headers));
        for (row, cells) in self.rows.iter().zip(&cells) {
            out.push_str(&line([
                &cells[0], &cells[1], &cells[2], &cells[3], &cells[4], &cells[5],
            ]));
            if let Some(w) = &row.witness {
                let vars: Vec<String> = w.iter().map(|(k, v)| format!("{k} = {v}")).collect();
                out.push_str(&format!("  witness: {}\n", vars.join(", ")));
            }
            if let Some(e) = &row.enclosure {
                let vars: Vec<String> = e
                    .iter()
                    .map(|(k, [lo, hi])| format!("{k} in [{lo}, {hi}]"))
                    .collect();
                out.push_str(&format!("  enclosure: {}\n", vars.join(", ")));
            }
            if let Some(n) = &row.note {
                out.push_str(&format!("  note: {n}\n"));
            }
        }
        out
    }
}
