use std::fmt::Write as _;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::{Averaging, ConfusionCounts};
use crate::train::Task;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub id: usize,
    pub support: u64,
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub averaging: Averaging,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gtpa: Option<f64>,
    pub n_patients: usize,
    pub threshold: Option<f32>,
    pub mean_set_size: Option<f64>,
    pub per_class: Vec<ClassMetrics>,
}

impl EvalReport {
    /// How accuracy was computed for this task.
    pub fn accuracy_definition(&self) -> &'static str {
        match self.task {
            Task::Pathology => "top-1 accuracy over patients",
            Task::Ddx => "element-wise accuracy over patients x 49 membership decisions",
        }
    }

    pub fn to_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("report serializes");
        value["accuracy_definition"] = self.accuracy_definition().into();
        value["zero_division"] = "precision, recall and F1 are 0 when their denominator is 0".into();
        serde_json::to_string_pretty(&value).expect("report serializes")
    }

    /// Summary block followed by an aligned per-class table.
    /// `names` supplies class labels; missing entries fall back to the id.
    pub fn to_table(&self, names: &[&str]) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "task        {}", self.task);
        let _ = writeln!(out, "averaging   {}", self.averaging);
        let _ = writeln!(out, "patients    {}", self.n_patients);
        let _ = writeln!(out, "accuracy    {:.4}  ({})", self.accuracy, self.accuracy_definition());
        let _ = writeln!(out, "precision   {:.4}", self.precision);
        let _ = writeln!(out, "recall      {:.4}", self.recall);
        let _ = writeln!(out, "f1          {:.4}", self.f1);
        if let Some(g) = self.gtpa {
            let _ = writeln!(out, "gtpa        {g:.4}");
        }
        if let Some(t) = self.threshold {
            let _ = writeln!(out, "threshold   {t}");
        }
        if let Some(s) = self.mean_set_size {
            let _ = writeln!(out, "mean set    {s:.3}");
        }
        let _ = writeln!(out, "zero-division: empty denominators score 0");
        let _ = writeln!(out);

        let labels: Vec<String> = self
            .per_class
            .iter()
            .map(|c| names.get(c.id).map_or_else(|| c.id.to_string(), |n| n.to_string()))
            .collect();
        let width = labels.iter().map(String::len).chain([5]).max().unwrap_or(5);
        let _ = writeln!(
            out,
            "{:>3}  {:<width$}  {:>7}  {:>9}  {:>6}  {:>6}",
            "id", "class", "support", "precision", "recall", "f1"
        );
        for (c, label) in self.per_class.iter().zip(&labels) {
            let _ = writeln!(
                out,
                "{:>3}  {:<width$}  {:>7}  {:>9.4}  {:>6.4}  {:>6.4}",
                c.id, label, c.support, c.precision, c.recall, c.f1
            );
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f32,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gtpa: f64,
    pub mean_set_size: f64,
}

pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> io::Result<()> {
    writeln!(w, "threshold,precision,recall,f1,gtpa,mean_set_size")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.6},{:.6},{:.4}",
            r.threshold, r.precision, r.recall, r.f1, r.gtpa, r.mean_set_size
        )?;
    }
    Ok(())
}
