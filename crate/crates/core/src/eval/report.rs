//! Experiment report: AUROC, ROC curve, split metadata, fingerprint.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auroc: f64,
    pub roc_points: Vec<(f64, f64)>,
    pub n_pos: usize,
    pub n_neg: usize,
    pub split_descriptor: String,
    pub config_fingerprint: String,
    /// Filter-funnel exclusion counts carried through from the pipeline.
    pub funnel: std::collections::BTreeMap<String, usize>,
    pub train_size: usize,
    pub test_size: usize,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn write_json(&self, path: &std::path::Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("report serializes"))
    }

    pub fn write_roc_csv(&self, path: &std::path::Path) -> std::io::Result<()> {
        let mut out = String::from("fpr,tpr\n");
        for (fpr, tpr) in &self.roc_points {
            out.push_str(&format!("{fpr},{tpr}\n"));
        }
        std::fs::write(path, out)
    }
}
