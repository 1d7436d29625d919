//! Human-readable and machine-readable renderings of evaluation results.

use std::fmt::Write as _;
use std::io::{self, Write};

use examagent_core::harness::{EvalReport, RocPoint};
use examagent_core::models::Architecture;

/// One table row: architecture, per-term accuracies, overall.
pub struct TableRow<'a> {
    pub architecture: Architecture,
    pub terms: &'a [f64],
    pub overall: f64,
}

/// Comparison table with one column per term plus "Overall (%)".
pub fn render_table(term_names: &[String], rows: &[TableRow<'_>]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<12}", "Network");
    for name in term_names {
        let _ = write!(out, "{:>16}", format!("{name} (%)"));
    }
    let _ = writeln!(out, "{:>14}", "Overall (%)");
    for row in rows {
        let _ = write!(out, "{:<12}", row.architecture.name());
        for acc in row.terms {
            let _ = write!(out, "{acc:>16.2}");
        }
        let _ = writeln!(out, "{:>14.2}", row.overall);
    }
    out
}

pub fn render_eval(report: &EvalReport) -> String {
    let c = report.confusion;
    let auc = report.auc.map_or("n/a".to_string(), |a| format!("{a:.4}"));
    format!(
        "accuracy   {:.2}%\nerror rate {:.2}%\nAUC        {auc}\nTP {}  FP {}  TN {}  FN {}\n",
        report.accuracy, report.error_rate, c.tp, c.fp, c.tn, c.fn_
    )
}

/// ROC points as CSV with header `threshold,fpr,tpr`; infinite thresholds
/// are written as `inf` and `-inf`.
pub fn write_roc_csv<W: Write>(mut out: W, points: &[RocPoint]) -> io::Result<()> {
    writeln!(out, "threshold,fpr,tpr")?;
    for p in points {
        writeln!(out, "{},{},{}", p.threshold, p.fpr, p.tpr)?;
    }
    out.flush()
}
