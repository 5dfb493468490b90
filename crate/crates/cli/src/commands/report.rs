use std::fmt::Write as _;
use std::path::Path;

use powerline_core::io::read_json;
use powerline_core::metrics::Scores;
use powerline_core::ObjectClass;

use super::eval::EvalReport;
use super::require_file;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum ReportFormat {
    #[default]
    Table,
    Csv,
}

/// `(fold label, class, scores)` rows: every fold, then `mean` and `std`.
fn rows(report: &EvalReport) -> Vec<(String, ObjectClass, Scores)> {
    let mut out = Vec::new();
    for class in ObjectClass::ALL {
        let agg = report.aggregate.get(class);
        for (id, s) in agg.fold_ids.iter().zip(&agg.aggregate.folds) {
            out.push((id.to_string(), class, *s));
        }
        out.push(("mean".into(), class, agg.aggregate.mean));
        out.push(("std".into(), class, agg.aggregate.std));
    }
    out
}

/// Columns `fold, object_class` and the six scores.
pub fn render_csv(report: &EvalReport) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = ["fold", "object_class"].into_iter().chain(Scores::NAMES);
    w.write_record(header).map_err(csv_err)?;
    for (fold, class, s) in rows(report) {
        let mut rec = vec![fold, class.to_string()];
        rec.extend(s.as_array().iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Usage(format!("csv: {e}"))
}

pub fn render_table(report: &EvalReport) -> String {
    let mut t = String::new();
    let _ = write!(t, "{:<6} {:<7}", "fold", "class");
    for name in Scores::NAMES {
        let _ = write!(t, " {name:>12}");
    }
    t.push('\n');
    for (fold, class, s) in rows(report) {
        let _ = write!(t, "{fold:<6} {:<7}", class.as_str());
        for v in s.as_array() {
            let _ = write!(t, " {v:>12.4}");
        }
        t.push('\n');
    }
    let _ = writeln!(
        t,
        "pooling {:?}, {} images, {} missing, {} skipped",
        report.pooling,
        report.images.len(),
        report.missing.len(),
        report.skipped.len()
    );
    t
}

pub fn cmd_report(input: &Path, format: ReportFormat) -> CliResult<String> {
    require_file(input, "evaluation report")?;
    let report: EvalReport = read_json(input)?;
    match format {
        ReportFormat::Table => Ok(render_table(&report)),
        ReportFormat::Csv => render_csv(&report),
    }
}
