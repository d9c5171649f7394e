use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::sweep::{Stat, SweepReport};
use crate::error::EvalError;

/// Column order of the CSV report, one row per sweep cell.
pub const CSV_COLUMNS: [&str; 14] = [
    "axis",
    "value",
    "prompt",
    "seed",
    "status",
    "separation",
    "binding",
    "outside_leak",
    "uniformity",
    "div",
    "sim",
    "out",
    "pac",
    "total",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(EvalError::UnknownFormat(other.to_string())),
        }
    }
}

pub fn emit_report(report: &SweepReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(report).expect("report serializes");
            out.push(b'\n');
            out
        }
        ReportFormat::Csv => csv_report(report),
        ReportFormat::Markdown => markdown_report(report).into_bytes(),
    }
}

fn csv_report(report: &SweepReport) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).expect("in-memory write");
    let axis = report.axis.name();
    for cell in &report.cells {
        let mut row = vec![
            axis.to_string(),
            cell.value.to_string(),
            cell.prompt.clone(),
            cell.seed.to_string(),
            if cell.ok() { "ok" } else { "failed" }.to_string(),
        ];
        match (&cell.scores, &cell.loss) {
            (Some(s), Some(l)) => row.extend(
                [
                    s.separation,
                    s.binding,
                    s.outside_leak,
                    s.uniformity,
                    l.div,
                    l.sim,
                    l.out,
                    l.pac,
                    l.total,
                ]
                .iter()
                .map(|v| v.to_string()),
            ),
            _ => row.extend(std::iter::repeat_n(String::new(), 9)),
        }
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn fmt_stat(s: &Option<Stat>) -> String {
    match s {
        Some(s) => format!("{:.4} ± {:.4}", s.mean, s.sd),
        None => "-".to_string(),
    }
}

fn markdown_report(report: &SweepReport) -> String {
    let mut out = format!(
        "| {} | completed | failed | separation | binding | outside_leak | uniformity | total |\n",
        report.axis.name()
    );
    out.push_str("|---|---|---|---|---|---|---|---|\n");
    for s in &report.summary {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} | {} |\n",
            s.value,
            s.completed,
            s.failed,
            fmt_stat(&s.separation),
            fmt_stat(&s.binding),
            fmt_stat(&s.outside_leak),
            fmt_stat(&s.uniformity),
            fmt_stat(&s.total),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{DiagnosticScores, SweepAxis, SweepCell};
    use crate::losses::LossBreakdown;

    fn cell(value: f64, seed: u64, ok: bool) -> SweepCell {
        SweepCell {
            value,
            prompt: "a frog, and a crown".into(),
            seed,
            error: (!ok).then(|| "boom".to_string()),
            scores: ok.then_some(DiagnosticScores {
                separation: 1.5 + seed as f64,
                binding: 0.25,
                outside_leak: 0.5,
                uniformity: 0.125,
            }),
            loss: ok.then(|| LossBreakdown {
                div: -1.5,
                sim: 0.25,
                out: -0.5,
                pac: -0.06,
                total: 1.0,
                flags: vec![],
                per_pair: vec![],
            }),
        }
    }

    fn report() -> SweepReport {
        SweepReport::from_cells(
            SweepAxis::Delta,
            &[0.05, 0.15],
            vec![cell(0.05, 0, true), cell(0.05, 1, true), cell(0.15, 0, false)],
        )
    }

    #[test]
    fn format_names() {
        assert_eq!("csv".parse::<ReportFormat>().unwrap(), ReportFormat::Csv);
        assert_eq!("md".parse::<ReportFormat>().unwrap(), ReportFormat::Markdown);
        assert!(matches!("xml".parse::<ReportFormat>(), Err(EvalError::UnknownFormat(_))));
    }

    #[test]
    fn empty_sweep_gives_header_only_csv() {
        let empty = SweepReport::from_cells(SweepAxis::StepSize, &[], vec![]);
        let text = String::from_utf8(emit_report(&empty, ReportFormat::Csv)).unwrap();
        assert_eq!(text, CSV_COLUMNS.join(",") + "\n");
    }

    #[test]
    fn csv_rows_and_quoting() {
        let text = String::from_utf8(emit_report(&report(), ReportFormat::Csv)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "delta,0.05,\"a frog, and a crown\",0,ok,1.5,0.25,0.5,0.125,-1.5,0.25,-0.5,-0.06,1");
        assert_eq!(lines[3], "delta,0.15,\"a frog, and a crown\",0,failed,,,,,,,,,");
    }

    #[test]
    fn json_round_trips() {
        let r = report();
        let back: SweepReport = serde_json::from_slice(&emit_report(&r, ReportFormat::Json)).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn markdown_has_one_row_per_value() {
        let text = String::from_utf8(emit_report(&report(), ReportFormat::Markdown)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("| 0.05 | 2 | 0 | 2.0000 ± 0.7071 |"));
        assert!(lines[3].starts_with("| 0.15 | 0 | 1 | - |"));
    }
}
