use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ComparisonReport, Winner};
use crate::metrics::Metric;
use crate::model::Framework;

pub const CSV_COLUMNS: [&str; 12] = [
    "framework",
    "metric",
    "n",
    "mean_a",
    "mean_b",
    "ci_a_lo",
    "ci_a_hi",
    "ci_b_lo",
    "ci_b_hi",
    "p",
    "d",
    "winner",
];

/// One CSV line. Missing numbers are empty cells, never zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub framework: String,
    pub metric: String,
    pub n: usize,
    pub mean_a: Option<f64>,
    pub mean_b: Option<f64>,
    pub ci_a_lo: Option<f64>,
    pub ci_a_hi: Option<f64>,
    pub ci_b_lo: Option<f64>,
    pub ci_b_hi: Option<f64>,
    pub p: Option<f64>,
    pub d: Option<f64>,
    pub winner: String,
}

impl From<&ComparisonReport> for CsvRow {
    fn from(r: &ComparisonReport) -> Self {
        CsvRow {
            framework: r.framework.name().to_string(),
            metric: r.metric.name().to_string(),
            n: r.n,
            mean_a: r.mean_a,
            mean_b: r.mean_b,
            ci_a_lo: r.ci_a.map(|c| c.lo),
            ci_a_hi: r.ci_a.map(|c| c.hi),
            ci_b_lo: r.ci_b.map(|c| c.lo),
            ci_b_hi: r.ci_b.map(|c| c.hi),
            p: r.p_value,
            d: r.d,
            winner: r.winner.as_str().to_string(),
        }
    }
}

/// Framework-by-metric grid of comparisons against one opponent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub reports: Vec<ComparisonReport>,
}

fn fmt_num(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{v:.3}"),
        None => "—".into(),
    }
}

fn fmt_p(p: Option<f64>) -> String {
    match p {
        Some(p) if p < 0.001 => "p<0.001".into(),
        other => format!("p={}", fmt_num(other)),
    }
}

impl ResultsTable {
    pub fn new(mut reports: Vec<ComparisonReport>) -> Self {
        reports.sort_by_key(|r| (r.framework, r.opponent as u8, r.metric));
        ResultsTable { reports }
    }

    pub fn get(&self, framework: Framework, metric: Metric) -> Option<&ComparisonReport> {
        self.reports
            .iter()
            .find(|r| r.framework == framework && r.metric == metric)
    }

    pub fn csv_rows(&self) -> Vec<CsvRow> {
        self.reports.iter().map(CsvRow::from).collect()
    }

    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.reports.is_empty() {
            w.write_record(CSV_COLUMNS)?;
        }
        for row in self.csv_rows() {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>, csv::Error> {
        csv::Reader::from_reader(text.as_bytes()).deserialize().collect()
    }

    /// Markdown grid: one row per framework present, one column per metric
    /// present. Cells without a comparison show a dash.
    pub fn to_markdown(&self) -> String {
        let frameworks: Vec<Framework> = Framework::ALL
            .into_iter()
            .filter(|f| self.reports.iter().any(|r| r.framework == *f))
            .collect();
        let metrics: Vec<Metric> = Metric::ALL
            .into_iter()
            .filter(|m| self.reports.iter().any(|r| r.metric == *m))
            .collect();
        let opponent = self
            .reports
            .first()
            .map(|r| r.opponent.agent_id().to_string())
            .unwrap_or_else(|| "B".into());
        let mut out = String::new();
        let _ = write!(out, "| Framework |");
        for m in &metrics {
            let _ = write!(out, " {} {} |", m.label(), m.direction().arrow());
        }
        out.push('\n');
        out.push_str("|---|");
        for _ in &metrics {
            out.push_str("---|");
        }
        out.push('\n');
        for f in &frameworks {
            let _ = write!(out, "| {} |", f.display_name());
            for m in &metrics {
                match self.get(*f, *m) {
                    Some(r) if r.n > 0 => {
                        let _ = write!(
                            out,
                            " A {} / {opponent} {} (n={}, {}, d={}, {}) |",
                            fmt_num(r.mean_a),
                            fmt_num(r.mean_b),
                            r.n,
                            fmt_p(r.p_value),
                            fmt_num(r.d),
                            r.winner.as_str()
                        );
                    }
                    Some(r) => {
                        let _ = write!(out, " no feasible pairs ({} excluded) |", r.excluded.len());
                    }
                    None => out.push_str(" — |"),
                }
            }
            out.push('\n');
        }
        out
    }
}

fn winner_mark(w: Winner) -> &'static str {
    match w {
        Winner::A => " *",
        Winner::B => " †",
        Winner::Tie => "",
    }
}

/// Grouped bar chart of the two means per framework for one metric, with
/// bootstrap-interval whiskers.
pub fn bar_chart_svg(metric: Metric, reports: &[ComparisonReport]) -> String {
    let rows: Vec<&ComparisonReport> = reports
        .iter()
        .filter(|r| r.metric == metric && r.mean_a.is_some())
        .collect();
    let (w, h, left, bottom, top) = (640.0, 360.0, 60.0, 60.0, 40.0);
    let plot_h = h - bottom - top;
    let max = rows
        .iter()
        .flat_map(|r| [r.mean_a, r.mean_b, r.ci_a.map(|c| c.hi), r.ci_b.map(|c| c.hi)])
        .flatten()
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let y = |v: f64| top + plot_h * (1.0 - (v.max(0.0) / max));
    let group = if rows.is_empty() {
        1.0
    } else {
        (w - left - 20.0) / rows.len() as f64
    };
    let bar = group * 0.35;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{} {} (mean, 95% CI)</text>"#,
        w / 2.0,
        metric.label(),
        metric.direction().arrow()
    );
    let _ = writeln!(
        s,
        r##"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="#333"/>"##,
        h - bottom
    );
    let _ = writeln!(
        s,
        r##"<line x1="{left}" y1="{0}" x2="{1}" y2="{0}" stroke="#333"/>"##,
        h - bottom,
        w - 20.0
    );
    for k in 0..=4 {
        let v = max * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{:.3}</text>"#,
            left - 6.0,
            y(v) + 4.0,
            v
        );
    }
    for (g, r) in rows.iter().enumerate() {
        let x0 = left + g as f64 * group + group * 0.15;
        let bars = [(r.mean_a, r.ci_a, "#3b6ea5", 0.0), (r.mean_b, r.ci_b, "#c8553d", bar)];
        for (m, ci, color, dx) in bars {
            let Some(m) = m else { continue };
            let x = x0 + dx;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{:.1}" width="{bar:.1}" height="{:.1}" fill="{color}"/>"#,
                y(m),
                (h - bottom) - y(m)
            );
            if let Some(ci) = ci {
                let cx = x + bar / 2.0;
                let _ = writeln!(
                    s,
                    r##"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="#111"/>"##,
                    y(ci.lo),
                    y(ci.hi)
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}{}</text>"#,
            x0 + bar,
            h - bottom + 18.0,
            r.framework.display_name(),
            winner_mark(r.winner)
        );
    }
    let opp = rows
        .first()
        .map(|r| r.opponent.agent_id().to_string())
        .unwrap_or_else(|| "B".into());
    let _ = writeln!(
        s,
        r##"<text x="{left}" y="{}"><tspan fill="#3b6ea5">■ A</tspan>  <tspan fill="#c8553d">■ {opp}</tspan>  (* A wins, † {opp} wins)</text>"##,
        h - 16.0
    );
    s.push_str("</svg>\n");
    s
}
