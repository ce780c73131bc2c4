use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::dataset::Scenario;
use super::experiment::DiagnosticRow;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scenario: Scenario,
    /// A fusion strategy name, or `bsN` for station `N` alone.
    pub strategy: String,
    pub n_bs: usize,
    pub seed: u64,
    pub mean_error_m: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
}

pub const CSV_HEADER: &str = "scenario,strategy,n_bs,seed,mean_error_m";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    /// One chart per scenario.
    Svg,
}

impl ReportTable {
    /// Header plus one line per row; floats in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.scenario.name(),
                r.strategy,
                r.n_bs,
                r.seed,
                r.mean_error_m
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::Malformed("missing report header".into()));
        }
        let rows = lines
            .enumerate()
            .map(|(i, line)| {
                let bad = || Error::Malformed(format!("report line {}: {line:?}", i + 2));
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 5 {
                    return Err(bad());
                }
                Ok(ReportRow {
                    scenario: Scenario::parse(f[0])?,
                    strategy: f[1].to_string(),
                    n_bs: f[2].parse().map_err(|_| bad())?,
                    seed: f[3].parse().map_err(|_| bad())?,
                    mean_error_m: f[4].parse().map_err(|_| bad())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows })
    }

    /// Rows of one scenario, strategy and station count.
    pub fn select<'a>(&'a self, scenario: Scenario, strategy: &'a str, n_bs: usize) -> impl Iterator<Item = &'a ReportRow> {
        self.rows
            .iter()
            .filter(move |r| r.scenario == scenario && r.strategy == strategy && r.n_bs == n_bs)
    }

    /// Mean error averaged over seeds for each `(strategy, n_bs)` of a
    /// scenario, single-station rows excluded.
    pub fn curves(&self, scenario: Scenario) -> BTreeMap<String, BTreeMap<usize, f64>> {
        let mut acc: BTreeMap<String, BTreeMap<usize, (f64, usize)>> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| r.scenario == scenario && !is_single(&r.strategy)) {
            let e = acc.entry(r.strategy.clone()).or_default().entry(r.n_bs).or_default();
            e.0 += r.mean_error_m;
            e.1 += 1;
        }
        acc.into_iter()
            .map(|(k, v)| (k, v.into_iter().map(|(n, (s, c))| (n, s / c as f64)).collect()))
            .collect()
    }

    /// Line chart of mean error against station count, one polyline per
    /// strategy.
    pub fn to_svg(&self, scenario: Scenario) -> String {
        const W: f64 = 640.0;
        const H: f64 = 400.0;
        const M: f64 = 56.0;
        const COLORS: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];
        let curves = self.curves(scenario);
        let points = curves.values().flat_map(|c| c.iter());
        let (mut n_max, mut e_max) = (1usize, 0.0f64);
        for (n, e) in points {
            n_max = n_max.max(*n);
            e_max = e_max.max(*e);
        }
        let e_max = if e_max > 0.0 { e_max * 1.1 } else { 1.0 };
        let sx = |n: usize| {
            if n_max == 1 {
                W / 2.0
            } else {
                M + (n - 1) as f64 * (W - 2.0 * M) / (n_max - 1) as f64
            }
        };
        let sy = |e: f64| H - M - e / e_max * (H - 2.0 * M);

        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, r#"<title>Mean error vs. number of base stations ({})</title>"#, scenario.name());
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<line x1="{M}" y1="{y}" x2="{x}" y2="{y}" stroke="black"/>"#, y = H - M, x = W - M);
        let _ = writeln!(s, r#"<line x1="{M}" y1="{M}" x2="{M}" y2="{y}" stroke="black"/>"#, y = H - M);
        for n in 1..=n_max {
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{n}</text>"#, sx(n), H - M + 18.0);
        }
        for i in 0..=4 {
            let e = e_max * i as f64 / 4.0;
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{e:.2}</text>"#, M - 6.0, sy(e) + 4.0);
        }
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">base stations</text>"#, W / 2.0, H - 12.0);
        let _ = writeln!(s, r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">mean error [m]</text>"#, H / 2.0, H / 2.0);
        for (i, (name, curve)) in curves.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let pts: Vec<String> = curve.iter().map(|(n, e)| format!("{:.1},{:.1}", sx(*n), sy(*e))).collect();
            let _ = writeln!(s, r#"<polyline data-strategy="{name}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
            for (n, e) in curve {
                let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, sx(*n), sy(*e));
            }
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" fill="{color}">{name}</text>"#, W - M - 90.0, M + 16.0 * i as f64);
        }
        s.push_str("</svg>\n");
        s
    }
}

fn is_single(strategy: &str) -> bool {
    strategy.strip_prefix("bs").is_some_and(|n| n.parse::<usize>().is_ok())
}

/// Write the table. CSV goes to `path`; SVG writes one chart per scenario
/// present, named `<stem>_<scenario>.svg` next to `path`. Returns the files
/// written.
pub fn emit_report(table: &ReportTable, format: ReportFormat, path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if table.rows.is_empty() {
        return Err(Error::InvalidArgument("empty report".into()));
    }
    let path = path.as_ref();
    match format {
        ReportFormat::Csv => {
            std::fs::write(path, table.to_csv())?;
            Ok(vec![path.to_path_buf()])
        }
        ReportFormat::Svg => {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
            let mut written = Vec::new();
            for scenario in [Scenario::Static, Scenario::Dynamic] {
                if !table.rows.iter().any(|r| r.scenario == scenario) {
                    continue;
                }
                let file = path.with_file_name(format!("{stem}_{}.svg", scenario.name()));
                std::fs::write(&file, table.to_svg(scenario))?;
                written.push(file);
            }
            Ok(written)
        }
    }
}

/// Diagnostics as CSV, one line per station and component.
pub fn diagnostics_csv(rows: &[DiagnosticRow]) -> String {
    let mut out = String::from("scenario,strategy,seed,sample,bs,component,blocked,aleatoric_var,weight_var,weight\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.scenario.name(),
            r.strategy,
            r.seed,
            r.sample,
            r.bs + 1,
            r.component,
            r.blocked as u8,
            r.aleatoric_var,
            r.weight_var,
            r.weight
        );
    }
    out
}
