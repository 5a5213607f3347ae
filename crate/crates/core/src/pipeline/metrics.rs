//! Append-only CSV training logs and SVG training curves.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::PipelineError;

pub const STAGE1_COLUMNS: [&str; 5] = ["iter", "wall_ms", "loss", "psnr", "effective_rate"];
pub const STAGE2_COLUMNS: [&str; 11] = [
    "iter",
    "wall_ms",
    "loss",
    "r_q",
    "r_e",
    "r_c",
    "r_total",
    "psnr",
    "effective_rate",
    "alpha",
    "entropy",
];

/// Parsed metrics table.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Metrics {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",") + "\n";
        for r in &self.rows {
            s += &format_row(r);
        }
        s
    }
}

fn format_row(r: &[f64]) -> String {
    let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
    cells.join(",") + "\n"
}

/// Keeps rows in memory and mirrors them to a CSV file when one is given,
/// flushing after each row so partial runs leave a readable log.
pub struct MetricsWriter {
    pub metrics: Metrics,
    file: Option<BufWriter<File>>,
}

impl MetricsWriter {
    pub fn new(columns: &[&str], path: Option<&Path>) -> Result<Self, PipelineError> {
        let metrics = Metrics::new(columns);
        let file = match path {
            Some(p) => {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir).map_err(PipelineError::io(dir))?;
                }
                let mut w = BufWriter::new(File::create(p).map_err(PipelineError::io(p))?);
                w.write_all((metrics.columns.join(",") + "\n").as_bytes())
                    .and_then(|_| w.flush())
                    .map_err(PipelineError::io(p))?;
                Some(w)
            }
            None => None,
        };
        Ok(Self { metrics, file })
    }

    pub fn push(&mut self, row: Vec<f64>) -> Result<(), PipelineError> {
        assert_eq!(row.len(), self.metrics.columns.len(), "metrics row width");
        if let Some(w) = self.file.as_mut() {
            w.write_all(format_row(&row).as_bytes())
                .and_then(|_| w.flush())
                .map_err(|source| PipelineError::Io {
                    path: "metrics csv".into(),
                    source,
                })?;
        }
        self.metrics.rows.push(row);
        Ok(())
    }
}

pub fn parse_metrics_csv(text: &str) -> Result<Metrics, PipelineError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| PipelineError::Data("metrics file is empty".into()))?;
    let columns: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| PipelineError::Data(format!("metrics row {}: {e}", i + 1)))?;
        if row.len() != columns.len() {
            return Err(PipelineError::Data(format!(
                "metrics row {} has {} cells, header has {}",
                i + 1,
                row.len(),
                columns.len()
            )));
        }
        rows.push(row);
    }
    Ok(Metrics { columns, rows })
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// One polyline per requested column against `iter` (or the row index when
/// there is no `iter` column). Each series is scaled to its own range.
pub fn render_svg(m: &Metrics, columns: &[String]) -> Result<String, PipelineError> {
    if m.rows.is_empty() {
        return Err(PipelineError::Data("no data rows".into()));
    }
    if columns.is_empty() {
        return Err(PipelineError::Config("no columns requested".into()));
    }
    let xs = m
        .column("iter")
        .unwrap_or_else(|| (0..m.rows.len()).map(|i| i as f64).collect());
    let (w, h, pad) = (640.0, 360.0, 40.0);
    let span = |v: &[f64]| {
        let lo = v.iter().copied().filter(|x| x.is_finite()).fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().filter(|x| x.is_finite()).fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() && hi > lo {
            (lo, hi - lo)
        } else {
            (if lo.is_finite() { lo - 0.5 } else { 0.0 }, 1.0)
        }
    };
    let (x0, xr) = span(&xs);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for (ci, name) in columns.iter().enumerate() {
        let ys = m
            .column(name)
            .ok_or_else(|| PipelineError::Data(format!("metrics have no column {name}")))?;
        let (y0, yr) = span(&ys);
        let pts: Vec<String> = xs
            .iter()
            .zip(&ys)
            .filter(|(_, y)| y.is_finite())
            .map(|(x, y)| {
                let px = pad + (x - x0) / xr * (w - 2.0 * pad);
                let py = h - pad - (y - y0) / yr * (h - 2.0 * pad);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        let color = PALETTE[ci % PALETTE.len()];
        let _ = writeln!(
            svg,
            r#"<polyline data-column="{name}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{pad}" y="{}" font-size="12" fill="{color}">{name} [{:.4}, {:.4}]</text>"#,
            16.0 + 14.0 * ci as f64,
            y0,
            y0 + yr
        );
    }
    svg += "</svg>\n";
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut m = Metrics::new(&STAGE1_COLUMNS);
        m.rows.push(vec![0.0, 0.0, 0.125, 21.5, 0.3]);
        m.rows.push(vec![50.0, 0.0, 1e-7, 30.0, 1.0 / 3.0]);
        assert_eq!(parse_metrics_csv(&m.to_csv()).unwrap(), m);
    }

    #[test]
    fn writer_appends_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let mut w = MetricsWriter::new(&["iter", "loss"], Some(&p)).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "iter,loss\n");
        w.push(vec![1.0, 0.5]).unwrap();
        w.push(vec![2.0, 0.25]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "iter,loss\n1,0.5\n2,0.25\n");
    }

    #[test]
    fn parse_rejects_ragged_rows() {
        assert!(parse_metrics_csv("a,b\n1\n").is_err());
        assert!(parse_metrics_csv("a,b\n1,x\n").is_err());
        assert!(parse_metrics_csv("").is_err());
    }

    #[test]
    fn svg_has_one_polyline_per_column() {
        let m = parse_metrics_csv("iter,loss,psnr,alpha\n0,1,10,0.5\n1,0.5,12,0.4\n2,0.2,15,0.3\n").unwrap();
        let cols: Vec<String> = ["loss", "psnr"].iter().map(|s| s.to_string()).collect();
        let svg = render_svg(&m, &cols).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(render_svg(&m, &["nope".into()]).is_err());
    }

    #[test]
    fn empty_metrics_report_no_data_rows() {
        let m = parse_metrics_csv("iter,loss\n").unwrap();
        let err = render_svg(&m, &["loss".into()]).unwrap_err().to_string();
        assert!(err.contains("no data rows"), "{err}");
    }
}
