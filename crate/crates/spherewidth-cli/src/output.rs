//! Serialization helpers. Every float leaving the binary goes through [`num`]
//! or the [`Fixed17`] JSON formatter, so repeated runs are byte-identical.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use spherewidth::surface::ChartPoint;

/// Formats floats with 17 significant digits.
pub struct Fixed17;

impl serde_json::ser::Formatter for Fixed17 {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        w.write_all(num(v).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        self.write_f64(w, v as f64)
    }
}

pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "null".into()
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Fixed17);
    value.serialize(&mut ser).expect("serializable output");
    String::from_utf8(buf).expect("utf-8 json")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    fs::write(path, to_json(value) + "\n")
}

/// CSV with a header row; numeric cells are preformatted strings.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()
}

/// Rows `(s, chart, u, v)`.
pub fn curve_rows(samples: &[(f64, ChartPoint)]) -> Vec<Vec<String>> {
    samples.iter().map(|(s, p)| vec![num(*s), p.chart.to_string(), num(p.u), num(p.v)]).collect()
}

const PANEL: f64 = 400.0;
const GAP: f64 = 40.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Chart-plane drawing: one panel per chart, each curve split where it
/// changes chart.
pub fn svg(curves: &[Vec<ChartPoint>], title: &str) -> String {
    let mut bounds = [[f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY]; 2];
    for p in curves.iter().flatten() {
        let b = &mut bounds[(p.chart as usize).min(1)];
        b[0] = b[0].min(p.u);
        b[1] = b[1].min(p.v);
        b[2] = b[2].max(p.u);
        b[3] = b[3].max(p.v);
    }
    let map = |p: &ChartPoint| -> (f64, f64) {
        let c = (p.chart as usize).min(1);
        let b = bounds[c];
        let span = (b[2] - b[0]).max(b[3] - b[1]).max(1e-9) * 1.1;
        let (cx, cy) = (0.5 * (b[0] + b[2]), 0.5 * (b[1] + b[3]));
        let x = (p.u - cx) / span * PANEL + 0.5 * PANEL + c as f64 * (PANEL + GAP);
        let y = 0.5 * PANEL - (p.v - cy) / span * PANEL;
        (x, y)
    };
    let width = 2.0 * PANEL + GAP;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{PANEL}\" viewBox=\"0 0 {width} {PANEL}\">\n<title>{}</title>\n",
        escape(title)
    );
    for c in 0..2 {
        let x0 = c as f64 * (PANEL + GAP);
        out += &format!(
            "<rect x=\"{x0}\" y=\"0\" width=\"{PANEL}\" height=\"{PANEL}\" fill=\"none\" stroke=\"#999\"/>\n<text x=\"{}\" y=\"16\" font-size=\"12\">chart {c}</text>\n",
            x0 + 6.0
        );
    }
    for (k, curve) in curves.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut runs: Vec<Vec<&ChartPoint>> = vec![];
        for p in curve {
            match runs.last_mut() {
                Some(r) if r[0].chart == p.chart => r.push(p),
                _ => runs.push(vec![p]),
            }
        }
        for r in runs.iter().filter(|r| r.len() > 1) {
            let pts: Vec<String> = r
                .iter()
                .map(|p| {
                    let (x, y) = map(p);
                    format!("{x:.3},{y:.3}")
                })
                .collect();
            out += &format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n", pts.join(" "));
        }
    }
    out + "</svg>\n"
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
