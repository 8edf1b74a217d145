//! Line plots of CSV channels as standalone SVG.

use std::fmt::Write as _;
use std::path::Path;

/// A CSV file read into named columns.
pub struct Table {
    pub name: String,
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

/// Run name of a CSV: its stem, or the parent directory for the default
/// `timeseries.csv`.
pub fn run_name(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if stem == "timeseries" {
        if let Some(dir) = path.parent().and_then(|p| p.file_name()) {
            return dir.to_string_lossy().into_owned();
        }
    }
    stem
}

pub fn read_table(path: &Path) -> Result<Table, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let headers: Vec<String> = lines.next().ok_or_else(|| format!("{}: empty file", path.display()))?.split(',').map(|h| h.trim().to_string()).collect();
    let mut columns = vec![Vec::new(); headers.len()];
    for (i, line) in lines.enumerate() {
        let vals: Vec<&str> = line.split(',').collect();
        if vals.len() != headers.len() {
            return Err(format!("{}: row {} has {} fields, expected {}", path.display(), i + 2, vals.len(), headers.len()));
        }
        for (c, v) in vals.iter().enumerate() {
            columns[c].push(v.trim().parse().map_err(|_| format!("{}: row {}: `{v}` is not a number", path.display(), i + 2))?);
        }
    }
    Ok(Table {
        name: run_name(path),
        headers,
        columns,
    })
}

impl Table {
    /// Column whose header equals `channel` or starts with `channel_`.
    pub fn channel(&self, channel: &str) -> Result<usize, String> {
        self.headers
            .iter()
            .position(|h| h == channel || h.starts_with(&format!("{channel}_")))
            .ok_or_else(|| format!("no channel `{channel}` in {}; available: {}", self.name, self.headers.join(", ")))
    }
}

/// Tick positions covering [lo, hi] with a 1-2-5 step.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap();
    let first = (lo / step).ceil() * step;
    (0..).map(|i| first + i as f64 * step).take_while(|v| *v <= hi + 1e-9 * step).collect()
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#17becf"];

/// Renders channel `channel` of every table against its first column.
pub fn render(tables: &[Table], channel: &str) -> Result<String, String> {
    let mut series = Vec::new();
    for t in tables {
        let c = t.channel(channel)?;
        if t.columns[0].is_empty() {
            return Err(format!("{} has no rows", t.name));
        }
        series.push((t, c));
    }
    let (w, h) = (720.0, 440.0);
    let (ml, mr, mt, mb) = (90.0, 20.0, 20.0, 60.0);
    let mut x0 = f64::INFINITY;
    let mut x1 = f64::NEG_INFINITY;
    let mut y0 = f64::INFINITY;
    let mut y1 = f64::NEG_INFINITY;
    for (t, c) in &series {
        for (x, y) in t.columns[0].iter().zip(&t.columns[*c]) {
            x0 = x0.min(*x);
            x1 = x1.max(*x);
            y0 = y0.min(*y);
            y1 = y1.max(*y);
        }
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        let pad = if y0 == 0.0 { 1.0 } else { 0.01 * y0.abs() };
        y0 -= pad;
        y1 += pad;
    }
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let sy = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<rect x="{ml}" y="{mt}" width="{}" height="{}" fill="none" stroke="black"/>"#, w - ml - mr, h - mt - mb);
    for tx in ticks(x0, x1) {
        let x = sx(tx);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="black"/>"#, h - mb, h - mb + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{tx:.3e}</text>"#, h - mb + 18.0);
    }
    for ty in ticks(y0, y1) {
        let y = sy(ty);
        let _ = writeln!(s, r#"<line x1="{}" y1="{y:.2}" x2="{ml}" y2="{y:.2}" stroke="black"/>"#, ml - 5.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{ty:.3e}</text>"#, ml - 8.0, y + 4.0);
    }
    let (t0, c0) = series[0];
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, ml + 0.5 * (w - ml - mr), h - 15.0, xml(&t0.headers[0]));
    let _ = writeln!(s, r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#, mt + 0.5 * (h - mt - mb), mt + 0.5 * (h - mt - mb), xml(&t0.headers[c0]));
    for (i, (t, c)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = t.columns[0].iter().zip(&t.columns[*c]).map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let ly = mt + 18.0 + 16.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, w - mr - 150.0, w - mr - 130.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, w - mr - 125.0, ly + 4.0, xml(&t.name));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
