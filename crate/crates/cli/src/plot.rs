//! Deterministic SVG band plots of realised portfolio returns against the
//! VaR/ES forecasts, one per split.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

/// One test day of a split's portfolio series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub date: NaiveDate,
    #[serde(rename = "return")]
    pub ret: f64,
    pub var: f64,
    pub es: f64,
    pub hvar_var: f64,
    pub hit: u8,
}

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 16.0;
const MARGIN_TOP: f64 = 36.0;
const MARGIN_BOTTOM: f64 = 40.0;

struct Frame {
    n: usize,
    lo: f64,
    hi: f64,
}

impl Frame {
    fn x(&self, i: usize) -> f64 {
        let span = (self.n.max(2) - 1) as f64;
        MARGIN_LEFT + (WIDTH - MARGIN_LEFT - MARGIN_RIGHT) * i as f64 / span
    }

    fn y(&self, v: f64) -> f64 {
        MARGIN_TOP + (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM) * (self.hi - v) / (self.hi - self.lo)
    }
}

fn polyline(out: &mut String, frame: &Frame, values: impl Iterator<Item = f64>, class: &str) {
    let pts: Vec<String> = values
        .enumerate()
        .map(|(i, v)| format!("{:.2},{:.2}", frame.x(i), frame.y(v)))
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline class="{class}" points="{}"/>"#,
        pts.join(" ")
    );
}

/// Renders one split. Each violation gets exactly one `x` marker.
pub fn render(title: &str, rows: &[SeriesRow]) -> String {
    let mut lo = rows
        .iter()
        .map(|r| r.ret.min(r.es).min(r.hvar_var))
        .fold(f64::INFINITY, f64::min);
    let mut hi = rows.iter().map(|r| r.ret).fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
        lo = -1.0;
        hi = 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let frame = Frame {
        n: rows.len(),
        lo: lo - pad,
        hi: hi + pad,
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    s.push_str(concat!(
        "<style>",
        ".ret{fill:none;stroke:#555;stroke-width:1}",
        ".var{fill:none;stroke:#d62728;stroke-width:1.5}",
        ".es{fill:none;stroke:#9467bd;stroke-width:1.5}",
        ".hvar{fill:none;stroke:#1f77b4;stroke-width:1;stroke-dasharray:6 4}",
        ".hit{stroke:#000;stroke-width:2}",
        ".axis{stroke:#000;stroke-width:1}",
        ".grid{stroke:#ddd;stroke-width:1}",
        "</style>\n"
    ));
    let _ = writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );

    let ticks = 5;
    for k in 0..=ticks {
        let v = frame.lo + (frame.hi - frame.lo) * k as f64 / ticks as f64;
        let y = frame.y(v);
        let _ = writeln!(
            s,
            r#"<line class="grid" x1="{MARGIN_LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}"/><text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}%</text>"#,
            WIDTH - MARGIN_RIGHT,
            MARGIN_LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<line class="axis" x1="{MARGIN_LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#,
        HEIGHT - MARGIN_BOTTOM,
        WIDTH - MARGIN_RIGHT,
        HEIGHT - MARGIN_BOTTOM
    );
    if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
        let _ = writeln!(
            s,
            r#"<text x="{MARGIN_LEFT}" y="{:.2}">{}</text><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            HEIGHT - MARGIN_BOTTOM + 18.0,
            first.date,
            WIDTH - MARGIN_RIGHT,
            HEIGHT - MARGIN_BOTTOM + 18.0,
            last.date
        );
    }

    polyline(&mut s, &frame, rows.iter().map(|r| r.ret), "ret");
    polyline(&mut s, &frame, rows.iter().map(|r| r.hvar_var), "hvar");
    polyline(&mut s, &frame, rows.iter().map(|r| r.var), "var");
    polyline(&mut s, &frame, rows.iter().map(|r| r.es), "es");
    for (i, r) in rows.iter().enumerate().filter(|(_, r)| r.hit == 1) {
        let (x, y) = (frame.x(i), frame.y(r.ret));
        let _ = writeln!(
            s,
            r#"<path class="hit" d="M{:.2},{:.2}L{:.2},{:.2}M{:.2},{:.2}L{:.2},{:.2}"/>"#,
            x - 4.0,
            y - 4.0,
            x + 4.0,
            y + 4.0,
            x - 4.0,
            y + 4.0,
            x + 4.0,
            y - 4.0
        );
    }

    let legend = [
        ("ret", "return"),
        ("var", "VaR"),
        ("es", "ES"),
        ("hvar", "HVaR"),
    ];
    for (k, (class, label)) in legend.iter().enumerate() {
        let x = MARGIN_LEFT + 10.0 + 90.0 * k as f64;
        let y = MARGIN_TOP + 10.0;
        let _ = writeln!(
            s,
            r#"<line class="{class}" x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}"/><text x="{:.2}" y="{:.2}">{label}</text>"#,
            x + 20.0,
            x + 24.0,
            y + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub fn read_series(path: &Path) -> Result<Vec<SeriesRow>, csv::Error> {
    csv::Reader::from_path(path)?.deserialize().collect()
}

pub fn write_series(path: &Path, rows: &[SeriesRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Renders `series/*.csv` under `out_dir` into `plots/*.svg`. Unreadable
/// series are logged and skipped.
pub fn emit_plots(out_dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let series_dir = out_dir.join("series");
    let plot_dir = out_dir.join("plots");
    fs::create_dir_all(&plot_dir)?;
    let mut inputs: Vec<PathBuf> = fs::read_dir(&series_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    inputs.sort();
    let mut written = Vec::new();
    for input in inputs {
        let stem = input
            .file_stem()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        match read_series(&input) {
            Ok(rows) => {
                let hits = rows.iter().filter(|r| r.hit == 1).count();
                let title = format!("{stem}: portfolio return vs VaR/ES ({hits} violations)");
                let path = plot_dir.join(format!("{stem}.svg"));
                fs::write(&path, render(&title, &rows))?;
                written.push(path);
            }
            Err(e) => log::warn!("skipping plot for {}: {e}", input.display()),
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(hits: &[usize]) -> Vec<SeriesRow> {
        let d0 = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
        (0..50)
            .map(|i| SeriesRow {
                date: d0 + chrono::Duration::days(i as i64),
                ret: if hits.contains(&i) {
                    -3.0
                } else {
                    0.1 * (i as f64).sin()
                },
                var: -2.0,
                es: -2.6,
                hvar_var: -2.2,
                hit: u8::from(hits.contains(&i)),
            })
            .collect()
    }

    #[test]
    fn one_marker_per_violation() {
        assert_eq!(render("t", &rows(&[])).matches(r#"class="hit""#).count(), 0);
        let svg = render("t", &rows(&[3, 10, 40]));
        assert_eq!(svg.matches(r#"<path class="hit""#).count(), 3);
    }

    #[test]
    fn rendering_is_deterministic() {
        assert_eq!(render("x", &rows(&[1])), render("x", &rows(&[1])));
    }

    #[test]
    fn series_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let r = rows(&[2]);
        write_series(&p, &r).unwrap();
        assert_eq!(read_series(&p).unwrap(), r);
    }
}
