//! Minimal SVG plots. Every figure is written next to a CSV holding exactly
//! the plotted numbers.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#555555"];

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Linear,
    /// Values are raw and placed at log10; ticks at powers of ten.
    Log,
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Mark {
    Points,
    Line,
    Dashed,
}

pub struct Series {
    pub name: String,
    pub mark: Mark,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl Series {
    pub fn new(name: impl Into<String>, mark: Mark, xs: Vec<f64>, ys: Vec<f64>) -> Self {
        Series { name: name.into(), mark, xs, ys }
    }
}

pub struct Figure {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_scale: Scale,
    pub y_scale: Scale,
    pub series: Vec<Series>,
}

struct Axis {
    scale: Scale,
    lo: f64,
    hi: f64,
}

impl Axis {
    fn fit(scale: Scale, values: impl Iterator<Item = f64>) -> Axis {
        let t: Vec<f64> = values
            .filter(|v| v.is_finite() && (scale == Scale::Linear || *v > 0.0))
            .map(|v| transform(scale, v))
            .collect();
        let mut lo = t.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.04 * (hi - lo);
        Axis { scale, lo: lo - pad, hi: hi + pad }
    }

    fn frac(&self, v: f64) -> f64 {
        (transform(self.scale, v) - self.lo) / (self.hi - self.lo)
    }

    /// Tick positions in raw units with their labels.
    fn ticks(&self) -> Vec<(f64, String)> {
        match self.scale {
            Scale::Log => {
                let (a, b) = (self.lo.ceil() as i32, self.hi.floor() as i32);
                (a..=b).map(|e| (10f64.powi(e), format!("1e{e}"))).collect()
            }
            Scale::Linear => {
                let span = self.hi - self.lo;
                let raw = span / 5.0;
                let mag = 10f64.powf(raw.log10().floor());
                let step = [1.0, 2.0, 5.0, 10.0]
                    .iter()
                    .map(|m| m * mag)
                    .find(|s| span / s <= 6.0)
                    .unwrap_or(10.0 * mag);
                let first = (self.lo / step).ceil() as i64;
                let last = (self.hi / step).floor() as i64;
                (first..=last)
                    .map(|k| {
                        let v = k as f64 * step;
                        (v, trim_number(v))
                    })
                    .collect()
            }
        }
    }
}

fn transform(scale: Scale, v: f64) -> f64 {
    match scale {
        Scale::Linear => v,
        Scale::Log => v.log10(),
    }
}

fn trim_number(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Figure {
    pub fn render_svg(&self) -> String {
        let xa = Axis::fit(self.x_scale, self.series.iter().flat_map(|s| s.xs.iter().copied()));
        let ya = Axis::fit(self.y_scale, self.series.iter().flat_map(|s| s.ys.iter().copied()));
        let pw = WIDTH - MARGIN_L - MARGIN_R;
        let ph = HEIGHT - MARGIN_T - MARGIN_B;
        let px = |v: f64| MARGIN_L + xa.frac(v) * pw;
        let py = |v: f64| MARGIN_T + (1.0 - ya.frac(v)) * ph;
        let visible = |x: f64, y: f64| {
            x.is_finite()
                && y.is_finite()
                && (self.x_scale == Scale::Linear || x > 0.0)
                && (self.y_scale == Scale::Linear || y > 0.0)
        };

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            MARGIN_L + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="black"/>"#
        );
        for (v, label) in xa.ticks() {
            let x = px(v);
            let y0 = MARGIN_T + ph;
            let _ = writeln!(s, r#"<line x1="{x:.1}" y1="{y0:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/>"#, y0 + 5.0);
            let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{label}</text>"#, y0 + 18.0);
        }
        for (v, label) in ya.ticks() {
            let y = py(v);
            let _ = writeln!(
                s,
                r#"<line x1="{:.1}" y1="{y:.1}" x2="{MARGIN_L}" y2="{y:.1}" stroke="black"/>"#,
                MARGIN_L - 5.0
            );
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{label}</text>"#, MARGIN_L - 8.0, y + 4.0);
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            MARGIN_L + pw / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
            MARGIN_T + ph / 2.0,
            escape(&self.y_label)
        );

        for (k, ser) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let pts: Vec<(f64, f64)> = ser
                .xs
                .iter()
                .zip(&ser.ys)
                .filter(|(x, y)| visible(**x, **y))
                .map(|(x, y)| (px(*x), py(*y)))
                .collect();
            match ser.mark {
                Mark::Points => {
                    for (x, y) in &pts {
                        let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="2" fill="{color}" fill-opacity="0.6"/>"#);
                    }
                }
                Mark::Line | Mark::Dashed => {
                    let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
                    let dash = if ser.mark == Mark::Dashed { r#" stroke-dasharray="5,4""# } else { "" };
                    let _ = writeln!(
                        s,
                        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
                        path.join(" ")
                    );
                }
            }
            let ly = MARGIN_T + 12.0 + 16.0 * k as f64;
            let lx = WIDTH - MARGIN_R + 10.0;
            let _ = writeln!(s, r#"<rect x="{lx:.1}" y="{:.1}" width="10" height="10" fill="{color}"/>"#, ly - 9.0);
            let _ = writeln!(s, r#"<text x="{:.1}" y="{ly:.1}">{}</text>"#, lx + 14.0, escape(&ser.name));
        }
        s.push_str("</svg>\n");
        s
    }

    pub fn render_csv(&self) -> String {
        let mut s = String::from("series,x,y\n");
        for ser in &self.series {
            let name = if ser.name.contains([',', '"']) {
                format!("\"{}\"", ser.name.replace('"', "\"\""))
            } else {
                ser.name.clone()
            };
            for (x, y) in ser.xs.iter().zip(&ser.ys) {
                let _ = writeln!(s, "{name},{x},{y}");
            }
        }
        s
    }

    /// Writes `<stem>.svg` and `<stem>.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<Vec<String>> {
        let svg = dir.join(format!("{stem}.svg"));
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&svg, self.render_svg()).with_context(|| format!("writing {}", svg.display()))?;
        std::fs::write(&csv, self.render_csv()).with_context(|| format!("writing {}", csv.display()))?;
        Ok(vec![format!("{stem}.svg"), format!("{stem}.csv")])
    }
}

/// `points` evenly spaced values from `lo` to `hi` on the given scale.
pub fn grid(lo: f64, hi: f64, points: usize, scale: Scale) -> Vec<f64> {
    let (a, b) = (transform(scale, lo), transform(scale, hi));
    (0..points)
        .map(|i| {
            let t = a + (b - a) * i as f64 / (points - 1).max(1) as f64;
            match scale {
                Scale::Linear => t,
                Scale::Log => 10f64.powf(t),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Figure {
        Figure {
            title: "t".into(),
            x_label: "N".into(),
            y_label: "y".into(),
            x_scale: Scale::Log,
            y_scale: Scale::Linear,
            series: vec![
                Series::new("data", Mark::Points, vec![1e3, 1e5, 1e7], vec![1.0, 2.0, 3.0]),
                Series::new("fit, a", Mark::Line, vec![1e3, 1e7], vec![1.0, 3.0]),
            ],
        }
    }

    #[test]
    fn csv_holds_every_plotted_value() {
        let csv = sample().render_csv();
        assert_eq!(csv.lines().count(), 1 + 3 + 2);
        assert!(csv.contains("\"fit, a\",10000000,3"));
    }

    #[test]
    fn log_ticks_are_powers_of_ten() {
        let svg = sample().render_svg();
        for e in 3..=7 {
            assert!(svg.contains(&format!(">1e{e}<")), "{e}");
        }
        assert_eq!(svg.matches("<circle").count(), 3);
    }

    #[test]
    fn nonpositive_values_are_dropped_on_log_axes() {
        let mut f = sample();
        f.series[0].xs[0] = 0.0;
        assert_eq!(f.render_svg().matches("<circle").count(), 2);
    }

    #[test]
    fn grid_endpoints() {
        let g = grid(10.0, 1000.0, 3, Scale::Log);
        assert!((g[1] - 100.0).abs() < 1e-9 && (g[2] - 1000.0).abs() < 1e-9);
    }
}
