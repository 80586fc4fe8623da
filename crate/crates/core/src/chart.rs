//! Minimal SVG line and bar charts for experiment summaries.

use std::fmt::Write as _;

use crate::error::{Result, SkiError};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

/// One point of a line chart. `u` is the axis coordinate (already
/// log-transformed for log axes); `label` is the tick text.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartPoint {
    pub u: f64,
    pub label: String,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Recorded on the axis element; coordinates are supplied by the caller.
    pub x_scale: &'static str,
    pub points: Vec<ChartPoint>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn y_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if (hi - lo).abs() < 1e-12 {
        (lo - 1.0, hi + 1.0)
    } else {
        let pad = 0.1 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn header(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 12.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
}

fn y_axis(out: &mut String, lo: f64, hi: f64, py: &dyn Fn(f64) -> f64) {
    let _ = writeln!(out, r#"<g class="y-axis">"#);
    let _ = writeln!(out, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/>"#, HEIGHT - BOTTOM);
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let y = py(v);
        let _ = writeln!(out, r#"<line x1="{}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/>"#, LEFT - 4.0);
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.2}</text>"#, LEFT - 6.0, y + 4.0);
    }
    let _ = writeln!(out, "</g>");
}

impl LineChart {
    pub fn render(&self) -> Result<String> {
        if self.points.is_empty() {
            return Err(SkiError::arg("points", "nothing to plot"));
        }
        if self.points.iter().any(|p| !p.u.is_finite() || !p.y.is_finite()) {
            return Err(SkiError::Degenerate("non-finite chart point".into()));
        }
        let (umin, umax) = self.points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.u), b.max(p.u)));
        let span = if umax > umin { umax - umin } else { 1.0 };
        let plot_w = WIDTH - LEFT - RIGHT;
        let plot_h = HEIGHT - TOP - BOTTOM;
        let px = |u: f64| LEFT + (u - umin) / span * plot_w;
        let (lo, hi) = y_range(self.points.iter().map(|p| p.y));
        let py = |y: f64| TOP + (hi - y) / (hi - lo) * plot_h;

        let mut out = String::new();
        header(&mut out, &self.title, &self.x_label, &self.y_label);
        let _ = writeln!(out, r#"<g class="x-axis" data-scale="{}">"#, self.x_scale);
        let _ = writeln!(out, r#"<line x1="{LEFT}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, TOP + plot_h, LEFT + plot_w, TOP + plot_h);
        for p in &self.points {
            let x = px(p.u);
            let _ = writeln!(out, r#"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="black"/>"#, TOP + plot_h, TOP + plot_h + 4.0);
            let _ = writeln!(out, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, TOP + plot_h + 18.0, escape(&p.label));
        }
        let _ = writeln!(out, "</g>");
        y_axis(&mut out, lo, hi, &py);
        let path: Vec<String> = self.points.iter().map(|p| format!("{:.2},{:.2}", px(p.u), py(p.y))).collect();
        let _ = writeln!(out, r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#, path.join(" "));
        for p in &self.points {
            let _ = writeln!(
                out,
                r#"<circle class="point" cx="{:.2}" cy="{:.2}" r="3" fill="steelblue" data-x="{}" data-y="{}"/>"#,
                px(p.u),
                py(p.y),
                escape(&p.label),
                p.y
            );
        }
        out.push_str("</svg>\n");
        Ok(out)
    }
}

/// Bars with optional error whiskers.
#[derive(Debug, Clone, PartialEq)]
pub struct BarChart {
    pub title: String,
    pub y_label: String,
    /// `(label, value, spread)`.
    pub bars: Vec<(String, f64, f64)>,
}

impl BarChart {
    pub fn render(&self) -> Result<String> {
        if self.bars.is_empty() {
            return Err(SkiError::arg("bars", "nothing to plot"));
        }
        if self.bars.iter().any(|(_, v, s)| !v.is_finite() || !s.is_finite()) {
            return Err(SkiError::Degenerate("non-finite bar".into()));
        }
        let plot_w = WIDTH - LEFT - RIGHT;
        let plot_h = HEIGHT - TOP - BOTTOM;
        let hi = self.bars.iter().map(|(_, v, s)| v + s).fold(0.0, f64::max);
        let lo = self.bars.iter().map(|(_, v, s)| v - s).fold(0.0, f64::min);
        let (lo, hi) = if hi > lo { (lo, hi * 1.1) } else { (lo, lo + 1.0) };
        let py = |y: f64| TOP + (hi - y) / (hi - lo) * plot_h;
        let slot = plot_w / self.bars.len() as f64;

        let mut out = String::new();
        header(&mut out, &self.title, "", &self.y_label);
        y_axis(&mut out, lo, hi, &py);
        let _ = writeln!(out, r#"<line x1="{LEFT}" y1="{:.2}" x2="{}" y2="{:.2}" stroke="black"/>"#, py(0.0), LEFT + plot_w, py(0.0));
        for (i, (label, v, s)) in self.bars.iter().enumerate() {
            let x = LEFT + slot * (i as f64 + 0.2);
            let w = slot * 0.6;
            let (top, bottom) = (py(v.max(0.0)), py(v.min(0.0)));
            let _ = writeln!(
                out,
                r#"<rect class="bar" x="{x:.2}" y="{top:.2}" width="{w:.2}" height="{:.2}" fill="steelblue" data-label="{}" data-value="{v}"/>"#,
                bottom - top,
                escape(label)
            );
            let cx = x + w / 2.0;
            if *s > 0.0 {
                let _ = writeln!(out, r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#, py(v + s), py(v - s));
            }
            let _ = writeln!(out, r#"<text x="{cx:.2}" y="{}" text-anchor="middle">{}</text>"#, TOP + plot_h + 18.0, escape(label));
        }
        out.push_str("</svg>\n");
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attr(tag: &str, name: &str) -> f64 {
        let key = format!(r#" {name}=""#);
        let start = tag.find(&key).unwrap() + key.len();
        tag[start..].split('"').next().unwrap().parse().unwrap()
    }

    #[test]
    fn points_are_placed_linearly_in_their_coordinate() {
        let chart = LineChart {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            x_scale: "linear",
            points: (0..4)
                .map(|i| ChartPoint {
                    u: i as f64,
                    label: i.to_string(),
                    y: (i * i) as f64,
                })
                .collect(),
        };
        let svg = chart.render().unwrap();
        let xs: Vec<f64> = svg.lines().filter(|l| l.contains("class=\"point\"")).map(|l| attr(l, "cx")).collect();
        assert_eq!(xs.len(), 4);
        for w in xs.windows(3) {
            assert!(((w[1] - w[0]) - (w[2] - w[1])).abs() < 0.02);
        }
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn labels_are_escaped() {
        let chart = BarChart {
            title: "a<b".into(),
            y_label: "y".into(),
            bars: vec![("x&y".into(), 1.0, 0.1)],
        };
        let svg = chart.render().unwrap();
        assert!(svg.contains("a&lt;b") && svg.contains("x&amp;y"));
        assert!(BarChart { bars: vec![], ..chart }.render().is_err());
    }
}
