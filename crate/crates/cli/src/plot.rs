//! Minimal SVG charts: line plots for PR/ROC curves and a scatterplot.

use std::fmt::Write as _;

const W: f64 = 480.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

pub const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// One polyline with an optional highlighted point.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub color: String,
    pub points: Vec<(f64, f64)>,
    pub highlight: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScatterPoint {
    pub x: f64,
    pub y: f64,
    pub color: String,
    /// Drawn with an extra ring (e.g. a misclassified case).
    pub marked: bool,
}

struct Frame {
    x_max: f64,
    y_max: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + x / self.x_max * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - y / self.y_max * (H - TOP - BOTTOM)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn open(svg: &mut String, frame: &Frame, title: &str, x_label: &str, y_label: &str) {
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let (x0, x1, y0, y1) = (
        frame.px(0.0),
        frame.px(frame.x_max),
        frame.py(0.0),
        frame.py(frame.y_max),
    );
    let _ = writeln!(
        svg,
        r#"<path d="M{x0:.2},{y1:.2} L{x0:.2},{y0:.2} L{x1:.2},{y0:.2}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        let (vx, vy) = (t * frame.x_max, t * frame.y_max);
        let (gx, gy) = (frame.px(vx), frame.py(vy));
        let _ = writeln!(
            svg,
            r#"<line x1="{gx:.2}" y1="{y0:.2}" x2="{gx:.2}" y2="{:.2}" stroke="black"/>"#,
            y0 + 4.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{gx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y0 + 18.0,
            tick(vx)
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{gy:.2}" x2="{x0:.2}" y2="{gy:.2}" stroke="black"/>"#,
            x0 - 4.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 7.0,
            gy + 4.0,
            tick(vy)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn tick(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn legend(svg: &mut String, entries: &[(String, String)]) {
    for (i, (name, color)) in entries.iter().enumerate() {
        let y = TOP + 8.0 + i as f64 * 16.0;
        let x = W - RIGHT - 150.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{x:.2}" y="{:.2}" width="10" height="10" fill="{color}"/>"#,
            y - 9.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{y:.2}">{}</text>"#,
            x + 15.0,
            escape(name)
        );
    }
}

/// Line chart on the unit square.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let frame = Frame {
        x_max: 1.0,
        y_max: 1.0,
    };
    let mut svg = String::new();
    open(&mut svg, &frame, title, x_label, y_label);
    for s in series {
        if s.points.len() > 1 {
            let d: Vec<String> = s
                .points
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| {
                    format!(
                        "{}{:.2},{:.2}",
                        if i == 0 { 'M' } else { 'L' },
                        frame.px(x),
                        frame.py(y)
                    )
                })
                .collect();
            let _ = writeln!(
                svg,
                r#"<path d="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
                d.join(" "),
                s.color
            );
        }
        for &(x, y) in &s.points {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}"/>"#,
                frame.px(x),
                frame.py(y),
                s.color
            );
        }
        if let Some((x, y)) = s.highlight {
            let (cx, cy) = (frame.px(x), frame.py(y));
            let _ = writeln!(
                svg,
                r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="7" fill="none" stroke="{}" stroke-width="2"/>"#,
                s.color
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" fill="{}">selected ({x:.3}, {y:.3})</text>"#,
                cx + 9.0,
                cy - 9.0,
                s.color
            );
        }
    }
    let entries: Vec<(String, String)> = series
        .iter()
        .map(|s| (s.name.clone(), s.color.clone()))
        .collect();
    legend(&mut svg, &entries);
    svg.push_str("</svg>\n");
    svg
}

/// Scatterplot with both axes starting at 0 and sharing one scale, plus the
/// `y = x` diagonal.
pub fn scatter_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    points: &[ScatterPoint],
    legend_entries: &[(String, String)],
) -> String {
    let top = points.iter().fold(0.0f64, |m, p| m.max(p.x).max(p.y));
    let max = if top > 0.0 { top * 1.05 } else { 1.0 };
    let frame = Frame {
        x_max: max,
        y_max: max,
    };
    let mut svg = String::new();
    open(&mut svg, &frame, title, x_label, y_label);
    let _ = writeln!(
        svg,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
        frame.px(0.0),
        frame.py(0.0),
        frame.px(max),
        frame.py(max)
    );
    for p in points {
        let (cx, cy) = (frame.px(p.x), frame.py(p.y));
        let _ = writeln!(
            svg,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="3" fill="{}"/>"#,
            p.color
        );
        if p.marked {
            let _ = writeln!(
                svg,
                r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="7" fill="none" stroke="black"/>"#
            );
        }
    }
    legend(&mut svg, legend_entries);
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_series_draws_a_marker() {
        let svg = line_plot(
            "t",
            "x",
            "y",
            &[Series {
                name: "a".into(),
                color: PALETTE[0].into(),
                points: vec![(0.5, 0.5)],
                highlight: Some((0.5, 0.5)),
            }],
        );
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(!svg.contains("<path d=\"M") || svg.matches("<path").count() == 1);
    }

    #[test]
    fn scatter_counts_points() {
        let pts: Vec<ScatterPoint> = (0..5)
            .map(|i| ScatterPoint {
                x: i as f64,
                y: i as f64,
                color: "red".into(),
                marked: i == 2,
            })
            .collect();
        let svg = scatter_plot("s", "a", "b", &pts, &[]);
        assert_eq!(svg.matches("r=\"3\"").count(), 5);
        assert_eq!(svg.matches("r=\"7\"").count(), 1);
    }
}
