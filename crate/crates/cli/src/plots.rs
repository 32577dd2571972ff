//! Minimal static SVG line plots.

use std::fmt::Write as _;

use mampc_core::ClosedLoopLog;

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

pub struct Panel {
    pub y_label: String,
    pub series: Vec<Series>,
}

const WIDTH: f64 = 720.0;
const PANEL_HEIGHT: f64 = 220.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 40.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Panels stacked vertically sharing the x axis label.
pub fn render(title: &str, x_label: &str, panels: &[Panel]) -> String {
    let height = MARGIN_T + panels.len() as f64 * (PANEL_HEIGHT + MARGIN_B);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    for (i, panel) in panels.iter().enumerate() {
        let top = MARGIN_T + i as f64 * (PANEL_HEIGHT + MARGIN_B);
        draw_panel(&mut svg, panel, top, x_label);
    }
    svg.push_str("</svg>\n");
    svg
}

fn draw_panel(svg: &mut String, panel: &Panel, top: f64, x_label: &str) {
    let pts = || panel.series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts().filter(|(x, y)| x.is_finite() && y.is_finite()) {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 <= 0.0 {
        x1 = x0 + 1.0;
    }
    let pad = if y1 > y0 { 0.05 * (y1 - y0) } else { 0.5f64.max(0.05 * y0.abs()) };
    y0 -= pad;
    y1 += pad;

    let (left, right, bottom) = (MARGIN_L, WIDTH - MARGIN_R, top + PANEL_HEIGHT);
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * (right - left);
    let sy = |y: f64| bottom - (y - y0) / (y1 - y0) * PANEL_HEIGHT;

    let _ = writeln!(
        svg,
        r##"<rect x="{left}" y="{top}" width="{}" height="{PANEL_HEIGHT}" fill="none" stroke="#444"/>"##,
        right - left
    );
    for t in 0..=4 {
        let f = t as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, sx(xv), bottom + 14.0, tick(xv));
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, left - 4.0, sy(yv) + 4.0, tick(yv));
        let _ = writeln!(
            svg,
            r##"<line x1="{left}" x2="{right}" y1="{0:.1}" y2="{0:.1}" stroke="#ddd"/>"##,
            sy(yv)
        );
    }
    let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (left + right) / 2.0, bottom + 30.0, escape(x_label));
    let _ = writeln!(
        svg,
        r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        top + PANEL_HEIGHT / 2.0,
        escape(&panel.y_label)
    );

    for (j, s) in panel.series.iter().enumerate() {
        let color = COLORS[j % COLORS.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
            path.join(" ")
        );
        let ly = top + 14.0 + 14.0 * j as f64;
        let _ = writeln!(svg, r#"<line x1="{:.1}" x2="{:.1}" y1="{ly:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"{dash}/>"#, right - 110.0, right - 90.0);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, right - 85.0, ly + 4.0, escape(&s.name));
    }
}

fn tick(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Staircase points so held inputs plot as steps.
fn stairs(xs: &[f64], ys: &[f64]) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(2 * xs.len());
    for i in 0..xs.len() {
        if i > 0 {
            out.push((xs[i], ys[i - 1]));
        }
        out.push((xs[i], ys[i]));
    }
    out
}

pub fn inputs_svg(log: &ClosedLoopLog, title: &str) -> String {
    let steps: Vec<f64> = log.rows.iter().map(|r| r.step as f64).collect();
    let panels = (0..log.inputs())
        .map(|c| {
            let u: Vec<f64> = log.rows.iter().map(|r| r.input[c]).collect();
            Panel {
                y_label: format!("u{}", c + 1),
                series: vec![Series { name: format!("u{}", c + 1), points: stairs(&steps, &u), dashed: false }],
            }
        })
        .collect::<Vec<_>>();
    render(title, "step", &panels)
}

pub fn outputs_svg(log: &ClosedLoopLog, title: &str) -> String {
    let panels = (0..log.outputs())
        .map(|c| {
            let pts = |f: &dyn Fn(&mampc_core::LogRow) -> f64| log.rows.iter().map(|r| (r.step as f64, f(r))).collect();
            Panel {
                y_label: format!("y{}", c + 1),
                series: vec![
                    Series { name: format!("y{}", c + 1), points: pts(&|r| r.output[c]), dashed: false },
                    Series { name: format!("r{}", c + 1), points: pts(&|r| r.reference[c]), dashed: true },
                ],
            }
        })
        .collect::<Vec<_>>();
    render(title, "step", &panels)
}
