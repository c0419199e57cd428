//! Tiny SVG line-chart writer for loss curves and per-frame MSE plots.
//! No styling knobs beyond what the artifacts need.

use crate::error::{LabError, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Render named series as polylines. X is the sample index (1-based),
/// Y spans the data range with a small pad. Returns the SVG text.
pub fn line_chart(title: &str, y_label: &str, series: &[(String, Vec<f64>)]) -> Result<String> {
    if series.is_empty() || series.iter().any(|(_, v)| v.is_empty()) {
        return Err(LabError::Data("nothing to plot".into()));
    }
    let max_len = series.iter().map(|(_, v)| v.len()).max().unwrap();
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for (_, v) in series {
        for &y in v {
            if !y.is_finite() {
                return Err(LabError::Numeric("non-finite value in plot data".into()));
            }
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
    }
    if y_max == y_min {
        y_max += 1.0;
        y_min -= 1.0;
    }
    let pad = (y_max - y_min) * 0.05;
    y_min -= pad;
    y_max += pad;

    let x_of = |i: usize| {
        if max_len == 1 {
            WIDTH / 2.0
        } else {
            MARGIN + (WIDTH - 2.0 * MARGIN) * i as f64 / (max_len - 1) as f64
        }
    };
    let y_of = |y: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (y - y_min) / (y_max - y_min);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n",
        w = WIDTH,
        h = HEIGHT
    );
    svg.push_str(&format!(
        "<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n",
        WIDTH, HEIGHT
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    ));
    // axes
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
        t = MARGIN
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" transform=\"rotate(-90 16 {})\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    ));
    // y tick labels at min and max
    svg.push_str(&format!(
        "<text x=\"{x}\" y=\"{y}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{v:.3e}</text>\n",
        x = MARGIN - 4.0,
        y = HEIGHT - MARGIN,
        v = y_min
    ));
    svg.push_str(&format!(
        "<text x=\"{x}\" y=\"{y}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{v:.3e}</text>\n",
        x = MARGIN - 4.0,
        y = MARGIN + 4.0,
        v = y_max
    ));

    for (si, (name, vals)) in series.iter().enumerate() {
        let color = COLORS[si % COLORS.len()];
        let points: Vec<String> = vals
            .iter()
            .enumerate()
            .map(|(i, &y)| format!("{:.2},{:.2}", x_of(i), y_of(y)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            color,
            points.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{y}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{c}\">{n}</text>\n",
            x = WIDTH - MARGIN + 4.0,
            y = MARGIN + 14.0 * si as f64,
            c = color,
            n = escape(name)
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
