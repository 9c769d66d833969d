//! Minimal SVG rendering: a two-tone heatmap and a multi-series line chart.
//! Hand-rolled so report artifacts stay dependency-free and byte-stable.

use crate::error::{Error, Result};

const FONT: &str = "font-family=\"monospace\" font-size=\"11\"";

fn fmt(v: f64) -> String {
    // Fixed-precision coordinates keep output byte-identical across runs.
    format!("{v:.2}")
}

fn esc(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Linear blue (low) to red (high) ramp through white.
fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let (r, g, b) = if t < 0.5 {
        let u = t / 0.5;
        (
            (59.0 + u * (255.0 - 59.0)) as u8,
            (76.0 + u * (255.0 - 76.0)) as u8,
            (192.0 + u * (255.0 - 192.0)) as u8,
        )
    } else {
        let u = (t - 0.5) / 0.5;
        (
            255.0 as u8,
            (255.0 - u * (255.0 - 68.0)) as u8,
            (255.0 - u * (255.0 - 53.0)) as u8,
        )
    };
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Heatmap over `values[row][col]` with row/column labels and a legend bar.
pub fn heatmap_svg(
    title: &str,
    row_labels: &[String],
    col_labels: &[String],
    values: &[Vec<f64>],
) -> Result<String> {
    if values.len() != row_labels.len()
        || values.iter().any(|r| r.len() != col_labels.len())
        || row_labels.is_empty()
        || col_labels.is_empty()
    {
        return Err(Error::Input("heatmap shape does not match its labels".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for row in values {
        for &v in row {
            if !v.is_finite() {
                return Err(Error::NonFinite("heatmap encountered a non-finite value".into()));
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let span = if hi > lo { hi - lo } else { 1.0 };

    let cell = 14.0;
    let left = 8.0 * (row_labels.iter().map(|l| l.len()).max().unwrap_or(0) as f64) + 16.0;
    let top = 8.0 * (col_labels.iter().map(|l| l.len()).max().unwrap_or(0) as f64) + 40.0;
    let grid_w = cell * col_labels.len() as f64;
    let grid_h = cell * row_labels.len() as f64;
    let width = left + grid_w + 90.0;
    let height = top + grid_h + 24.0;

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n",
        fmt(width), fmt(height), fmt(width), fmt(height)
    ));
    s.push_str(&format!("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"));
    s.push_str(&format!("<text x=\"{}\" y=\"18\" {FONT} font-size=\"14\">{}</text>\n", fmt(left), esc(title)));
    for (j, label) in col_labels.iter().enumerate() {
        let x = left + cell * (j as f64 + 0.5);
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" {FONT} text-anchor=\"start\" transform=\"rotate(-60 {} {})\">{}</text>\n",
            fmt(x), fmt(top - 4.0), fmt(x), fmt(top - 4.0), esc(label)
        ));
    }
    for (i, label) in row_labels.iter().enumerate() {
        let y = top + cell * (i as f64 + 0.5) + 4.0;
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" {FONT} text-anchor=\"end\">{}</text>\n",
            fmt(left - 6.0), fmt(y), esc(label)
        ));
        for (j, &v) in values[i].iter().enumerate() {
            let x = left + cell * j as f64;
            s.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"><title>{}</title></rect>\n",
                fmt(x), fmt(top + cell * i as f64), fmt(cell), fmt(cell),
                ramp((v - lo) / span),
                esc(&format!("{} / {}: {v}", row_labels[i], col_labels[j])),
            ));
        }
    }
    // Legend: vertical ramp with min/max annotations.
    let lx = left + grid_w + 20.0;
    let steps = 32;
    let lh = grid_h.min(140.0).max(40.0);
    for k in 0..steps {
        let t = 1.0 - k as f64 / (steps - 1) as f64;
        s.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"{}\" fill=\"{}\"/>\n",
            fmt(lx), fmt(top + lh * k as f64 / steps as f64), fmt(lh / steps as f64 + 0.5), ramp(t)
        ));
    }
    s.push_str(&format!("<text x=\"{}\" y=\"{}\" {FONT}>{hi:.3}</text>\n", fmt(lx + 16.0), fmt(top + 10.0)));
    s.push_str(&format!("<text x=\"{}\" y=\"{}\" {FONT}>{lo:.3}</text>\n", fmt(lx + 16.0), fmt(top + lh)));
    s.push_str("</svg>\n");
    Ok(s)
}

pub struct LineSeries {
    pub label: String,
    /// (x, y) points, plotted in the order given.
    pub points: Vec<(f64, f64)>,
}

const SERIES_COLORS: &[&str] = &["#1b6ca8", "#c0392b", "#2e8b57", "#8e44ad", "#d4881e", "#3a3a3a"];

/// Multi-series line chart with axes, tick labels and a legend.
pub fn line_chart_svg(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[LineSeries],
) -> Result<String> {
    if series.is_empty() || series.iter().any(|s| s.points.is_empty()) {
        return Err(Error::Input("line chart needs at least one non-empty series".into()));
    }
    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for &(x, y) in &s.points {
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::NonFinite("line chart encountered a non-finite point".into()));
            }
            x_lo = x_lo.min(x);
            x_hi = x_hi.max(x);
            y_lo = y_lo.min(y);
            y_hi = y_hi.max(y);
        }
    }
    if x_hi == x_lo {
        x_hi = x_lo + 1.0;
    }
    if y_hi == y_lo {
        y_hi = y_lo + 1.0;
    }

    let (width, height) = (560.0, 360.0);
    let (left, right, top, bottom) = (64.0, 150.0, 40.0, 48.0);
    let pw = width - left - right;
    let ph = height - top - bottom;
    let px = |x: f64| left + (x - x_lo) / (x_hi - x_lo) * pw;
    let py = |y: f64| top + (1.0 - (y - y_lo) / (y_hi - y_lo)) * ph;

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    s.push_str(&format!("<text x=\"{}\" y=\"20\" {FONT} font-size=\"14\">{}</text>\n", fmt(left), esc(title)));
    s.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>\n",
        fmt(left), fmt(top), fmt(pw), fmt(ph)
    ));
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let xv = x_lo + t * (x_hi - x_lo);
        let yv = y_lo + (1.0 - t) * (y_hi - y_lo);
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" {FONT} text-anchor=\"middle\">{xv:.2}</text>\n",
            fmt(px(xv)), fmt(top + ph + 16.0)
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" {FONT} text-anchor=\"end\">{yv:.2}</text>\n",
            fmt(left - 6.0), fmt(py(yv) + 4.0)
        ));
        s.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#ddd\"/>\n",
            fmt(left), fmt(py(yv)), fmt(left + pw), fmt(py(yv))
        ));
    }
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" {FONT} text-anchor=\"middle\">{}</text>\n",
        fmt(left + pw / 2.0), fmt(height - 12.0), esc(x_label)
    ));
    s.push_str(&format!(
        "<text x=\"16\" y=\"{}\" {FONT} transform=\"rotate(-90 16 {})\" text-anchor=\"middle\">{}</text>\n",
        fmt(top + ph / 2.0), fmt(top + ph / 2.0), esc(y_label)
    ));
    for (i, sr) in series.iter().enumerate() {
        let color = SERIES_COLORS[i % SERIES_COLORS.len()];
        let path: Vec<String> =
            sr.points.iter().map(|&(x, y)| format!("{},{}", fmt(px(x)), fmt(py(y)))).collect();
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            path.join(" ")
        ));
        for &(x, y) in &sr.points {
            s.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"2.5\" fill=\"{color}\"/>\n",
                fmt(px(x)), fmt(py(y))
            ));
        }
        let ly = top + 14.0 * i as f64 + 8.0;
        s.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            fmt(left + pw + 10.0), fmt(ly), fmt(left + pw + 28.0), fmt(ly)
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" {FONT}>{}</text>\n",
            fmt(left + pw + 32.0), fmt(ly + 4.0), esc(&sr.label)
        ));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_renders_all_cells() {
        let svg = heatmap_svg(
            "demo",
            &["a".into(), "b".into()],
            &["x".into(), "y".into(), "z".into()],
            &[vec![0.0, 0.5, 1.0], vec![-1.0, 0.0, 2.0]],
        )
        .unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<rect").count() - 1 - 32, 6); // cells = total - bg - legend
        assert!(svg.contains("2.000") && svg.contains("-1.000"));
        assert!(heatmap_svg("bad", &["a".into()], &["x".into()], &[vec![f64::NAN]]).is_err());
        assert!(heatmap_svg("bad", &["a".into()], &["x".into()], &[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn line_chart_is_deterministic() {
        let series = vec![
            LineSeries { label: "one".into(), points: vec![(0.0, 1.0), (1.0, 0.5), (2.0, 0.25)] },
            LineSeries { label: "two".into(), points: vec![(0.0, 0.0), (2.0, 1.0)] },
        ];
        let a = line_chart_svg("t", "x", "y", &series).unwrap();
        let b = line_chart_svg("t", "x", "y", &series).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.matches("<polyline").count(), 2);
        assert!(a.contains(">one<") && a.contains(">two<"));
        assert!(line_chart_svg("t", "x", "y", &[]).is_err());
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(0.0), "#3b4cc0");
        assert_eq!(ramp(0.5), "#ffffff");
        assert_eq!(ramp(1.0), "#ff4435");
        assert_eq!(ramp(-3.0), ramp(0.0));
    }
}
