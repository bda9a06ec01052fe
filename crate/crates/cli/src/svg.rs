//! Minimal deterministic SVG emission: fixed-precision coordinates, no
//! timestamps, stable iteration order, so identical inputs produce
//! byte-identical files.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 48.0;

fn fmt(v: f64) -> String {
    format!("{v:.3}")
}

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <text x=\"{tx}\" y=\"20\" font-family=\"monospace\" font-size=\"13\" text-anchor=\"middle\">{title}</text>\n",
        w = WIDTH,
        h = HEIGHT,
        tx = WIDTH / 2.0,
    )
}

fn axes_labels(out: &mut String, x_label: &str, y_label: &str) {
    writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
        fmt(WIDTH / 2.0),
        fmt(HEIGHT - 8.0),
        x_label
    )
    .unwrap();
    writeln!(
        out,
        "<text x=\"14\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{}</text>",
        fmt(HEIGHT / 2.0),
        fmt(HEIGHT / 2.0),
        y_label
    )
    .unwrap();
}

/// Five-stop blue-to-red colormap over [0, 1].
fn colormap(t: f64) -> String {
    let stops = [
        (33.0, 62.0, 120.0),
        (70.0, 130.0, 180.0),
        (220.0, 220.0, 200.0),
        (235.0, 140.0, 80.0),
        (180.0, 30.0, 40.0),
    ];
    let t = t.clamp(0.0, 1.0) * (stops.len() - 1) as f64;
    let i = (t.floor() as usize).min(stops.len() - 2);
    let f = t - i as f64;
    let mix = |a: f64, b: f64| a + (b - a) * f;
    format!(
        "rgb({},{},{})",
        mix(stops[i].0, stops[i + 1].0).round() as u8,
        mix(stops[i].1, stops[i + 1].1).round() as u8,
        mix(stops[i].2, stops[i + 1].2).round() as u8
    )
}

/// Heatmap over a rectangular grid; `cells` indexed row-major (x outer).
/// Values are normalized to [0, 1] before coloring; None cells stay white.
pub fn heatmap(
    title: &str,
    x_label: &str,
    y_label: &str,
    nx: usize,
    ny: usize,
    cells: &[Option<f64>],
) -> String {
    let mut out = header(title);
    let (lo, hi) = cells
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let cw = (WIDTH - 2.0 * MARGIN) / nx.max(1) as f64;
    let ch = (HEIGHT - 2.0 * MARGIN) / ny.max(1) as f64;
    for ix in 0..nx {
        for iy in 0..ny {
            if let Some(v) = cells[ix * ny + iy] {
                let color = colormap((v - lo) / span);
                // y axis points up.
                writeln!(
                    out,
                    "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>",
                    fmt(MARGIN + ix as f64 * cw),
                    fmt(HEIGHT - MARGIN - (iy + 1) as f64 * ch),
                    fmt(cw + 0.5),
                    fmt(ch + 0.5),
                    color
                )
                .unwrap();
            }
        }
    }
    axes_labels(&mut out, x_label, y_label);
    out.push_str("</svg>\n");
    out
}

/// Overlaid polylines on shared axes.
pub fn lines(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(&str, &[(f64, f64)])],
) -> String {
    let mut out = header(title);
    let mut lo_x = f64::INFINITY;
    let mut hi_x = f64::NEG_INFINITY;
    let mut lo_y = f64::INFINITY;
    let mut hi_y = f64::NEG_INFINITY;
    for (_, pts) in series {
        for &(x, y) in pts.iter() {
            if x.is_finite() && y.is_finite() {
                lo_x = lo_x.min(x);
                hi_x = hi_x.max(x);
                lo_y = lo_y.min(y);
                hi_y = hi_y.max(y);
            }
        }
    }
    if !lo_x.is_finite() {
        axes_labels(&mut out, x_label, y_label);
        out.push_str("</svg>\n");
        return out;
    }
    let span_x = if hi_x > lo_x { hi_x - lo_x } else { 1.0 };
    let span_y = if hi_y > lo_y { hi_y - lo_y } else { 1.0 };
    let to_px = |x: f64, y: f64| {
        (
            MARGIN + (x - lo_x) / span_x * (WIDTH - 2.0 * MARGIN),
            HEIGHT - MARGIN - (y - lo_y) / span_y * (HEIGHT - 2.0 * MARGIN),
        )
    };
    let palette = ["#1f4e8c", "#c23b22", "#2e7d32", "#7b1fa2", "#ef6c00", "#00695c"];
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = palette[i % palette.len()];
        let mut d = String::new();
        for (k, &(x, y)) in pts.iter().enumerate() {
            if !x.is_finite() || !y.is_finite() {
                continue;
            }
            let (px, py) = to_px(x, y);
            write!(d, "{}{},{} ", if k == 0 { "M" } else { "L" }, fmt(px), fmt(py)).unwrap();
        }
        writeln!(
            out,
            "<path d=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.2\"/>",
            d.trim_end(),
            color
        )
        .unwrap();
        writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"10\" fill=\"{}\">{}</text>",
            fmt(WIDTH - MARGIN - 120.0),
            fmt(MARGIN + 14.0 * i as f64),
            color,
            name
        )
        .unwrap();
    }
    // Axis frame and range annotations.
    writeln!(
        out,
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\" stroke-width=\"0.8\"/>",
        fmt(MARGIN),
        fmt(MARGIN),
        fmt(WIDTH - 2.0 * MARGIN),
        fmt(HEIGHT - 2.0 * MARGIN)
    )
    .unwrap();
    writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"9\">[{} , {}]</text>",
        fmt(MARGIN),
        fmt(HEIGHT - MARGIN + 14.0),
        fmt(lo_x),
        fmt(hi_x)
    )
    .unwrap();
    writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"9\">[{} , {}]</text>",
        fmt(MARGIN),
        fmt(MARGIN - 6.0),
        fmt(lo_y),
        fmt(hi_y)
    )
    .unwrap();
    axes_labels(&mut out, x_label, y_label);
    out.push_str("</svg>\n");
    out
}
