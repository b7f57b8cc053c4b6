//! Minimal hand-rolled SVG charts: enough to eyeball a channel trace or an
//! empirical CDF without pulling in a plotting stack.

use std::fmt::Write as _;
use std::path::Path;

use crate::CliError;

const W: f64 = 720.0;
const H: f64 = 360.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 4] = ["#1f6fb2", "#c44e52", "#3a923a", "#8172b2"];

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn from_series(series: &[(&str, Vec<(f64, f64)>)]) -> Frame {
        let mut f = Frame {
            x_min: f64::INFINITY,
            x_max: f64::NEG_INFINITY,
            y_min: f64::INFINITY,
            y_max: f64::NEG_INFINITY,
        };
        for (_, pts) in series {
            for &(x, y) in pts {
                f.x_min = f.x_min.min(x);
                f.x_max = f.x_max.max(x);
                f.y_min = f.y_min.min(y);
                f.y_max = f.y_max.max(y);
            }
        }
        // Degenerate spans still need a drawable box.
        if !(f.x_max > f.x_min) {
            f.x_max = f.x_min + 1.0;
        }
        if !(f.y_max > f.y_min) {
            f.y_max = f.y_min + 1.0;
        }
        let pad = 0.05 * (f.y_max - f.y_min);
        f.y_min -= pad;
        f.y_max += pad;
        f
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x_min) / (self.x_max - self.x_min) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y_min) / (self.y_max - self.y_min) * (H - 2.0 * MARGIN)
    }
}

fn render(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(&str, Vec<(f64, f64)>)],
    step: bool,
) -> String {
    let frame = Frame::from_series(series);
    let mut s = String::new();
    let _ = write!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>",
        W - 2.0 * MARGIN,
        H - 2.0 * MARGIN
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>",
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
        W / 2.0,
        H - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{}</text>",
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );

    // Axis ticks: 5 per axis, printed with short general formatting.
    for i in 0..=4 {
        let fx = frame.x_min + (frame.x_max - frame.x_min) * i as f64 / 4.0;
        let fy = frame.y_min + (frame.y_max - frame.y_min) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" fill=\"#444\">{}</text>",
            frame.px(fx),
            H - MARGIN + 16.0,
            tick(fx)
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" fill=\"#444\">{}</text>",
            MARGIN - 6.0,
            frame.py(fy) + 4.0,
            tick(fy)
        );
    }

    for (k, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut path = String::new();
        let mut prev_y: Option<f64> = None;
        for (i, &(x, y)) in pts.iter().enumerate() {
            let (px, py) = (frame.px(x), frame.py(y));
            if i == 0 {
                let _ = write!(path, "M{px:.1},{py:.1}");
            } else if step {
                // ECDFs are staircases: hold the previous level to this x.
                let _ = write!(path, " L{px:.1},{:.1} L{px:.1},{py:.1}", prev_y.unwrap());
            } else {
                let _ = write!(path, " L{px:.1},{py:.1}");
            }
            prev_y = Some(py);
        }
        let _ = writeln!(
            s,
            "<path d=\"{path}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>"
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\">{}</text>",
            W - MARGIN - 150.0,
            MARGIN + 16.0 + 16.0 * k as f64,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1000.0 || v.abs() < 0.01 {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One or more (x, y) traces on shared axes.
pub fn line_chart(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(&str, Vec<(f64, f64)>)],
) -> Result<(), CliError> {
    std::fs::write(path, render(title, x_label, y_label, series, false))?;
    Ok(())
}

/// Empirical CDF staircases of one or more samples on shared axes.
pub fn ecdf_chart(
    path: &Path,
    title: &str,
    x_label: &str,
    samples: &[(&str, &[f64])],
) -> Result<(), CliError> {
    let series: Vec<(&str, Vec<(f64, f64)>)> = samples
        .iter()
        .map(|(name, xs)| {
            let mut sorted: Vec<f64> = xs.to_vec();
            sorted.sort_by(|a, b| a.total_cmp(b));
            let n = sorted.len().max(1) as f64;
            let pts = sorted
                .iter()
                .enumerate()
                .map(|(i, &x)| (x, (i + 1) as f64 / n))
                .collect();
            (*name, pts)
        })
        .collect();
    std::fs::write(path, render(title, x_label, "fraction ≤ x", &series, true))?;
    Ok(())
}
