//! Minimal hand-written SVG plots.

use std::fmt::Write;

const W: f64 = 720.0;
const H: f64 = 420.0;
const PAD: f64 = 56.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        W / 2.0,
        escape(title)
    )
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * PAD)
    }

    fn axes(&self, out: &mut String, x_label: &str, y_label: &str) {
        let _ = writeln!(out, "<rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>", W - 2.0 * PAD, H - 2.0 * PAD);
        for i in 0..=4 {
            let fy = self.y.0 + (self.y.1 - self.y.0) * i as f64 / 4.0;
            let fx = self.x.0 + (self.x.1 - self.x.0) * i as f64 / 4.0;
            let _ = writeln!(out, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>", PAD - 4.0, self.py(fy) + 4.0, tick(fy));
            let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>", self.px(fx), H - PAD + 16.0, tick(fx));
        }
        let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", W / 2.0, H - 12.0, escape(x_label));
        let _ = writeln!(out, "<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">{}</text>", H / 2.0, H / 2.0, escape(y_label));
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 || (v != 0.0 && v.abs() < 0.01) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

/// One polyline per series; `points` with non-finite `y` break the line.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let frame = Frame {
        x: range(series.iter().flat_map(|s| s.1.iter().map(|p| p.0))),
        y: range(series.iter().flat_map(|s| s.1.iter().map(|p| p.1))),
    };
    let mut out = header(title);
    frame.axes(&mut out, x_label, y_label);
    for (k, (name, pts)) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let mut seg: Vec<String> = Vec::new();
        let flush = |seg: &mut Vec<String>, out: &mut String| {
            if seg.len() > 1 {
                let _ = writeln!(out, "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\" points=\"{}\"/>", seg.join(" "));
            }
            seg.clear();
        };
        for &(x, y) in pts {
            if y.is_finite() {
                seg.push(format!("{:.1},{:.1}", frame.px(x), frame.py(y)));
            } else {
                flush(&mut seg, &mut out);
            }
        }
        flush(&mut seg, &mut out);
        let ly = PAD + 14.0 * k as f64 + 12.0;
        let _ = writeln!(out, "<text x=\"{}\" y=\"{ly:.1}\" fill=\"{colour}\">{}</text>", W - PAD - 4.0, escape(name));
    }
    out + "</svg>\n"
}

/// Scatter of points plus an overlaid curve.
pub fn scatter_with_curve(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)], curve: &[(f64, f64)]) -> String {
    let frame = Frame {
        x: range(points.iter().chain(curve).map(|p| p.0)),
        y: range(points.iter().chain(curve).map(|p| p.1)),
    };
    let mut out = header(title);
    frame.axes(&mut out, x_label, y_label);
    // thin the cloud so files stay small
    let step = (points.len() / 2000).max(1);
    for &(x, y) in points.iter().step_by(step) {
        let _ = writeln!(out, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"1.2\" fill=\"#999\" fill-opacity=\"0.5\"/>", frame.px(x), frame.py(y));
    }
    let pts: Vec<String> = curve.iter().map(|&(x, y)| format!("{:.1},{:.1}", frame.px(x), frame.py(y))).collect();
    let _ = writeln!(out, "<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\" points=\"{}\"/>", pts.join(" "));
    out + "</svg>\n"
}

/// Blue-white-red heatmap; `None` cells are left grey.
pub fn heatmap(title: &str, rows: &[String], cols: &[String], values: &[Vec<Option<f64>>]) -> String {
    let vmax = values.iter().flatten().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let label_w = 90.0;
    let cw = (W - label_w - 20.0) / cols.len().max(1) as f64;
    let ch = ((H - 90.0) / rows.len().max(1) as f64).min(24.0);
    let height = 70.0 + ch * rows.len() as f64 + 10.0;
    let mut out = header(title).replace(&format!("height=\"{H}\" viewBox=\"0 0 {W} {H}\""), &format!("height=\"{height}\" viewBox=\"0 0 {W} {height}\""));
    for (j, c) in cols.iter().enumerate() {
        let _ = writeln!(out, "<text x=\"{:.1}\" y=\"56\" text-anchor=\"middle\">{}</text>", label_w + cw * (j as f64 + 0.5), escape(c));
    }
    for (i, r) in rows.iter().enumerate() {
        let y = 64.0 + ch * i as f64;
        let _ = writeln!(out, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>", label_w - 6.0, y + ch * 0.7, escape(r));
        for (j, v) in values[i].iter().enumerate() {
            let fill = match v {
                None => "#dddddd".to_string(),
                Some(v) => {
                    let t = (v / vmax).clamp(-1.0, 1.0);
                    let (r, g, b) = if t >= 0.0 {
                        (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
                    } else {
                        (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
                    };
                    format!("#{:02x}{:02x}{:02x}", r as u8, g as u8, b as u8)
                }
            };
            let _ = writeln!(
                out,
                "<rect x=\"{:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{ch:.1}\" fill=\"{fill}\" stroke=\"white\"/>",
                label_w + cw * j as f64,
                cw
            );
        }
    }
    out + "</svg>\n"
}

/// Grouped vertical bars: one group per label, one bar per series.
pub fn bar_chart(title: &str, y_label: &str, labels: &[String], series: &[(String, Vec<f64>)]) -> String {
    let vmax = series.iter().flat_map(|s| s.1.iter()).fold(0.0f64, |m, v| m.max(*v)).max(1e-12);
    let frame = Frame { x: (0.0, labels.len().max(1) as f64), y: (0.0, vmax * 1.05) };
    let mut out = header(title);
    let _ = writeln!(out, "<rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>", W - 2.0 * PAD, H - 2.0 * PAD);
    let _ = writeln!(out, "<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">{}</text>", H / 2.0, H / 2.0, escape(y_label));
    let group_w = (W - 2.0 * PAD) / labels.len().max(1) as f64;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    for (g, label) in labels.iter().enumerate() {
        let x0 = frame.px(g as f64) + group_w * 0.1;
        for (k, (_, vals)) in series.iter().enumerate() {
            let v = vals.get(g).copied().unwrap_or(0.0);
            let top = frame.py(v);
            let _ = writeln!(
                out,
                "<rect x=\"{:.1}\" y=\"{top:.1}\" width=\"{bar_w:.1}\" height=\"{:.1}\" fill=\"{}\"/>",
                x0 + bar_w * k as f64,
                H - PAD - top,
                PALETTE[k % PALETTE.len()]
            );
        }
        let cx = x0 + group_w * 0.4;
        let _ = writeln!(out, "<text x=\"{cx:.1}\" y=\"{}\" text-anchor=\"end\" transform=\"rotate(-35 {cx:.1} {})\">{}</text>", H - PAD + 12.0, H - PAD + 12.0, escape(label));
    }
    for (k, (name, _)) in series.iter().enumerate() {
        let _ = writeln!(out, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\" fill=\"{}\">{}</text>", W - PAD - 4.0, PAD + 14.0 * k as f64 + 12.0, PALETTE[k % PALETTE.len()], escape(name));
    }
    out + "</svg>\n"
}
