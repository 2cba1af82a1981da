//! Minimal SVG renderings of CSV outputs: line charts and heatmaps.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn finite_range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn header(title: &str, xlabel: &str, ylabel: &str) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>
"#,
        W / 2.0,
        escape(title),
        W / 2.0,
        H - 10.0,
        escape(xlabel),
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
    s
}

fn axes(s: &mut String, (x0, x1): (f64, f64), (y0, y1): (f64, f64), ylog: bool) {
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let fmt = |v: f64, log: bool| if log { format!("1e{v:.0}") } else { format!("{v:.3}") };
    let _ = writeln!(s, r#"<text x="{PAD}" y="{}" text-anchor="middle">{}</text>"#, H - PAD + 16.0, fmt(x0, false));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W - PAD, H - PAD + 16.0, fmt(x1, false));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, PAD - 4.0, H - PAD, fmt(y0, ylog));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, PAD - 4.0, PAD + 4.0, fmt(y1, ylog));
}

/// Line chart; with `ylog`, non-positive values are dropped.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series], ylog: bool) -> String {
    let tr = |y: f64| if ylog { if y > 0.0 { y.log10() } else { f64::NAN } } else { y };
    let xr = finite_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let yr = finite_range(series.iter().flat_map(|s| s.points.iter().map(|p| tr(p.1))));
    let mut s = header(title, xlabel, ylabel);
    axes(&mut s, xr, yr, ylog);
    let px = |x: f64| PAD + (x - xr.0) / (xr.1 - xr.0) * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y - yr.0) / (yr.1 - yr.0) * (H - 2.0 * PAD);
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| (x, tr(y)))
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            W - PAD - 120.0,
            PAD + 16.0 + 14.0 * i as f64,
            escape(ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn ramp(t: f64) -> String {
    if !t.is_finite() {
        return "#cccccc".into();
    }
    let t = t.clamp(0.0, 1.0);
    let r = (68.0 + t * (253.0 - 68.0)) as u8;
    let g = (1.0 + t * (231.0 - 1.0)) as u8;
    let b = (84.0 + t * (37.0 - 84.0)) as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Heatmap of `values[row][col]` with rows drawn bottom to top.
pub fn heatmap(title: &str, xlabel: &str, ylabel: &str, xs: &[f64], ys: &[f64], values: &[Vec<f64>], log: bool) -> String {
    let tr = |v: f64| if log { if v > 0.0 { v.log10() } else { f64::NAN } } else { v };
    let (lo, hi) = finite_range(values.iter().flatten().map(|&v| tr(v)));
    let xr = finite_range(xs.iter().copied());
    let yr = finite_range(ys.iter().copied());
    let mut s = header(title, xlabel, ylabel);
    let cw = (W - 2.0 * PAD) / xs.len().max(1) as f64;
    let ch = (H - 2.0 * PAD) / ys.len().max(1) as f64;
    for (r, row) in values.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                PAD + c as f64 * cw,
                H - PAD - (r + 1) as f64 * ch,
                cw + 0.2,
                ch + 0.2,
                ramp((tr(v) - lo) / (hi - lo))
            );
        }
    }
    axes(&mut s, xr, yr, false);
    let fmt = |v: f64| if log { format!("1e{v:.1}") } else { format!("{v:.3}") };
    let _ = writeln!(s, r#"<text x="{}" y="{}">{} .. {}</text>"#, PAD, PAD - 6.0, fmt(lo), fmt(hi));
    s.push_str("</svg>\n");
    s
}
