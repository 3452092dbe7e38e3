//! Minimal static SVG renderings of line charts and heatmaps.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn header(title: &str, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = write!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = write!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = write!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 10.0, escape(x_label));
    let _ = write!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(s: &mut String, (x0, x1): (f64, f64), (y0, y1): (f64, f64)) {
    let _ = write!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    for (v, x) in [(x0, PAD), (x1, W - PAD)] {
        let _ = write!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{v:.3}</text>"#, H - PAD + 16.0);
    }
    for (v, y) in [(y0, H - PAD), (y1, PAD)] {
        let _ = write!(s, r#"<text x="{}" y="{y}" text-anchor="end">{v:.3}</text>"#, PAD - 4.0);
    }
}

fn scale(v: f64, (lo, hi): (f64, f64), a: f64, b: f64) -> f64 {
    a + (v - lo) / (hi - lo) * (b - a)
}

pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let xr = extent(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let yr = extent(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let mut s = header(title, x_label, y_label);
    axes(&mut s, xr, yr);
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|(x, y)| {
                format!(
                    "{:.2},{:.2}",
                    scale(*x, xr, PAD, W - PAD),
                    scale(*y, yr, H - PAD, PAD)
                )
            })
            .collect();
        let _ = write!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let _ = write!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            W - PAD - 4.0,
            PAD + 16.0 + 14.0 * i as f64,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Row-major `values` over `(alphas[i], betas[j])`, drawn with alpha on the
/// x axis. Missing cells are left grey. Overlays are drawn as polylines in
/// the same coordinates.
pub fn heatmap(
    title: &str,
    alphas: &[f64],
    betas: &[f64],
    values: &[Option<f64>],
    overlays: &[Series],
) -> String {
    let xr = extent(alphas.iter().copied());
    let yr = extent(betas.iter().copied());
    let vr = extent(values.iter().flatten().map(|v| v.ln_1p()));
    let mut s = header(title, "alpha", "beta");
    let (nx, ny) = (alphas.len().max(1) as f64, betas.len().max(1) as f64);
    let (cw, ch) = ((W - 2.0 * PAD) / nx, (H - 2.0 * PAD) / ny);
    for i in 0..alphas.len() {
        for j in 0..betas.len() {
            let fill = match values[i * betas.len() + j] {
                Some(v) => {
                    let t = ((v.ln_1p() - vr.0) / (vr.1 - vr.0)).clamp(0.0, 1.0);
                    let r = (40.0 + 215.0 * t) as u8;
                    let b = (255.0 - 215.0 * t) as u8;
                    format!("rgb({r},{},{b})", 60)
                }
                None => "#bbbbbb".into(),
            };
            let _ = write!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
                PAD + i as f64 * cw,
                H - PAD - (j as f64 + 1.0) * ch,
                cw + 0.05,
                ch + 0.05
            );
        }
    }
    axes(&mut s, xr, yr);
    let (x_lo, x_hi) = (PAD + cw / 2.0, W - PAD - cw / 2.0);
    let (y_lo, y_hi) = (H - PAD - ch / 2.0, PAD + ch / 2.0);
    for (k, ser) in overlays.iter().enumerate() {
        let color = ["white", "black", "yellow", "cyan"][k % 4];
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|(a, b)| format!("{:.2},{:.2}", scale(*a, xr, x_lo, x_hi), scale(*b, yr, y_lo, y_hi)))
            .collect();
        let _ = write!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        let _ = write!(
            s,
            r#"<text x="{}" y="{}" fill="{color}" stroke="black" stroke-width="0.3">{}</text>"#,
            PAD + 6.0,
            PAD + 16.0 + 14.0 * k as f64,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}
