//! Minimal SVG line plot: log-scale error against iteration, one line per
//! label with a one-sigma band.

use std::fmt::Write;

use crate::run::Summary;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 20.0;
const MARGIN_BOTTOM: f64 = 50.0;
const FLOOR: f64 = 1e-300;

const COLORS: [&str; 8] = [
    "#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// Renders the summaries. Iterations run from 1 on the x axis.
pub fn render(summaries: &[Summary], title: &str) -> String {
    let max_len = summaries
        .iter()
        .map(|s| s.mean.len())
        .max()
        .unwrap_or(0)
        .max(1);
    let positive = summaries
        .iter()
        .flat_map(|s| s.mean.iter().zip(&s.std).flat_map(|(m, d)| [*m, m + d]))
        .filter(|v| *v > FLOOR && v.is_finite());
    let (mut lo, mut hi) = positive.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() {
        (lo, hi) = (1e-12, 1.0);
    }
    let (lo_exp, mut hi_exp) = (lo.log10().floor(), hi.log10().ceil());
    if hi_exp <= lo_exp {
        hi_exp = lo_exp + 1.0;
    }

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x_of = |k: usize| MARGIN_LEFT + plot_w * (k as f64) / (max_len.max(2) - 1) as f64;
    let y_of = |v: f64| {
        let e = v.max(10f64.powf(lo_exp)).log10();
        MARGIN_TOP + plot_h * (hi_exp - e) / (hi_exp - lo_exp)
    };

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        out,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="14" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    let mut e = lo_exp;
    let step = ((hi_exp - lo_exp) / 8.0).ceil().max(1.0);
    while e <= hi_exp {
        let y = y_of(10f64.powf(e));
        let _ = writeln!(
            out,
            r##"<line x1="{MARGIN_LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">1e{}</text>"##,
            MARGIN_LEFT + plot_w,
            MARGIN_LEFT - 6.0,
            y + 4.0,
            e as i64
        );
        e += step;
    }
    for i in 0..=4 {
        let k = (max_len - 1) * i / 4;
        let x = x_of(k);
        let _ = writeln!(
            out,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            MARGIN_TOP + plot_h + 16.0,
            k + 1
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">iteration</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">Bellman error</text>"#,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0
    );

    for (i, s) in summaries.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        if s.mean.is_empty() {
            continue;
        }
        let mut band = String::new();
        for (k, (m, d)) in s.mean.iter().zip(&s.std).enumerate() {
            let _ = write!(band, "{:.2},{:.2} ", x_of(k), y_of(m + d));
        }
        for (k, (m, d)) in s.mean.iter().zip(&s.std).enumerate().rev() {
            let _ = write!(band, "{:.2},{:.2} ", x_of(k), y_of(m - d));
        }
        let _ = writeln!(
            out,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            band.trim_end()
        );
        let mut line = String::new();
        for (k, m) in s.mean.iter().enumerate() {
            let _ = write!(line, "{:.2},{:.2} ", x_of(k), y_of(*m));
        }
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            line.trim_end()
        );
        let ly = MARGIN_TOP + 16.0 + 18.0 * i as f64;
        let lx = MARGIN_LEFT + plot_w + 12.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="3"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
