//! Plain-text image and chart output: PGM (P2) graymaps and small SVG charts.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{GrayImage, PIXELS, SIDE};
use crate::features::{FeatureMap, FeatureMapKind};
use crate::Result;

/// Maps `[-1, 1]` linearly onto `0..=255`.
///
/// Negative-signed inputs are quantised as `255 - gray(-x)`, so a value and its
/// negation always render as exact complements (including `0.0` / `-0.0`).
pub fn gray_level(x: f64) -> u8 {
    fn up(x: f64) -> u8 {
        (127.5 + 127.5 * x.clamp(-1.0, 1.0)).round() as u8
    }
    if x.is_sign_negative() {
        255 - up(-x)
    } else {
        up(x)
    }
}

/// P2 text for an 8x8 grid of values in `[-1, 1]`.
pub fn pgm_string(values: &[f64; PIXELS]) -> String {
    let mut out = format!("P2\n{SIDE} {SIDE}\n255\n");
    for row in values.chunks(SIDE) {
        let line: Vec<String> = row.iter().map(|&v| gray_level(v).to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn render_values(values: &[f64; PIXELS], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, pgm_string(values))?;
    Ok(())
}

pub fn render_image(image: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    render_values(&image.pixels, path)
}

/// Parses P2 text back into gray levels (row-major).
pub fn parse_pgm(text: &str) -> Option<Vec<u8>> {
    let mut tokens = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .flat_map(str::split_whitespace);
    if tokens.next()? != "P2" {
        return None;
    }
    let w: usize = tokens.next()?.parse().ok()?;
    let h: usize = tokens.next()?.parse().ok()?;
    let _max: u32 = tokens.next()?.parse().ok()?;
    let px: Vec<u8> = tokens.map(|t| t.parse().ok()).collect::<Option<_>>()?;
    (px.len() == w * h).then_some(px)
}

/// Writes the original digit, its inversion and its neighbour-product feature
/// image as `<stem>_original.pgm`, `<stem>_inverted.pgm` and `<stem>_neighbor.pgm`.
pub fn render_triptych(image: &GrayImage, dir: impl AsRef<Path>, stem: &str) -> Result<[std::path::PathBuf; 3]> {
    let dir = dir.as_ref();
    let paths = [
        dir.join(format!("{stem}_original.pgm")),
        dir.join(format!("{stem}_inverted.pgm")),
        dir.join(format!("{stem}_neighbor.pgm")),
    ];
    render_image(image, &paths[0])?;
    render_image(&image.inverted(), &paths[1])?;
    let chi = FeatureMap::new(FeatureMapKind::NeighborProduct).apply(&image.pixels);
    render_values(&chi, &paths[2])?;
    Ok(paths)
}

pub struct Bar {
    pub label: String,
    pub value: f64,
    /// Optional reference value drawn as a tick over the bar.
    pub reference: Option<f64>,
}

/// Horizontal bar chart for values in `[0, 1]`.
pub fn bar_chart_svg(title: &str, bars: &[Bar]) -> String {
    let row_h = 22.0;
    let left = 260.0;
    let width = 300.0;
    let height = 40.0 + row_h * bars.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}" font-family="sans-serif" font-size="12">"#,
        left + width + 60.0
    );
    let _ = writeln!(s, r#"<text x="10" y="18" font-weight="bold">{}</text>"#, escape(title));
    for (i, bar) in bars.iter().enumerate() {
        let y = 30.0 + row_h * i as f64;
        let w = width * bar.value.clamp(0.0, 1.0);
        let _ = writeln!(s, r#"<text x="10" y="{:.1}">{}</text>"#, y + 14.0, escape(&bar.label));
        let _ = writeln!(
            s,
            r##"<rect x="{left}" y="{y:.1}" width="{w:.2}" height="16" fill="#4a7ab7"/>"##
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}">{:.3}</text>"#,
            left + w + 4.0,
            y + 13.0,
            bar.value
        );
        if let Some(r) = bar.reference {
            let x = left + width * r.clamp(0.0, 1.0);
            let _ = writeln!(
                s,
                r##"<line x1="{x:.2}" y1="{:.1}" x2="{x:.2}" y2="{:.1}" stroke="#c0392b" stroke-width="2"/>"##,
                y - 2.0,
                y + 18.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Polyline plot of `(x, y)` points with auto-scaled axes.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)]) -> String {
    let (w, h, pad) = (520.0, 320.0, 50.0);
    let fold = |f: fn(f64, f64) -> f64, init: f64, sel: fn(&(f64, f64)) -> f64| points.iter().map(sel).fold(init, f);
    let (x0, x1) = (fold(f64::min, f64::INFINITY, |p| p.0), fold(f64::max, f64::NEG_INFINITY, |p| p.0));
    let (mut y0, mut y1) = (fold(f64::min, f64::INFINITY, |p| p.1), fold(f64::max, f64::NEG_INFINITY, |p| p.1));
    if !(y1 > y0) {
        let m = if y0.is_finite() { y0.abs().max(1e-12) } else { 1.0 };
        y0 -= m * 1e-3;
        y1 += m * 1e-3;
    }
    let xs = if x1 > x0 { x1 - x0 } else { 1.0 };
    let px = |x: f64| pad + (x - x0) / xs * (w - 2.0 * pad);
    let py = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<text x="{pad}" y="20" font-weight="bold">{}</text>"#, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{pad}" y="{pad}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - 2.0 * pad,
        h - 2.0 * pad
    );
    let path: Vec<String> = points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
    let _ = writeln!(
        s,
        r##"<polyline fill="none" stroke="#4a7ab7" stroke-width="1.5" points="{}"/>"##,
        path.join(" ")
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, w / 2.0, h - 10.0, escape(x_label));
    let _ = writeln!(s, r#"<text x="5" y="{}">{}</text>"#, pad - 8.0, escape(y_label));
    let _ = writeln!(s, r#"<text x="5" y="{:.1}">{y1:.6e}</text>"#, pad + 4.0);
    let _ = writeln!(s, r#"<text x="5" y="{:.1}">{y0:.6e}</text>"#, h - pad);
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::BACKGROUND;

    #[test]
    fn gray_level_endpoints_and_complement() {
        assert_eq!(gray_level(-1.0), 0);
        assert_eq!(gray_level(1.0), 255);
        for k in -8..=8 {
            let x = k as f64 / 8.0;
            assert_eq!(gray_level(x) as u16 + gray_level(-x) as u16, 255, "x = {x}");
        }
        assert_eq!(gray_level(0.3) as u16 + gray_level(-0.3) as u16, 255);
    }

    #[test]
    fn background_renders_black() {
        let img = GrayImage::new([BACKGROUND; PIXELS], 0, 0).unwrap();
        let px = parse_pgm(&pgm_string(&img.pixels)).unwrap();
        assert_eq!(px, vec![0; PIXELS]);
    }

    #[test]
    fn neighbor_features_mark_boundaries() {
        // left half white (+1), right half black (-1)
        let px: [f64; PIXELS] = std::array::from_fn(|i| if i % SIDE < 4 { 1.0 } else { -1.0 });
        let chi = FeatureMap::new(FeatureMapKind::NeighborProduct).apply(&px);
        let levels = parse_pgm(&pgm_string(&chi)).unwrap();
        for (i, &g) in levels.iter().enumerate() {
            let c = i % SIDE;
            // boundaries between columns 3|4 and, via the wrap, 7|0
            let want = if c == 3 || c == 7 { 0 } else { 255 };
            assert_eq!(g, want, "pixel {i}");
        }
    }

    #[test]
    fn svg_outputs_are_well_formed() {
        let bars = [Bar { label: "a<b".into(), value: 0.5, reference: Some(0.84) }];
        let svg = bar_chart_svg("t", &bars);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a&lt;b"));
        let plot = line_plot_svg("p", "x", "y", &[(0.0, 1.0), (1.0, 1.0)]);
        assert!(plot.contains("polyline"));
    }
}
