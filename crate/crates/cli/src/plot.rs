//! Static SVG line plots of CSV columns against the first column.

use std::fmt::Write as _;
use std::path::Path;

use crate::CliError;

/// One named curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Reads every non-abscissa column of a CSV (comment lines start with `#`).
pub fn read_series(path: &Path) -> Result<Vec<Series>, CliError> {
    let malformed = |m: String| CliError::Config(format!("{}: {m}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| malformed(e.to_string()))?;
    let headers = reader.headers().map_err(|e| malformed(e.to_string()))?.clone();
    if headers.len() < 2 {
        return Err(malformed("need an abscissa column and at least one data column".into()));
    }
    let mut series: Vec<Series> = headers
        .iter()
        .skip(1)
        .map(|h| Series {
            name: h.to_string(),
            points: Vec::new(),
        })
        .collect();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| malformed(e.to_string()))?;
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| malformed(format!("row {}: bad number `{s}`: {e}", row + 1)))
        };
        let x = parse(&record[0])?;
        for (j, s) in series.iter_mut().enumerate() {
            let field = &record[j + 1];
            if field.is_empty() {
                continue;
            }
            s.points.push((x, parse(field)?));
        }
    }
    Ok(series)
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Renders the series; on log axes, non-positive points are dropped and
/// counted in the returned warning count.
pub fn render_svg(series: &[Series], logx: bool, logy: bool, title: &str) -> (String, usize) {
    let tx = |v: f64| if logx { v.log10() } else { v };
    let ty = |v: f64| if logy { v.log10() } else { v };
    let mut dropped = 0;
    let kept: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .filter(|&&(x, y)| {
                    let ok = (!logx || x > 0.0) && (!logy || y > 0.0) && x.is_finite() && y.is_finite();
                    if !ok {
                        dropped += 1;
                    }
                    ok
                })
                .map(|&(x, y)| (tx(x), ty(y)))
                .collect()
        })
        .collect();
    let all = kept.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x0 < x1) {
        (x0, x1) = if x0.is_finite() { (x0 - 0.5, x0 + 0.5) } else { (0.0, 1.0) };
    }
    if !(y0 < y1) {
        (y0, y1) = if y0.is_finite() { (y0 - 0.5, y0 + 0.5) } else { (0.0, 1.0) };
    }
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    if !title.is_empty() {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="16">{}</text>"#,
            WIDTH / 2.0,
            MARGIN / 2.0,
            escape(title)
        );
    }
    let label = |v: f64, log: bool| if log { format!("1e{v:.1}") } else { format!("{v:.3e}") };
    for (i, (vx, vy)) in [(x0, y0), (x1, y1)].into_iter().enumerate() {
        let anchor = if i == 0 { "start" } else { "end" };
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="{anchor}" font-size="11">{}</text>"#,
            px(vx),
            HEIGHT - MARGIN + 16.0,
            label(vx, logx)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="11">{}</text>"#,
            MARGIN - 4.0,
            py(vy),
            label(vy, logy)
        );
    }
    for (k, (s, pts)) in series.iter().zip(&kept).enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"><title>{}</title></polyline>"#,
            coords.join(" "),
            escape(&s.name)
        );
        let ly = MARGIN + 16.0 + 16.0 * k as f64;
        let lx = WIDTH - MARGIN - 120.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}" font-size="12">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    (svg, dropped)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(name: &str, pts: &[(f64, f64)]) -> Series {
        Series {
            name: name.into(),
            points: pts.to_vec(),
        }
    }

    #[test]
    fn one_polyline_per_series() {
        let (svg, dropped) = render_svg(&[series("y", &[(0.0, 1.0), (1.0, 2.0)])], false, false, "t");
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(dropped, 0);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn log_axis_drops_non_positive() {
        let (svg, dropped) = render_svg(&[series("y", &[(0.0, 1.0), (1.0, 2.0), (10.0, 3.0)])], true, false, "");
        assert_eq!(dropped, 1);
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }

    #[test]
    fn names_are_escaped() {
        let (svg, _) = render_svg(&[series("a<b", &[(1.0, 1.0)])], false, false, "");
        assert!(svg.contains("a&lt;b"));
    }
}
