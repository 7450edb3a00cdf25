use std::fmt::Write as _;
use std::path::Path;

use super::export::write_file;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ten categorical colours, indexed by cluster id.
pub const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 560.0;
const MARGIN: f64 = 40.0;
const LEGEND_WIDTH: f64 = 110.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

/// Axis-free scatter of `[N, 2]` points coloured by `colors[i] % 10`, with
/// one legend entry per colour that occurs.
pub fn scatter_svg(points: &Tensor<f64>, colors: &[usize], legend: &[String], title: &str) -> Result<String> {
    if points.rank() != 2 || points.row_len() != 2 {
        return Err(Error::dim(format!("scatter needs [N, 2] points, got {:?}", points.shape())));
    }
    if colors.len() != points.rows() {
        return Err(Error::Contract(format!("scatter: {} points, {} colours", points.rows(), colors.len())));
    }
    let mut out = String::new();
    open(&mut out, title);
    let plot_w = WIDTH - 2.0 * MARGIN - LEGEND_WIDTH;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let _ = writeln!(out, r#"<g class="points">"#);
    if points.rows() > 0 {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for i in 0..points.rows() {
            for a in 0..2 {
                lo[a] = lo[a].min(points.row(i)[a]);
                hi[a] = hi[a].max(points.row(i)[a]);
            }
        }
        let span = [(hi[0] - lo[0]).max(1e-12), (hi[1] - lo[1]).max(1e-12)];
        for (i, &c) in colors.iter().enumerate() {
            let p = points.row(i);
            let x = MARGIN + (p[0] - lo[0]) / span[0] * plot_w;
            let y = MARGIN + plot_h - (p[1] - lo[1]) / span[1] * plot_h;
            let _ = writeln!(
                out,
                r#"<circle cx="{x:.2}" cy="{y:.2}" r="2" fill="{}" fill-opacity="0.7"/>"#,
                PALETTE[c % PALETTE.len()]
            );
        }
    }
    let _ = writeln!(out, "</g>");
    let mut present: Vec<usize> = colors.iter().map(|c| c % PALETTE.len()).collect();
    present.sort_unstable();
    present.dedup();
    let _ = writeln!(out, r#"<g class="legend" font-family="sans-serif" font-size="12">"#);
    for (row, &c) in present.iter().enumerate() {
        let y = MARGIN + 18.0 * row as f64;
        let x = WIDTH - LEGEND_WIDTH;
        let name = legend.get(c).cloned().unwrap_or_else(|| format!("cluster {c}"));
        let _ = writeln!(out, r#"<rect x="{x}" y="{y}" width="10" height="10" fill="{}"/>"#, PALETTE[c]);
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, x + 16.0, y + 9.0, escape(&name));
    }
    let _ = writeln!(out, "</g>\n</svg>");
    Ok(out)
}

/// Vertical bar chart with the value printed above each bar. Bars share a
/// zero baseline; negative values extend below it.
pub fn bar_svg(labels: &[&str], values: &[f64], title: &str) -> Result<String> {
    if labels.len() != values.len() {
        return Err(Error::Contract(format!("bar chart: {} labels, {} values", labels.len(), values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("bar chart values must be finite".into()));
    }
    let mut out = String::new();
    open(&mut out, title);
    let top = values.iter().copied().fold(0.0f64, f64::max);
    let bottom = values.iter().copied().fold(0.0f64, f64::min);
    let range = (top - bottom).max(1e-12);
    let plot_h = HEIGHT - 2.0 * MARGIN - 40.0;
    let baseline = MARGIN + 20.0 + top / range * plot_h;
    let slot = (WIDTH - 2.0 * MARGIN) / values.len().max(1) as f64;
    let _ = writeln!(out, r#"<g font-family="sans-serif" font-size="13" text-anchor="middle">"#);
    for (i, (&label, &v)) in labels.iter().zip(values).enumerate() {
        let h = v.abs() / range * plot_h;
        let x = MARGIN + slot * i as f64 + slot * 0.2;
        let y = if v >= 0.0 { baseline - h } else { baseline };
        let cx = x + slot * 0.3;
        let _ = writeln!(
            out,
            r#"<rect class="bar" x="{x:.2}" y="{y:.2}" width="{:.2}" height="{h:.2}" fill="{}"/>"#,
            slot * 0.6,
            PALETTE[i % PALETTE.len()]
        );
        let _ = writeln!(out, r#"<text class="value" x="{cx:.2}" y="{:.2}">{v:.4}</text>"#, y - 6.0);
        let _ = writeln!(out, r#"<text x="{cx:.2}" y="{:.2}">{}</text>"#, HEIGHT - MARGIN + 16.0, escape(label));
    }
    let _ = writeln!(
        out,
        r#"<line x1="{MARGIN}" y1="{baseline:.2}" x2="{}" y2="{baseline:.2}" stroke="black"/>"#,
        WIDTH - MARGIN
    );
    let _ = writeln!(out, "</g>\n</svg>");
    Ok(out)
}

pub fn render_scatter_svg(points: &Tensor<f64>, colors: &[usize], legend: &[String], path: &Path) -> Result<()> {
    write_file(path, &scatter_svg(points, colors, legend, "t-SNE of latent embeddings")?)
}

pub fn render_bar_svg(labels: &[&str], values: &[f64], path: &Path) -> Result<()> {
    write_file(path, &bar_svg(labels, values, "Silhouette score by method")?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_scatter_is_well_formed() {
        let svg = scatter_svg(&Tensor::new(&[0, 2], vec![]).unwrap(), &[], &[], "empty").unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        assert_eq!(doc.descendants().filter(|n| n.has_tag_name("circle")).count(), 0);
    }

    #[test]
    fn scatter_colours_and_legend() {
        let pts = Tensor::new(&[3, 2], vec![0.0, 0.0, 1.0, 1.0, 2.0, 0.5]).unwrap();
        let legend: Vec<String> = (0..10).map(|c| format!("c<{c}>")).collect();
        let svg = scatter_svg(&pts, &[0, 3, 3], &legend, "t").unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let fills: Vec<&str> = doc
            .descendants()
            .filter(|n| n.has_tag_name("circle"))
            .map(|n| n.attribute("fill").unwrap())
            .collect();
        assert_eq!(fills, vec![PALETTE[0], PALETTE[3], PALETTE[3]]);
        let texts: Vec<&str> = doc.descendants().filter_map(|n| n.text()).collect();
        assert!(texts.contains(&"c<3>"));
        assert!(scatter_svg(&pts, &[0], &legend, "t").is_err());
    }

    #[test]
    fn silhouette_bars_tallest_first() {
        let svg = bar_svg(&["Triplet-CNN-AE", "Raw pixels", "PCA-50"], &[0.2061, 0.0589, 0.0845], "s").unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let heights: Vec<f64> = doc
            .descendants()
            .filter(|n| n.attribute("class") == Some("bar"))
            .map(|n| n.attribute("height").unwrap().parse().unwrap())
            .collect();
        assert_eq!(heights.len(), 3);
        assert!(heights[0] > heights[1] && heights[0] > heights[2]);
        let values: Vec<&str> = doc
            .descendants()
            .filter(|n| n.attribute("class") == Some("value"))
            .filter_map(|n| n.text())
            .collect();
        assert_eq!(values, vec!["0.2061", "0.0589", "0.0845"]);
    }

    #[test]
    fn writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.svg");
        render_bar_svg(&["a"], &[-0.5], &path).unwrap();
        roxmltree::Document::parse(&std::fs::read_to_string(&path).unwrap()).unwrap();
    }
}
