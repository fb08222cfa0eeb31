//! Plain SVG figures. Output depends only on the inputs, so reruns are
//! byte-identical.

use std::fmt::Write as _;

use mlm_audit_core::lexicon::Category;
use mlm_audit_core::sentiment::SentimentProfile;
use mlm_audit_core::shifts::Dendrogram;

use crate::config::FigureConfig;

const FONT: &str = "font-family=\"sans-serif\" font-size=\"11\"";
const LINK_PALETTE: &[&str] = &["#1f77b4", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
const ABOVE_CUT: &str = "#808080";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Svg {
    body: String,
    width: f64,
    height: f64,
}

impl Svg {
    fn new(width: f64, height: f64) -> Self {
        Self {
            body: String::new(),
            width,
            height,
        }
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        let _ = writeln!(
            self.body,
            "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" stroke=\"{stroke}\" stroke-width=\"1.5\"/>"
        );
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"{fill}\"/>"
        );
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, rotate: bool, fill: &str, s: &str) {
        let transform = if rotate {
            format!(" transform=\"rotate(-60 {x:.2} {y:.2})\"")
        } else {
            String::new()
        };
        let _ = writeln!(
            self.body,
            "<text x=\"{x:.2}\" y=\"{y:.2}\" text-anchor=\"{anchor}\" fill=\"{fill}\" {FONT}{transform}>{}</text>",
            escape(s)
        );
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

fn category_color(cfg: &FigureConfig, category: Option<Category>) -> &str {
    match category {
        Some(Category::Farm) => &cfg.farm_color,
        Some(Category::Companion) => &cfg.companion_color,
        _ => &cfg.other_color,
    }
}

/// Dendrogram with leaf labels coloured by category. Links below the colour
/// threshold take their cluster's colour.
pub fn dendrogram_svg(
    tree: &Dendrogram,
    labels: &[String],
    categories: &[Option<Category>],
    cfg: &FigureConfig,
    title: &str,
) -> String {
    let n = tree.n_leaves;
    let step = 18.0;
    let (left, top, plot_h, bottom) = (50.0, 30.0, 300.0, 110.0);
    let width = left * 2.0 + step * n as f64;
    let mut svg = Svg::new(width, top + plot_h + bottom);
    svg.text(width / 2.0, 18.0, "middle", false, "black", title);

    let max_h = tree.max_height().max(f64::MIN_POSITIVE);
    let y_of = |h: f64| top + plot_h * (1.0 - h / max_h);
    let order = tree.leaf_order();
    let mut x = vec![0.0; n + tree.merges.len()];
    let mut h = vec![0.0; n + tree.merges.len()];
    for (slot, &leaf) in order.iter().enumerate() {
        x[leaf] = left + step * (slot as f64 + 0.5);
    }

    let threshold = tree.color_threshold();
    let flat = tree.clusters_below(threshold);
    let mut color_of_node = vec![ABOVE_CUT; n + tree.merges.len()];
    let mut cluster_size = vec![0usize; n];
    for &c in &flat {
        cluster_size[c] += 1;
    }
    // Clusters of one leaf keep the neutral colour, like SciPy.
    let mut palette_slot = vec![usize::MAX; n];
    let mut next = 0;
    for &leaf in &order {
        let c = flat[leaf];
        if cluster_size[c] > 1 && palette_slot[c] == usize::MAX {
            palette_slot[c] = next;
            next += 1;
        }
    }
    let mut first_leaf = vec![0usize; n + tree.merges.len()];
    for leaf in 0..n {
        first_leaf[leaf] = leaf;
    }
    for (k, m) in tree.merges.iter().enumerate() {
        let id = n + k;
        x[id] = (x[m.a] + x[m.b]) / 2.0;
        h[id] = m.height;
        first_leaf[id] = first_leaf[m.a];
        if m.height < threshold {
            let slot = palette_slot[flat[first_leaf[id]]];
            color_of_node[id] = LINK_PALETTE[slot % LINK_PALETTE.len()];
        }
        let color = color_of_node[id];
        let y = y_of(m.height);
        svg.line(x[m.a], y_of(h[m.a]), x[m.a], y, color);
        svg.line(x[m.b], y_of(h[m.b]), x[m.b], y, color);
        svg.line(x[m.a], y, x[m.b], y, color);
    }

    svg.line(left - 10.0, top, left - 10.0, top + plot_h, "black");
    for tick in 0..=4 {
        let v = max_h * tick as f64 / 4.0;
        let y = y_of(v);
        svg.line(left - 14.0, y, left - 10.0, y, "black");
        svg.text(left - 16.0, y + 4.0, "end", false, "black", &format!("{v:.2}"));
    }
    for &leaf in &order {
        let y = top + plot_h + 12.0;
        let color = category_color(cfg, categories.get(leaf).copied().flatten());
        svg.text(x[leaf], y, "end", true, color, &labels[leaf]);
    }
    svg.finish()
}

fn heat_color(v: f64) -> String {
    // White at 0 to dark blue at 1.
    let v = v.clamp(0.0, 1.0);
    let r = (255.0 * (1.0 - v)).round() as u8;
    let g = (255.0 * (1.0 - 0.8 * v)).round() as u8;
    let b = (255.0 * (1.0 - 0.45 * v)).round() as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Square heat map of `matrix` (values in `[0, 1]`), rows and columns in the
/// given order. `None` cells are drawn grey.
pub fn heatmap_svg(matrix: &[Vec<Option<f64>>], labels: &[String], order: &[usize], title: &str) -> String {
    let n = order.len();
    let cell = 14.0;
    let margin = 90.0;
    let size = margin + cell * n as f64 + 20.0;
    let mut svg = Svg::new(size, size + 20.0);
    svg.text(size / 2.0, 16.0, "middle", false, "black", title);
    let top = margin + 20.0;
    for (r, &i) in order.iter().enumerate() {
        let y = top + cell * r as f64;
        svg.text(margin - 4.0, y + cell * 0.75, "end", false, "black", &labels[i]);
        for (c, &j) in order.iter().enumerate() {
            let fill = matrix[i][j].map_or_else(|| "#bbbbbb".to_string(), heat_color);
            svg.rect(margin + cell * c as f64, y, cell, cell, &fill);
        }
    }
    for (c, &j) in order.iter().enumerate() {
        svg.text(margin + cell * (c as f64 + 0.7), top - 4.0, "start", true, "black", &labels[j]);
    }
    svg.finish()
}

/// Horizontal-axis bar chart of one value per name, in the given order.
pub fn bias_bars_svg(rows: &[(String, f64, Option<Category>)], cfg: &FigureConfig, title: &str) -> String {
    let n = rows.len();
    let step = 16.0;
    let (left, top, plot_h, bottom) = (50.0, 30.0, 240.0, 100.0);
    let width = left * 2.0 + step * n.max(1) as f64;
    let mut svg = Svg::new(width, top + plot_h + bottom);
    svg.text(width / 2.0, 18.0, "middle", false, "black", title);
    let zero = top + plot_h / 2.0;
    let scale = plot_h / 2.0;
    for (i, (name, v, cat)) in rows.iter().enumerate() {
        let x = left + step * i as f64;
        let v = v.clamp(-1.0, 1.0);
        let (y, h) = if v >= 0.0 { (zero - v * scale, v * scale) } else { (zero, -v * scale) };
        svg.rect(x + 2.0, y, step - 4.0, h, category_color(cfg, *cat));
        svg.text(x + step / 2.0, top + plot_h + 12.0, "end", true, "black", name);
    }
    svg.line(left, zero, width - left, zero, "black");
    svg.line(left - 6.0, top, left - 6.0, top + plot_h, "black");
    for v in [-1.0, -0.5, 0.0, 0.5, 1.0] {
        let y = zero - v * scale;
        svg.text(left - 9.0, y + 4.0, "end", false, "black", &format!("{v:.1}"));
    }
    svg.finish()
}

const POLARITY_COLORS: [&str; 3] = ["#d62728", "#c7c7c7", "#2ca02c"];

/// Stacked negative/neutral/positive bars, one per profile.
pub fn sentiment_bars_svg(profiles: &[SentimentProfile], title: &str) -> String {
    let n = profiles.len();
    let step = 40.0;
    let (left, top, plot_h, bottom) = (50.0, 30.0, 200.0, 90.0);
    let width = left * 2.0 + step * n.max(1) as f64;
    let mut svg = Svg::new(width, top + plot_h + bottom);
    svg.text(width / 2.0, 18.0, "middle", false, "black", title);
    for (i, p) in profiles.iter().enumerate() {
        let x = left + step * i as f64;
        let mut y = top + plot_h;
        for (share, color) in [p.negative, p.neutral, p.positive].into_iter().zip(POLARITY_COLORS) {
            let h = share * plot_h;
            y -= h;
            svg.rect(x + 6.0, y, step - 12.0, h, color);
        }
        let cluster = p.cluster.map_or_else(|| "all".to_string(), |c| format!("c{c}"));
        svg.text(
            x + step / 2.0,
            top + plot_h + 12.0,
            "end",
            true,
            "black",
            &format!("{cluster} {}", p.direction.as_str()),
        );
    }
    svg.line(left, top + plot_h, width - left, top + plot_h, "black");
    svg.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use mlm_audit_core::shifts::upgma;

    #[test]
    fn dendrogram_is_well_formed_and_stable() {
        let d = vec![
            vec![0.0, 0.1, 0.8, 0.9],
            vec![0.1, 0.0, 0.85, 0.9],
            vec![0.8, 0.85, 0.0, 0.2],
            vec![0.9, 0.9, 0.2, 0.0],
        ];
        let tree = upgma(&d).unwrap();
        let labels: Vec<String> = ["cow", "pig", "cat", "dog"].iter().map(|s| s.to_string()).collect();
        let cats = vec![Some(Category::Farm), Some(Category::Farm), Some(Category::Companion), None];
        let cfg = FigureConfig::default();
        let a = dendrogram_svg(&tree, &labels, &cats, &cfg, "t");
        assert_eq!(a, dendrogram_svg(&tree, &labels, &cats, &cfg, "t"));
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert_eq!(a.matches("<line").count(), 3 * 3 + 1 + 5);
        assert!(a.contains("fill=\"#FACCFA\""));
        assert!(a.contains(LINK_PALETTE[0]) && a.contains(LINK_PALETTE[1]));
    }

    #[test]
    fn labels_are_escaped() {
        let svg = bias_bars_svg(&[("a<b".into(), 0.5, None)], &FigureConfig::default(), "x&y");
        assert!(svg.contains("a&lt;b") && svg.contains("x&amp;y"));
        assert_eq!(heat_color(0.0), "#ffffff");
    }
}
