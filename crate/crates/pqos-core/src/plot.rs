//! Minimal hand-rolled SVG output: line charts for series comparison and a
//! heatmap for correlation matrices. Deterministic output for byte-stable
//! artifacts.

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 30.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;

const SERIES_COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart of one or more equally indexed series.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[(&str, &[f64])]) -> String {
    let n_max = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for (_, values) in series {
        for &v in *values {
            if v.is_finite() {
                y_min = y_min.min(v);
                y_max = y_max.max(v);
            }
        }
    }
    if !y_min.is_finite() || y_max <= y_min {
        y_min = 0.0;
        y_max = 1.0;
    }
    let pad = (y_max - y_min) * 0.05;
    let (y_lo, y_hi) = (y_min - pad, y_max + pad);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x_of = |i: usize| MARGIN_LEFT + plot_w * i as f64 / (n_max.max(2) - 1) as f64;
    let y_of = |v: f64| MARGIN_TOP + plot_h * (1.0 - (v - y_lo) / (y_hi - y_lo));

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        WIDTH / 2.0,
        esc(title)
    ));
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_LEFT}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN_BOTTOM,
        WIDTH - MARGIN_RIGHT,
        HEIGHT - MARGIN_BOTTOM
    ));
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_LEFT}\" y1=\"{MARGIN_TOP}\" x2=\"{MARGIN_LEFT}\" y2=\"{}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN_BOTTOM
    ));
    // Y ticks.
    for i in 0..=4 {
        let v = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        let y = y_of(v);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y:.2}\" x2=\"{MARGIN_LEFT}\" y2=\"{y:.2}\" stroke=\"black\"/>\n",
            MARGIN_LEFT - 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{v:.4}</text>\n",
            MARGIN_LEFT - 8.0,
            y + 4.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0,
        esc(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" \
         transform=\"rotate(-90 16 {})\">{}</text>\n",
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        esc(y_label)
    ));
    // Series.
    for (s, (name, values)) in series.iter().enumerate() {
        let color = SERIES_COLORS[s % SERIES_COLORS.len()];
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, &v)| format!("{:.2},{:.2}", x_of(i), y_of(v)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        let ly = MARGIN_TOP + 16.0 * s as f64;
        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{:.2}\" width=\"12\" height=\"4\" fill=\"{color}\"/>\n",
            WIDTH - MARGIN_RIGHT - 130.0,
            ly
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            WIDTH - MARGIN_RIGHT - 112.0,
            ly + 5.0,
            esc(name)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Blue–white–red color for a coefficient in [-1, 1].
fn corr_color(v: f64) -> String {
    let v = v.clamp(-1.0, 1.0);
    let (r, g, b) = if v >= 0.0 {
        let t = v;
        (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
    } else {
        let t = -v;
        (255.0 * (1.0 - t), 255.0 * (1.0 - t), 255.0)
    };
    format!("#{:02x}{:02x}{:02x}", r as u8, g as u8, b as u8)
}

/// Heatmap of a row-major matrix of optional coefficients; missing cells are
/// hatched grey.
pub fn heatmap(
    title: &str,
    row_labels: &[String],
    col_labels: &[String],
    values: &[Vec<Option<f64>>],
) -> String {
    let cell = 42.0;
    let left = 170.0;
    let top = 60.0;
    let width = left + cell * col_labels.len() as f64 + 40.0;
    let height = top + cell * row_labels.len() as f64 + 80.0;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"26\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n",
        width / 2.0,
        esc(title)
    ));
    for (j, label) in col_labels.iter().enumerate() {
        let x = left + cell * (j as f64 + 0.5);
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" \
             text-anchor=\"start\" transform=\"rotate(-45 {x:.1} {:.1})\">{}</text>\n",
            top - 8.0,
            top - 8.0,
            esc(label)
        ));
    }
    for (i, label) in row_labels.iter().enumerate() {
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
            left - 6.0,
            top + cell * (i as f64 + 0.55),
            esc(label)
        ));
        for (j, value) in values[i].iter().enumerate() {
            let x = left + cell * j as f64;
            let y = top + cell * i as f64;
            match value {
                Some(v) => {
                    svg.push_str(&format!(
                        "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cell}\" height=\"{cell}\" \
                         fill=\"{}\" stroke=\"#999\"/>\n",
                        corr_color(*v)
                    ));
                    svg.push_str(&format!(
                        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" \
                         text-anchor=\"middle\">{v:.2}</text>\n",
                        x + cell / 2.0,
                        y + cell / 2.0 + 3.0
                    ));
                }
                None => {
                    svg.push_str(&format!(
                        "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cell}\" height=\"{cell}\" \
                         fill=\"#dddddd\" stroke=\"#999\"/>\n"
                    ));
                    svg.push_str(&format!(
                        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" \
                         text-anchor=\"middle\">n/a</text>\n",
                        x + cell / 2.0,
                        y + cell / 2.0 + 3.0
                    ));
                }
            }
        }
    }
    svg.push_str("</svg>\n");
    svg
}
