//! Learning curves as a small standalone SVG.

use std::fmt::Write as _;

use fcfp::train::{MetricsRecord, Split};

const W: f64 = 480.0;
const H: f64 = 300.0;
const PAD: f64 = 40.0;

fn polyline(points: &[(f64, f64)], max_epoch: f64, color: &str) -> String {
    let coords: Vec<String> = points
        .iter()
        .map(|&(e, v)| {
            let x = PAD + (W - 2.0 * PAD) * e / max_epoch.max(1.0);
            let y = H - PAD - (H - 2.0 * PAD) * v.clamp(0.0, 1.0);
            format!("{x:.1},{y:.1}")
        })
        .collect();
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
        coords.join(" ")
    )
}

/// Training loss (scaled by its maximum) and validation Dice against epoch.
pub fn curves_svg(history: &[MetricsRecord]) -> String {
    let train: Vec<(f64, f64)> = history
        .iter()
        .filter(|r| r.split == Split::Train)
        .map(|r| (r.epoch as f64, r.loss))
        .collect();
    let val: Vec<(f64, f64)> = history
        .iter()
        .filter_map(|r| Some((r.epoch as f64, r.dice?)))
        .collect();
    let max_epoch = history.iter().map(|r| r.epoch).max().unwrap_or(0) as f64;
    let max_loss = train.iter().map(|p| p.1).fold(0.0, f64::max);
    let scaled: Vec<(f64, f64)> = train
        .iter()
        .map(|&(e, l)| (e, if max_loss > 0.0 { l / max_loss } else { 0.0 }))
        .collect();

    let mut s = String::new();
    writeln!(s, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"11\">").unwrap();
    writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>").unwrap();
    let (x0, x1, y0, y1) = (PAD, W - PAD, H - PAD, PAD);
    writeln!(s, "<path d=\"M{x0},{y1} L{x0},{y0} L{x1},{y0}\" fill=\"none\" stroke=\"black\"/>").unwrap();
    writeln!(s, "<text x=\"{x0}\" y=\"{}\">0</text>", y0 + 14.0).unwrap();
    writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">epoch {max_epoch}</text>", x1, y0 + 14.0).unwrap();
    writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">1</text>", x0 - 4.0, y1 + 4.0).unwrap();
    if scaled.len() > 1 {
        s.push_str(&polyline(&scaled, max_epoch, "#c0392b"));
    }
    if !val.is_empty() {
        s.push_str(&polyline(&val, max_epoch, "#2471a3"));
        for &(e, d) in &val {
            let x = PAD + (W - 2.0 * PAD) * e / max_epoch.max(1.0);
            let y = H - PAD - (H - 2.0 * PAD) * d.clamp(0.0, 1.0);
            writeln!(s, "<circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"2.5\" fill=\"#2471a3\"/>").unwrap();
        }
    }
    writeln!(s, "<text x=\"{}\" y=\"20\" fill=\"#c0392b\">train loss / {max_loss:.4}</text>", x0).unwrap();
    writeln!(s, "<text x=\"{}\" y=\"20\" fill=\"#2471a3\">val dice</text>", x0 + 200.0).unwrap();
    s.push_str("</svg>\n");
    s
}
