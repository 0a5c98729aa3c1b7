//! Minimal hand-rolled SVG plots for probe outputs. No plotting dependency;
//! the files are small static scatter/line charts.

const W: f64 = 640.0;
const H: f64 = 480.0;
const PAD: f64 = 50.0;

pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub points: Vec<(f64, f64)>,
}

fn bounds(all: impl Iterator<Item = (f64, f64)>) -> (f64, f64, f64, f64) {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (x, y) in all {
        if x.is_finite() && y.is_finite() {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    if x0 > x1 {
        (0.0, 1.0, 0.0, 1.0)
    } else {
        let dx = (x1 - x0).max(1e-12);
        let dy = (y1 - y0).max(1e-12);
        (x0 - 0.05 * dx, x1 + 0.05 * dx, y0 - 0.05 * dy, y1 + 0.05 * dy)
    }
}

fn header(title: &str, x0: f64, x1: f64, y0: f64, y1: f64) -> String {
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<text x=\"{tx}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" ",
            "text-anchor=\"middle\">{title}</text>\n",
            "<line x1=\"{p}\" y1=\"{hb}\" x2=\"{wb}\" y2=\"{hb}\" stroke=\"black\"/>\n",
            "<line x1=\"{p}\" y1=\"{p}\" x2=\"{p}\" y2=\"{hb}\" stroke=\"black\"/>\n",
            "<text x=\"{p}\" y=\"{hl}\" font-family=\"sans-serif\" font-size=\"11\">{x0:.3}</text>\n",
            "<text x=\"{wb}\" y=\"{hl}\" font-family=\"sans-serif\" font-size=\"11\" ",
            "text-anchor=\"end\">{x1:.3}</text>\n",
            "<text x=\"{p2}\" y=\"{hb}\" font-family=\"sans-serif\" font-size=\"11\">{y0:.3}</text>\n",
            "<text x=\"{p2}\" y=\"{p}\" font-family=\"sans-serif\" font-size=\"11\">{y1:.3}</text>\n",
        ),
        w = W,
        h = H,
        tx = W / 2.0,
        title = title,
        p = PAD,
        p2 = 4.0,
        wb = W - PAD,
        hb = H - PAD,
        hl = H - PAD + 16.0,
        x0 = x0,
        x1 = x1,
        y0 = y0,
        y1 = y1,
    )
}

fn map(x: f64, y: f64, b: (f64, f64, f64, f64)) -> (f64, f64) {
    let (x0, x1, y0, y1) = b;
    (
        PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD),
        H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD),
    )
}

/// Scatter with an optional per-point scalar mapped to a blue-to-red ramp.
pub fn scatter_plot_svg(title: &str, points: &[(f64, f64, Option<f64>)]) -> String {
    let b = bounds(points.iter().map(|&(x, y, _)| (x, y)));
    let mut svg = header(title, b.0, b.1, b.2, b.3);
    let (vmin, vmax) = points
        .iter()
        .filter_map(|p| p.2)
        .fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)));
    for &(x, y, v) in points {
        if !x.is_finite() || !y.is_finite() {
            continue;
        }
        let (px, py) = map(x, y, b);
        let color = match v {
            Some(val) if vmax > vmin => {
                let t = (val - vmin) / (vmax - vmin);
                format!(
                    "rgb({},{},{})",
                    (40.0 + 215.0 * t) as u8,
                    60,
                    (255.0 - 215.0 * t) as u8
                )
            }
            _ => "rgb(60,60,200)".to_string(),
        };
        svg.push_str(&format!(
            "<circle cx=\"{px:.1}\" cy=\"{py:.1}\" r=\"3\" fill=\"{color}\" fill-opacity=\"0.75\"/>\n"
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Line chart over one or more series.
pub fn line_plot_svg(title: &str, series: &[Series]) -> String {
    let b = bounds(series.iter().flat_map(|s| s.points.iter().copied()));
    let mut svg = header(title, b.0, b.1, b.2, b.3);
    for (si, s) in series.iter().enumerate() {
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .enumerate()
            .map(|(i, &(x, y))| {
                let (px, py) = map(x, y, b);
                format!("{}{px:.1},{py:.1}", if i == 0 { "M" } else { "L" })
            })
            .collect();
        svg.push_str(&format!(
            "<path d=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
            path.concat(),
            s.color
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{}\">{}</text>\n",
            W - PAD - 120.0,
            PAD + 16.0 * si as f64,
            s.color,
            s.label
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn emits_wellformed_svg() {
        let svg = scatter_plot_svg(
            "test",
            &[(0.0, 0.0, Some(1.0)), (1.0, 2.0, Some(3.0)), (0.5, 1.0, None)],
        );
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<circle").count(), 3);

        let line = line_plot_svg(
            "curve",
            &[Series {
                label: "a",
                color: "red",
                points: vec![(0.0, 1.0), (1.0, 3.0)],
            }],
        );
        assert!(line.contains("<path"));
    }
}
