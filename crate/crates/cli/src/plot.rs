//! Self-contained log-log SVG of mean estimate against n, one curve per σ.

use std::fmt::Write as _;

use got_core::experiments::{summarize, CellSummary, ResultTable};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

struct Axis {
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl Axis {
    fn map(&self, v: f64) -> f64 {
        let t = (v.log10() - self.lo) / (self.hi - self.lo);
        self.px_lo + t * (self.px_hi - self.px_lo)
    }

    /// Decade ticks, plus 2 and 5 multiples when the range spans few decades.
    fn ticks(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let dense = self.hi - self.lo < 2.5;
        for e in self.lo.floor() as i32..=self.hi.ceil() as i32 {
            for mult in [1.0, 2.0, 5.0] {
                if mult != 1.0 && !dense {
                    continue;
                }
                let v = mult * 10f64.powi(e);
                let l = v.log10();
                if l >= self.lo - 1e-9 && l <= self.hi + 1e-9 {
                    out.push(v);
                }
            }
        }
        out
    }
}

fn padded_log_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v.log10());
        hi = hi.max(v.log10());
    }
    if hi - lo < 1e-9 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn label(v: f64) -> String {
    if (1e-3..1e5).contains(&v.abs()) {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.0e}")
    }
}

pub fn render_svg(table: &ResultTable, title: &str) -> String {
    let cells = summarize(table);
    let plotted: Vec<&CellSummary> = cells.iter().filter(|c| c.mean > 0.0).collect();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, "<!-- columns: sigma,n,m,mean,std_err,trials -->");
    for c in &cells {
        let _ = writeln!(svg, "<!-- data: {},{},{},{},{},{} -->", c.sigma, c.n, c.m, c.mean, c.std_err, c.trials);
    }
    for c in cells.iter().filter(|c| c.mean <= 0.0) {
        let _ = writeln!(svg, "<!-- skipped non-positive mean: sigma={} n={} -->", c.sigma, c.n);
    }
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="28" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + (WIDTH - LEFT - RIGHT) / 2.0,
        escape(title)
    );
    if plotted.is_empty() {
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">no positive means to plot</text>"#, WIDTH / 2.0, HEIGHT / 2.0);
        svg.push_str("</svg>\n");
        return svg;
    }

    let (xlo, xhi) = padded_log_range(plotted.iter().map(|c| c.n as f64));
    let (ylo, yhi) = padded_log_range(
        plotted
            .iter()
            .flat_map(|c| [c.mean + c.std_err, if c.mean > c.std_err { c.mean - c.std_err } else { c.mean }]),
    );
    let x = Axis { lo: xlo, hi: xhi, px_lo: LEFT, px_hi: WIDTH - RIGHT };
    let y = Axis { lo: ylo, hi: yhi, px_lo: HEIGHT - BOTTOM, px_hi: TOP };

    let _ = writeln!(
        svg,
        "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>",
        WIDTH - LEFT - RIGHT,
        HEIGHT - TOP - BOTTOM
    );
    for t in x.ticks() {
        let px = x.map(t);
        let _ = writeln!(
            svg,
            "<line x1=\"{px:.2}\" y1=\"{TOP}\" x2=\"{px:.2}\" y2=\"{}\" stroke=\"#ddd\"/><text x=\"{px:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            HEIGHT - BOTTOM,
            HEIGHT - BOTTOM + 18.0,
            label(t)
        );
    }
    for t in y.ticks() {
        let py = y.map(t);
        let _ = writeln!(
            svg,
            "<line x1=\"{LEFT}\" y1=\"{py:.2}\" x2=\"{}\" y2=\"{py:.2}\" stroke=\"#ddd\"/><text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            WIDTH - RIGHT,
            LEFT - 6.0,
            py + 4.0,
            label(t)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">n (samples)</text>"#,
        LEFT + (WIDTH - LEFT - RIGHT) / 2.0,
        HEIGHT - 18.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="22" y="{0}" text-anchor="middle" transform="rotate(-90 22 {0})">mean estimate</text>"#,
        TOP + (HEIGHT - TOP - BOTTOM) / 2.0
    );

    let mut sigmas: Vec<f64> = plotted.iter().map(|c| c.sigma).collect();
    sigmas.sort_by(f64::total_cmp);
    sigmas.dedup();
    for (k, &s) in sigmas.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let curve: Vec<&&CellSummary> = plotted.iter().filter(|c| c.sigma == s).collect();
        let pts: Vec<String> = curve.iter().map(|c| format!("{:.2},{:.2}", x.map(c.n as f64), y.map(c.mean))).collect();
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        for c in &curve {
            let (px, py) = (x.map(c.n as f64), y.map(c.mean));
            if c.std_err > 0.0 && c.mean > c.std_err {
                let _ = writeln!(
                    svg,
                    r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="{color}"/>"#,
                    y.map(c.mean - c.std_err),
                    y.map(c.mean + c.std_err)
                );
            }
            let _ = writeln!(svg, r#"<circle cx="{px:.2}" cy="{py:.2}" r="3" fill="{color}"/>"#);
        }
        let ly = TOP + 16.0 + 20.0 * k as f64;
        let lx = WIDTH - RIGHT + 16.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">σ = {}</text>"#,
            lx + 24.0,
            lx + 30.0,
            ly + 4.0,
            s
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
