//! Minimal static SVG charts.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 4] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title));
}

fn axes(out: &mut String, y_label: &str, y_range: (f64, f64)) {
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, MARGIN);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for i in 0..=4 {
        let v = y_range.0 + (y_range.1 - y_range.0) * i as f64 / 4.0;
        let y = y0 - (y0 - y1) * i as f64 / 4.0;
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, x0 - 6.0, y + 4.0);
    }
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" transform="rotate(-90 16 {:.1})" text-anchor="middle">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
}

fn y_pos(v: f64, range: (f64, f64)) -> f64 {
    let t = ((v - range.0) / (range.1 - range.0)).clamp(0.0, 1.0);
    HEIGHT - MARGIN - t * (HEIGHT - 2.0 * MARGIN)
}

pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<(String, Vec<(f64, f64)>)>,
    /// Horizontal reference line.
    pub reference: Option<(String, f64)>,
    pub y_range: (f64, f64),
}

impl LineChart {
    pub fn render(&self) -> String {
        let mut out = String::new();
        open(&mut out, &self.title);
        axes(&mut out, &self.y_label, self.y_range);
        let xs = self.series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0));
        let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        let x_pos = |x: f64| MARGIN + (x - lo) / span * (WIDTH - 2.0 * MARGIN);
        if lo.is_finite() {
            for x in [lo, hi] {
                let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x}</text>"#, x_pos(x), HEIGHT - MARGIN + 16.0);
            }
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 18.0,
            escape(&self.x_label)
        );
        if let Some((label, v)) = &self.reference {
            let y = y_pos(*v, self.y_range);
            let _ = writeln!(
                out,
                r#"<line x1="{MARGIN}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="gray" stroke-dasharray="5,4"/>"#,
                WIDTH - MARGIN
            );
            let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" fill="gray">{}</text>"#, WIDTH - MARGIN + 4.0, y + 4.0, escape(label));
        }
        for (i, (name, points)) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let path: Vec<String> = points.iter().map(|&(x, y)| format!("{:.1},{:.1}", x_pos(x), y_pos(y, self.y_range))).collect();
            let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, path.join(" "));
            for &(x, y) in points {
                let _ = writeln!(out, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, x_pos(x), y_pos(y, self.y_range));
            }
            let ly = MARGIN + 16.0 * i as f64;
            let _ = writeln!(out, r#"<text x="{:.1}" y="{ly:.1}" fill="{color}">{}</text>"#, MARGIN + 10.0, escape(name));
        }
        out.push_str("</svg>\n");
        out
    }
}

pub struct BarChart {
    pub title: String,
    pub y_label: String,
    pub bars: Vec<(String, f64)>,
    pub reference: Option<f64>,
}

impl BarChart {
    pub fn render(&self) -> String {
        let range = (0.0, 1.0);
        let mut out = String::new();
        open(&mut out, &self.title);
        axes(&mut out, &self.y_label, range);
        let n = self.bars.len().max(1) as f64;
        let slot = (WIDTH - 2.0 * MARGIN) / n;
        for (i, (label, v)) in self.bars.iter().enumerate() {
            let x = MARGIN + slot * i as f64 + slot * 0.15;
            let y = y_pos(*v, range);
            let _ = writeln!(
                out,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="{}"/>"#,
                slot * 0.7,
                HEIGHT - MARGIN - y,
                PALETTE[usize::from(i >= 2)]
            );
            let cx = x + slot * 0.35;
            let _ = writeln!(out, r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{v:.3}</text>"#, y - 4.0);
            let _ = writeln!(out, r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, HEIGHT - MARGIN + 16.0, escape(label));
        }
        if let Some(v) = self.reference {
            let y = y_pos(v, range);
            let _ = writeln!(
                out,
                r#"<line x1="{MARGIN}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="gray" stroke-dasharray="5,4"/>"#,
                WIDTH - MARGIN
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

pub struct Heatmap {
    pub title: String,
    /// Row label and cell values; rows may differ in length.
    pub rows: Vec<(String, Vec<f64>)>,
    pub range: (f64, f64),
}

impl Heatmap {
    /// White at the bottom of the range, dark blue at the top.
    fn color(&self, v: f64) -> String {
        let t = ((v - self.range.0) / (self.range.1 - self.range.0)).clamp(0.0, 1.0);
        let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
        format!("#{:02x}{:02x}{:02x}", lerp(255.0, 8.0), lerp(255.0, 48.0), lerp(255.0, 107.0))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        open(&mut out, &self.title);
        let cols = self.rows.iter().map(|r| r.1.len()).max().unwrap_or(0).max(1) as f64;
        let nrows = self.rows.len().max(1) as f64;
        let left = MARGIN + 20.0;
        let cw = (WIDTH - left - MARGIN) / cols;
        let ch = (HEIGHT - 2.0 * MARGIN) / nrows;
        for (r, (label, values)) in self.rows.iter().enumerate() {
            let y = MARGIN + ch * r as f64;
            let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, left - 6.0, y + ch / 2.0 + 4.0, escape(label));
            for (c, v) in values.iter().enumerate() {
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.1}" y="{y:.1}" width="{cw:.1}" height="{ch:.1}" fill="{}"><title>{v:.4}</title></rect>"#,
                    left + cw * c as f64,
                    self.color(*v)
                );
            }
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">cluster (ascending mean recall)</text>"#,
            (left + WIDTH - MARGIN) / 2.0,
            HEIGHT - MARGIN + 20.0
        );
        out.push_str("</svg>\n");
        out
    }
}
