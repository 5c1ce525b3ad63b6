//! Minimal SVG emission for the three report plots.
//!
//! Every plot uses a fixed `0 0 960 540` view box with a plot area inset
//! by [`MARGIN`]. Logarithmic axes map a value `v` in `[lo, hi]` to
//! `px_lo + (ln v − ln lo) / (ln hi − ln lo) · (px_hi − px_lo)`; linear axes
//! use the same formula without the logarithms. Coordinates are printed with
//! two decimals so identical inputs give byte-identical files.

use std::fmt::Write as _;

use waterline_core::perf::{Bound, SweepPoint};
use waterline_core::{ExecutionScheme, GapPoint, Waterline};

pub const WIDTH: f64 = 960.0;
pub const HEIGHT: f64 = 540.0;

/// Left, right, top and bottom insets of the plot area.
pub const MARGIN: (f64, f64, f64, f64) = (90.0, 30.0, 50.0, 70.0);

const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

#[derive(Debug, Clone, Copy)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub px_lo: f64,
    pub px_hi: f64,
    pub log: bool,
}

impl Axis {
    pub fn x(lo: f64, hi: f64, log: bool) -> Self {
        Self { lo, hi, px_lo: MARGIN.0, px_hi: WIDTH - MARGIN.1, log }
    }

    /// Vertical axes grow upwards.
    pub fn y(lo: f64, hi: f64, log: bool) -> Self {
        Self { lo, hi, px_lo: HEIGHT - MARGIN.3, px_hi: MARGIN.2, log }
    }

    pub fn map(&self, v: f64) -> f64 {
        let f = |x: f64| if self.log { x.ln() } else { x };
        let t = if self.hi == self.lo { 0.5 } else { (f(v) - f(self.lo)) / (f(self.hi) - f(self.lo)) };
        self.px_lo + t.clamp(0.0, 1.0) * (self.px_hi - self.px_lo)
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let (a, b) = (self.lo.log10().ceil() as i32, self.hi.log10().floor() as i32);
            (a..=b).map(|e| 10f64.powi(e)).collect()
        } else {
            let step = nice_step((self.hi - self.lo) / 5.0);
            let first = (self.lo / step).ceil() as i64;
            let last = (self.hi / step).floor() as i64;
            (first..=last).map(|i| i as f64 * step).collect()
        }
    }
}

fn nice_step(raw: f64) -> f64 {
    let mag = 10f64.powf(raw.log10().floor());
    let n = raw / mag;
    mag * if n <= 1.0 { 1.0 } else if n <= 2.0 { 2.0 } else if n <= 5.0 { 5.0 } else { 10.0 }
}

fn log_range(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .into_iter()
        .filter(|v| v.is_finite() && *v > 0.0)
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi == 0.0 {
        return (0.1, 10.0);
    }
    (lo / 2.0, hi * 2.0)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    if !(1e-2..1e4).contains(&v) {
        format!("{v:e}")
    } else {
        let s = format!("{v:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

pub struct Svg {
    body: String,
}

impl Default for Svg {
    fn default() -> Self {
        Self::new()
    }
}

impl Svg {
    pub fn new() -> Self {
        let mut body = String::new();
        let _ = writeln!(
            body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(body, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        Self { body }
    }

    pub fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, extra: &str) {
        let _ = writeln!(self.body, r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}"{extra}/>"#);
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, class: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect class="{class}" x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
            w.max(0.0),
            h.max(0.0)
        );
    }

    pub fn circle(&mut self, cx: f64, cy: f64, r: f64, fill: &str, stroke: &str, class: &str) {
        let _ = writeln!(
            self.body,
            r#"<circle class="{class}" cx="{cx:.2}" cy="{cy:.2}" r="{r}" fill="{fill}" stroke="{stroke}"/>"#
        );
    }

    pub fn polyline(&mut self, points: &[(f64, f64)], stroke: &str, class: &str, extra: &str) {
        let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            self.body,
            r#"<polyline class="{class}" points="{}" fill="none" stroke="{stroke}" stroke-width="2"{extra}/>"#,
            pts.join(" ")
        );
    }

    pub fn text(&mut self, x: f64, y: f64, anchor: &str, class: &str, content: &str) {
        let _ = writeln!(
            self.body,
            r#"<text class="{class}" x="{x:.2}" y="{y:.2}" text-anchor="{anchor}">{}</text>"#,
            escape(content)
        );
    }

    pub fn axes(&mut self, x: &Axis, y: &Axis, x_label: &str, y_label: &str) {
        let (left, right) = (x.px_lo, x.px_hi);
        let (bottom, top) = (y.px_lo, y.px_hi);
        self.line(left, bottom, right, bottom, "black", "");
        self.line(left, bottom, left, top, "black", "");
        for t in x.ticks() {
            let px = x.map(t);
            self.line(px, bottom, px, bottom + 5.0, "black", "");
            self.text(px, bottom + 18.0, "middle", "tick", &tick_label(t));
        }
        for t in y.ticks() {
            let py = y.map(t);
            self.line(left - 5.0, py, left, py, "black", "");
            self.text(left - 8.0, py + 4.0, "end", "tick", &tick_label(t));
        }
        self.text((left + right) / 2.0, HEIGHT - 20.0, "middle", "axis", x_label);
        let _ = writeln!(
            self.body,
            r#"<text class="axis" x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">{}</text>"#,
            (top + bottom) / 2.0,
            (top + bottom) / 2.0,
            escape(y_label)
        );
    }

    pub fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

/// The waterline "well": each kernel spans its attainable latency on the x
/// axis at the height of its operational intensity. Memory-bound kernels are
/// filled with water up to the device op:byte line.
pub fn waterline_plot(title: &str, verdict: &Waterline, op_byte: f64) -> String {
    let total_ms = verdict.total_latency * 1e3;
    let (lo, hi) = log_range(verdict.verdicts.iter().map(|v| v.intensity).chain([op_byte]));
    let x = Axis::x(0.0, total_ms, false);
    let y = Axis::y(lo, hi, true);
    let mut svg = Svg::new();
    svg.text(WIDTH / 2.0, 28.0, "middle", "title", title);
    let mut floor = Vec::with_capacity(2 * verdict.verdicts.len());
    let mut t = 0.0;
    let water_py = y.map(op_byte);
    for v in &verdict.verdicts {
        let x0 = x.map(t);
        t += v.latency * 1e3;
        let x1 = x.map(t);
        let py = if v.intensity.is_finite() { y.map(v.intensity) } else { y.px_hi };
        if v.bound == Bound::Memory {
            svg.rect(x0, water_py, x1 - x0, py - water_py, "#9ecae1", "water");
        }
        floor.push((x0, py));
        floor.push((x1, py));
    }
    svg.polyline(&floor, "#333333", "well", "");
    svg.line(x.px_lo, water_py, x.px_hi, water_py, "#08519c", r#" stroke-dasharray="6 4" class="waterline""#);
    svg.text(x.px_hi - 4.0, water_py - 6.0, "end", "waterline-label", &format!("op:byte {op_byte:.0}"));
    svg.text(
        x.px_lo + 10.0,
        y.px_hi + 16.0,
        "start",
        "efficiency",
        &format!("max efficiency: {:.0}%", verdict.max_efficiency * 100.0),
    );
    svg.axes(&x, &y, "cumulative attainable latency (ms)", "operational intensity (OP/byte)");
    svg.finish()
}

/// Accuracy against latency on a log axis. Each model with an accuracy gets
/// an ideal marker (hollow) and a measured marker (filled) joined by a gap
/// segment labeled with its efficiency.
pub fn gap_plot(points: &[GapPoint]) -> String {
    let placed: Vec<&GapPoint> = points.iter().filter(|p| p.accuracy.is_some()).collect();
    let (lo, hi) = log_range(placed.iter().flat_map(|p| [p.ideal_latency * 1e3, p.actual_latency * 1e3]));
    let (alo, ahi) = placed
        .iter()
        .filter_map(|p| p.accuracy)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| (lo.min(a), hi.max(a)));
    let (alo, ahi) = if alo.is_finite() { (alo - 0.5, ahi + 0.5) } else { (0.0, 100.0) };
    let x = Axis::x(lo, hi, true);
    let y = Axis::y(alo, ahi, false);
    let mut svg = Svg::new();
    svg.text(WIDTH / 2.0, 28.0, "middle", "title", "efficiency gap");
    for p in placed {
        let acc = p.accuracy.unwrap_or_default();
        let py = y.map(acc);
        let (xi, xa) = (x.map(p.ideal_latency * 1e3), x.map(p.actual_latency * 1e3));
        svg.line(xi, py, xa, py, "#888888", r#" class="gap""#);
        svg.circle(xi, py, 4.0, "white", "#1f77b4", "ideal");
        svg.circle(xa, py, 4.0, "#d62728", "#d62728", "actual");
        svg.text((xi + xa) / 2.0, py - 6.0, "middle", "efficiency", &format!("{:.0}%", p.efficiency * 100.0));
        svg.text(xa + 7.0, py + 4.0, "start", "model", &p.model);
    }
    svg.axes(&x, &y, "latency (ms, log scale)", "top-1 accuracy (%)");
    svg.finish()
}

/// One curve per scheme and bound: solid for the waterline, dashed for the
/// roofline.
pub fn sweep_plot(title: &str, curves: &[(ExecutionScheme, Vec<SweepPoint<f64>>)]) -> String {
    let (lo, hi) = curves
        .iter()
        .flat_map(|(_, c)| c.iter().map(|p| p.op_byte))
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let x = Axis::x(lo, hi, true);
    let y = Axis::y(0.0, 1.0, false);
    let mut svg = Svg::new();
    svg.text(WIDTH / 2.0, 28.0, "middle", "title", title);
    for (i, (scheme, curve)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let water: Vec<(f64, f64)> = curve.iter().map(|p| (x.map(p.op_byte), y.map(p.waterline))).collect();
        let roof: Vec<(f64, f64)> = curve.iter().map(|p| (x.map(p.op_byte), y.map(p.roofline))).collect();
        svg.polyline(&water, color, "waterline", "");
        svg.polyline(&roof, color, "roofline", r#" stroke-dasharray="6 4""#);
        let ly = y.px_hi + 16.0 + 16.0 * i as f64;
        svg.text(x.px_hi - 4.0, ly, "end", "legend", &format!("{} (solid: waterline, dashed: roofline)", scheme.name()));
    }
    svg.axes(&x, &y, "op:byte ratio (log scale)", "computational efficiency");
    svg.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_axis_maps_decades_evenly() {
        let a = Axis::x(1.0, 1000.0, true);
        let step = a.map(10.0) - a.map(1.0);
        assert!((a.map(100.0) - a.map(10.0) - step).abs() < 1e-9);
        assert_eq!(a.map(1.0), MARGIN.0);
        assert_eq!(a.map(1000.0), WIDTH - MARGIN.1);
    }

    #[test]
    fn y_axis_points_up() {
        let a = Axis::y(0.0, 1.0, false);
        assert!(a.map(1.0) < a.map(0.0));
    }

    #[test]
    fn text_is_escaped() {
        let mut s = Svg::new();
        s.text(0.0, 0.0, "start", "t", "a<b & c");
        assert!(s.finish().contains("a&lt;b &amp; c"));
    }
}
