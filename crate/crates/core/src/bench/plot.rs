//! Minimal SVG line plot of BER against the sweep axis.

use std::fmt::Write;

use super::{bits_per_frame, BerRecord, SweepAxis};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PlotOptions {
    pub width: f64,
    pub height: f64,
    pub title: Option<String>,
}

impl Default for PlotOptions {
    fn default() -> Self {
        Self {
            width: 640.0,
            height: 420.0,
            title: None,
        }
    }
}

const PALETTE: &[&str] = &[
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 170.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

fn x_value(r: &BerRecord, axis: SweepAxis) -> Option<f64> {
    match axis {
        SweepAxis::Snr => Some(r.snr_db),
        SweepAxis::Alpha => r.alpha,
    }
}

/// Renders one series per detector (in first-appearance order) on a log
/// BER axis. A BER of 0 is drawn as a hollow marker at `1/(frames·bits)`,
/// the resolution of the point, with an annotation. Failed rows are skipped.
/// Output depends only on the input rows.
pub fn emit_plot(records: &[BerRecord], axis: SweepAxis, opts: &PlotOptions) -> Result<String> {
    let rows: Vec<(&BerRecord, f64)> = records
        .iter()
        .filter(|r| !r.failed())
        .filter_map(|r| x_value(r, axis).map(|x| (r, x)))
        .collect();
    if rows.is_empty() {
        return Err(Error::config("empty plot: no rows with a finite BER on this axis"));
    }
    let floor_of = |r: &BerRecord| 1.0 / (r.frames.max(1) * bits_per_frame(r.n_tx)) as f64;
    let plotted = |r: &BerRecord| if r.ber > 0.0 { r.ber } else { floor_of(r) };

    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for (r, x) in &rows {
        x_min = x_min.min(*x);
        x_max = x_max.max(*x);
        let y = plotted(r).log10();
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if x_max - x_min < 1e-12 {
        x_min -= 1.0;
        x_max += 1.0;
    }
    let (d_lo, mut d_hi) = (y_min.floor(), y_max.ceil());
    if d_hi <= d_lo {
        d_hi = d_lo + 1.0;
    }

    let (w, h) = (opts.width, opts.height);
    let (pw, ph) = (w - MARGIN_L - MARGIN_R, h - MARGIN_T - MARGIN_B);
    let sx = |x: f64| MARGIN_L + (x - x_min) / (x_max - x_min) * pw;
    let sy = |y: f64| MARGIN_T + (d_hi - y) / (d_hi - d_lo) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);

    let first = rows[0].0;
    let title = opts.title.clone().unwrap_or_else(|| {
        let fixed = match axis {
            SweepAxis::Snr => first.alpha.map(|a| format!(", alpha={a}")).unwrap_or_default(),
            SweepAxis::Alpha => format!(", SNR={} dB", first.snr_db),
        };
        format!("{} noise, {}x{}{fixed}, {} frames/point", first.family, first.n_tx, first.n_rx, first.frames)
    });
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        MARGIN_L + pw / 2.0,
        escape(&title)
    );

    // frame, decade grid and labels
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN_L:.2}" y="{MARGIN_T:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
    );
    let mut d = d_lo;
    while d <= d_hi + 1e-9 {
        let y = sy(d);
        let _ = writeln!(
            svg,
            r##"<line x1="{MARGIN_L:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##,
            MARGIN_L + pw
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{d:.0}</text>"#,
            MARGIN_L - 6.0,
            y + 4.0
        );
        d += 1.0;
    }
    let mut xs: Vec<f64> = rows.iter().map(|(_, x)| *x).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    for x in &xs {
        let px = sx(*x);
        let _ = writeln!(
            svg,
            r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{x}</text>"#,
            MARGIN_T + ph + 18.0
        );
    }
    let x_label = match axis {
        SweepAxis::Snr => "SNR (dB)",
        SweepAxis::Alpha => "alpha",
    };
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{x_label}</text>"#,
        MARGIN_L + pw / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">BER</text>"#,
        MARGIN_T + ph / 2.0,
        MARGIN_T + ph / 2.0
    );

    let mut labels: Vec<&str> = Vec::new();
    for (r, _) in &rows {
        if !labels.contains(&r.detector.as_str()) {
            labels.push(&r.detector);
        }
    }
    for (si, label) in labels.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let mut pts: Vec<(f64, &BerRecord)> =
            rows.iter().filter(|(r, _)| r.detector == *label).map(|(r, x)| (*x, *r)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let path: Vec<String> = pts
            .iter()
            .map(|(x, r)| format!("{:.2},{:.2}", sx(*x), sy(plotted(r).log10())))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
        for (x, r) in &pts {
            let (px, py) = (sx(*x), sy(plotted(r).log10()));
            if r.ber > 0.0 {
                let _ = writeln!(
                    svg,
                    r#"<circle class="marker" cx="{px:.2}" cy="{py:.2}" r="3" fill="{color}"><title>{}: {:e}</title></circle>"#,
                    escape(label),
                    r.ber
                );
            } else {
                let _ = writeln!(
                    svg,
                    r#"<circle class="marker floor" cx="{px:.2}" cy="{py:.2}" r="4" fill="none" stroke="{color}"><title>{}: 0 errors, below {:e}</title></circle>"#,
                    escape(label),
                    floor_of(r)
                );
                let _ = writeln!(
                    svg,
                    r#"<text x="{:.2}" y="{:.2}" font-size="9" fill="{color}">0 err</text>"#,
                    px + 5.0,
                    py - 5.0
                );
            }
        }
        let ly = MARGIN_T + 10.0 + 18.0 * si as f64;
        let lx = MARGIN_L + pw + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(det: &str, snr: f64, ber: f64) -> BerRecord {
        BerRecord {
            detector: det.into(),
            family: "sas".into(),
            alpha: Some(1.9),
            sigma: 0.1,
            snr_db: snr,
            n_tx: 4,
            n_rx: 4,
            frames: 1000,
            bit_errors: (ber * 8000.0) as u64,
            ber,
            divergence_count: 0,
            seed: 1,
            wall_time_s: 0.0,
        }
    }

    #[test]
    fn two_series_five_points() {
        let mut rows = Vec::new();
        for (i, snr) in [10.0, 15.0, 20.0, 25.0, 30.0].iter().enumerate() {
            rows.push(rec("E-MLE", *snr, 0.1 / (i + 1) as f64));
            rows.push(rec("MANFE", *snr, if i == 4 { 0.0 } else { 0.05 / (i + 1) as f64 }));
        }
        let svg = emit_plot(&rows, SweepAxis::Snr, &PlotOptions::default()).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches(r#"class="marker"#).count(), 10);
        assert_eq!(svg.matches("marker floor").count(), 1);
        assert!(svg.contains("0 errors, below 1.25e-4"));
        assert_eq!(svg, emit_plot(&rows, SweepAxis::Snr, &PlotOptions::default()).unwrap());
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(emit_plot(&[], SweepAxis::Snr, &PlotOptions::default()).is_err());
        let failed = rec("E-MLE", 10.0, f64::NAN);
        assert!(emit_plot(&[failed], SweepAxis::Snr, &PlotOptions::default()).is_err());
    }
}
