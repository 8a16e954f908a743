//! Standalone SVG figures: shaded 95% band, median line, date axis.

use std::fmt::Write as _;

use chrono::{Datelike, Duration, NaiveDate};

use super::{ProjectionResult, QuantileBand, RegionSummary};

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 260.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 15.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 40.0;

struct Panel<'a> {
    title: &'a str,
    band: &'a QuantileBand,
    scale: f64,
    /// Horizontal reference line, e.g. r = 1.
    reference: Option<f64>,
}

fn fmt_tick(v: f64) -> String {
    let a = v.abs();
    if a >= 1e6 {
        format!("{:.1}M", v / 1e6)
    } else if a >= 1e3 {
        format!("{:.0}k", v / 1e3)
    } else if a >= 10.0 || a == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn draw_panel(out: &mut String, p: &Panel, first_day: NaiveDate, x0: f64, y0: f64) {
    let lo_level = p.band.levels.first().copied().unwrap_or(0.025);
    let hi_level = p.band.levels.last().copied().unwrap_or(0.975);
    let pts: Vec<(usize, f64, f64, f64)> = (0..p.band.days())
        .filter_map(|d| {
            Some((
                d,
                p.band.at(d, lo_level)? * p.scale,
                p.band.median(d)? * p.scale,
                p.band.at(d, hi_level)? * p.scale,
            ))
        })
        .filter(|t| t.1.is_finite() && t.3.is_finite())
        .collect();
    let w = PANEL_W - MARGIN_L - MARGIN_R;
    let h = PANEL_H - MARGIN_T - MARGIN_B;
    let (left, top) = (x0 + MARGIN_L, y0 + MARGIN_T);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="14" text-anchor="middle">{}</text>"#,
        left + w / 2.0,
        y0 + 18.0,
        p.title
    );
    let _ = writeln!(
        out,
        r##"<rect x="{left:.1}" y="{top:.1}" width="{w:.1}" height="{h:.1}" fill="none" stroke="#444"/>"##
    );
    let days = p.band.days().max(2);
    let mut ymin = pts.iter().map(|t| t.1).fold(f64::INFINITY, f64::min).min(p.reference.unwrap_or(f64::INFINITY));
    let mut ymax = pts.iter().map(|t| t.3).fold(f64::NEG_INFINITY, f64::max).max(p.reference.unwrap_or(f64::NEG_INFINITY));
    if !ymin.is_finite() || !ymax.is_finite() {
        (ymin, ymax) = (0.0, 1.0);
    }
    ymin = ymin.min(0.0);
    if ymax <= ymin {
        ymax = ymin + 1.0;
    }
    let sx = |d: usize| left + w * d as f64 / (days - 1) as f64;
    let sy = |v: f64| top + h * (1.0 - (v - ymin) / (ymax - ymin));
    for k in 0..=4 {
        let v = ymin + (ymax - ymin) * k as f64 / 4.0;
        let y = sy(v);
        let _ = writeln!(
            out,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{left:.1}" y2="{y:.1}" stroke="#444"/><text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{}</text>"##,
            left - 4.0,
            left - 6.0,
            y + 3.0,
            fmt_tick(v)
        );
    }
    // Month starts along the bottom axis.
    for d in 0..p.band.days() {
        let date = first_day + Duration::days(d as i64);
        if date.day() == 1 {
            let x = sx(d);
            let _ = writeln!(
                out,
                r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#444"/><text x="{x:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"##,
                top + h,
                top + h + 4.0,
                top + h + 16.0,
                date.format("%b %y")
            );
        }
    }
    if let Some(r) = p.reference {
        let y = sy(r);
        let _ = writeln!(
            out,
            r##"<line x1="{left:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#999" stroke-dasharray="4 3"/>"##,
            left + w
        );
    }
    if pts.is_empty() {
        return;
    }
    let mut poly = String::new();
    for t in &pts {
        let _ = write!(poly, "{:.2},{:.2} ", sx(t.0), sy(t.3));
    }
    for t in pts.iter().rev() {
        let _ = write!(poly, "{:.2},{:.2} ", sx(t.0), sy(t.1));
    }
    let _ = writeln!(
        out,
        r##"<polygon points="{}" fill="#9ecae1" fill-opacity="0.6" stroke="none"/>"##,
        poly.trim_end()
    );
    let line: Vec<String> = pts.iter().map(|t| format!("{:.2},{:.2}", sx(t.0), sy(t.2))).collect();
    let _ = writeln!(
        out,
        r##"<polyline points="{}" fill="none" stroke="#08519c" stroke-width="1.5"/>"##,
        line.join(" ")
    );
}

fn document(title: &str, panels: &[Panel], first_day: NaiveDate) -> String {
    let cols = 2usize.min(panels.len().max(1));
    let rows = panels.len().div_ceil(cols);
    let width = PANEL_W * cols as f64;
    let height = PANEL_H * rows as f64 + 30.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="20" font-size="16" font-weight="bold" text-anchor="middle">{}</text>"#,
        width / 2.0,
        title
    );
    for (k, p) in panels.iter().enumerate() {
        let x0 = PANEL_W * (k % cols) as f64;
        let y0 = 30.0 + PANEL_H * (k / cols) as f64;
        draw_panel(&mut out, p, first_day, x0, y0);
    }
    out.push_str("</svg>\n");
    out
}

/// New infections, cumulative incidence, r(t) and undercount in a 2x2 grid.
pub fn summary_svg(s: &RegionSummary) -> String {
    let panels = [
        Panel {
            title: "New infections",
            band: &s.daily_infections,
            scale: 1.0,
            reference: None,
        },
        Panel {
            title: "Cumulative incidence (%)",
            band: &s.cumulative_incidence,
            scale: 100.0,
            reference: None,
        },
        Panel {
            title: "r(t)",
            band: &s.r_t,
            scale: 1.0,
            reference: Some(1.0),
        },
        Panel {
            title: "Undercount factor",
            band: &s.undercount,
            scale: 1.0,
            reference: Some(1.0),
        },
    ];
    document(&s.region_code, &panels, s.first_day)
}

/// New infections and cumulative immunity side by side.
pub fn projection_svg(p: &ProjectionResult) -> String {
    let panels = [
        Panel {
            title: "New infections",
            band: &p.daily_infections,
            scale: 1.0,
            reference: None,
        },
        Panel {
            title: "Cumulative immunity (%)",
            band: &p.cumulative_immunity,
            scale: 100.0,
            reference: None,
        },
    ];
    document(&format!("{} projection", p.region_code), &panels, p.first_day)
}
