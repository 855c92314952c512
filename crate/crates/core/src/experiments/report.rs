//! CSV, JSON and SVG emission for experiment results.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{Read, Write};

use super::rates::{Quantity, RateMeta, RatePoint, RateReport};
use crate::error::{Error, Result};
use crate::measures::format_f64;
use crate::stability::StabilityReport;

const RATE_HEADER: [&str; 5] = ["n", "mean", "std_error", "trials", "failed"];

pub fn write_rate_csv<W: Write>(report: &RateReport, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(RATE_HEADER)?;
    for p in &report.points {
        wr.write_record([
            p.n.to_string(),
            format_f64(p.mean),
            format_f64(p.std_error),
            p.trials.to_string(),
            p.failed.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads the table written by [`write_rate_csv`].
pub fn read_rate_csv<R: Read>(r: R) -> Result<Vec<RatePoint>> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != RATE_HEADER {
        return Err(Error::Config(format!("unexpected rate table header {header:?}")));
    }
    let parse = |s: &str| -> Result<f64> {
        s.trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad number {s:?} in rate table")))
    };
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row?;
        out.push(RatePoint {
            n: parse(&row[0])? as usize,
            mean: parse(&row[1])?,
            std_error: parse(&row[2])?,
            trials: parse(&row[3])? as usize,
            failed: parse(&row[4])? as usize,
        });
    }
    Ok(out)
}

/// Rebuilds a report (and its fit) from a rate table.
pub fn rate_report_from_csv<R: Read>(quantity: Quantity, meta: RateMeta, r: R) -> Result<RateReport> {
    RateReport::from_points(quantity, read_rate_csv(r)?, meta)
}

/// One row per report; component columns are the union of keys, sorted.
pub fn write_stability_csv<W: Write>(reports: &[StabilityReport], w: W) -> Result<()> {
    let keys: BTreeSet<&str> = reports
        .iter()
        .flat_map(|r| r.components.keys().map(String::as_str))
        .collect();
    let mut wr = csv::Writer::from_writer(w);
    let mut header: Vec<&str> = vec![
        "check", "trial", "seed", "d", "n", "m", "alpha", "beta", "lhs", "rhs", "slack", "violated",
    ];
    header.extend(keys.iter().copied());
    wr.write_record(&header)?;
    for r in reports {
        let mut row = vec![
            r.check.name().to_string(),
            r.trial.to_string(),
            r.meta.seed.to_string(),
            r.meta.d.to_string(),
            r.meta.n.to_string(),
            r.meta.m.to_string(),
            format_f64(r.meta.alpha),
            format_f64(r.meta.beta),
            format_f64(r.lhs),
            format_f64(r.rhs),
            format_f64(r.slack),
            r.violated.to_string(),
        ];
        row.extend(keys.iter().map(|k| r.component(k).map(format_f64).unwrap_or_default()));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

const W: f64 = 640.0;
const H: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

/// Log-log plot of a rate report: means with ±1 standard error bars, the
/// fitted line, and the slope in the title.
pub fn render_svg(report: &RateReport) -> String {
    let pts: Vec<&RatePoint> = report
        .points
        .iter()
        .filter(|p| p.mean > 0.0 && p.mean.is_finite())
        .collect();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let title = format!(
        "{} vs n (d = {}): slope {:.3} ± {:.3}",
        report.quantity.name(),
        report.meta.d,
        report.fit.slope,
        report.fit.slope_ci
    );
    let _ = writeln!(svg, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{title}</text>"#, fmt(W / 2.0));
    if pts.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }

    let lx: Vec<f64> = pts.iter().map(|p| (p.n as f64).log10()).collect();
    let lo_y = |p: &RatePoint| {
        let l = p.mean - p.std_error;
        if l > 0.0 { l } else { p.mean }
    };
    let ly_lo = pts.iter().map(|p| lo_y(p).log10()).fold(f64::INFINITY, f64::min);
    let ly_hi = pts
        .iter()
        .map(|p| (p.mean + p.std_error).log10())
        .fold(f64::NEG_INFINITY, f64::max);
    let (x0, x1) = (lx.iter().copied().fold(f64::INFINITY, f64::min), lx.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let pad_x = ((x1 - x0) * 0.05).max(0.05);
    let pad_y = ((ly_hi - ly_lo) * 0.08).max(0.05);
    let (x0, x1) = (x0 - pad_x, x1 + pad_x);
    let (y0, y1) = (ly_lo - pad_y, ly_hi + pad_y);
    let sx = |v: f64| LEFT + (v - x0) / (x1 - x0) * (W - LEFT - RIGHT);
    let sy = |v: f64| H - BOTTOM - (v - y0) / (y1 - y0) * (H - TOP - BOTTOM);

    let _ = writeln!(
        svg,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        fmt(LEFT),
        fmt(TOP),
        fmt(W - LEFT - RIGHT),
        fmt(H - TOP - BOTTOM)
    );
    for p in &pts {
        let x = sx((p.n as f64).log10());
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            fmt(x),
            fmt(H - BOTTOM + 18.0),
            p.n
        );
    }
    for k in (y0.ceil() as i32)..=(y1.floor() as i32) {
        let y = sy(k as f64);
        let _ = writeln!(
            svg,
            r##"<line x1="{}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">1e{k}</text>"##,
            fmt(LEFT),
            fmt(W - RIGHT),
            fmt(LEFT - 6.0),
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">n (log scale)</text>"#,
        fmt(W / 2.0),
        fmt(H - 16.0)
    );

    let line = |v: f64| report.fit.intercept + report.fit.slope * v * std::f64::consts::LN_10;
    let (a, b) = (x0 + pad_x, x1 - pad_x);
    let _ = writeln!(
        svg,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#c0392b" stroke-width="1.5"/>"##,
        fmt(sx(a)),
        fmt(sy(line(a) / std::f64::consts::LN_10)),
        fmt(sx(b)),
        fmt(sy(line(b) / std::f64::consts::LN_10))
    );
    for p in &pts {
        let x = sx((p.n as f64).log10());
        let (ylo, yhi) = (sy(lo_y(p).log10()), sy((p.mean + p.std_error).log10()));
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{ylo:.2}" x2="{x:.2}" y2="{yhi:.2}" stroke="#2c3e50"/><circle cx="{x:.2}" cy="{:.2}" r="3.5" fill="#2c3e50"/>"##,
            sy(p.mean.log10())
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> RateReport {
        let points = [128usize, 256, 512]
            .iter()
            .map(|&n| RatePoint {
                n,
                mean: (n as f64).powf(-1.0 / 3.0),
                std_error: 0.01,
                trials: 4,
                failed: 0,
            })
            .collect();
        let meta = RateMeta {
            kind: "rate-e2".into(),
            d: 6,
            seed: 1,
            trials: 4,
            alpha: 1.0,
            beta: 1.0,
        };
        RateReport::from_points(Quantity::E2, points, meta).unwrap()
    }

    #[test]
    fn rate_csv_round_trips() {
        let r = report();
        let mut buf = Vec::new();
        write_rate_csv(&r, &mut buf).unwrap();
        let back = rate_report_from_csv(Quantity::E2, r.meta.clone(), buf.as_slice()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn svg_is_well_formed() {
        let svg = render_svg(&report());
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains("slope -0.333"));
    }
}
