//! CSV and SVG output.
//!
//! * scores: `subject_id, structure, dice, precision, recall`
//! * tpv: `subject_id, gt_ml, pred_ml, percent_diff`
//! * ba: `n, mean_diff, sd_diff, loa_low, loa_high, rpc, rpc_pct, cv_pct, pearson_r`
//!
//! Numbers are written in shortest round-trip form, so re-parsing recovers
//! them exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::cascade::Structure;
use crate::error::{Error, Result};
use crate::metrics::overlap::VolumeScores;
use crate::metrics::stats::{BlandAltmanStats, TpvRecord};

pub const SCORES_HEADER: [&str; 5] = ["subject_id", "structure", "dice", "precision", "recall"];
pub const TPV_HEADER: [&str; 4] = ["subject_id", "gt_ml", "pred_ml", "percent_diff"];
pub const BA_HEADER: [&str; 9] = ["n", "mean_diff", "sd_diff", "loa_low", "loa_high", "rpc", "rpc_pct", "cv_pct", "pearson_r"];

pub fn write_scores_csv(scores: &[VolumeScores], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SCORES_HEADER)?;
    for v in scores {
        for (st, s) in Structure::ALL.iter().zip(&v.scores) {
            w.write_record([v.subject_id.clone(), st.name().into(), s.dice.to_string(), s.precision.to_string(), s.recall.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_tpv_csv(records: &[TpvRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TPV_HEADER)?;
    for r in records {
        w.write_record([r.subject_id.clone(), r.gt_ml.to_string(), r.pred_ml.to_string(), r.percent_diff.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn check_header(rd: &mut csv::Reader<std::fs::File>, expected: &[&str]) -> Result<()> {
    let h = rd.headers()?;
    if h.iter().ne(expected.iter().copied()) {
        return Err(Error::invalid(format!("expected CSV columns {expected:?}, found {:?}", h.iter().collect::<Vec<_>>())));
    }
    Ok(())
}

fn number(field: &str, column: &str) -> Result<f64> {
    field.parse().map_err(|_| Error::invalid(format!("column {column}: cannot parse {field:?}")))
}

pub fn read_tpv_csv(path: impl AsRef<Path>) -> Result<Vec<TpvRecord>> {
    let mut rd = csv::Reader::from_path(path)?;
    check_header(&mut rd, &TPV_HEADER)?;
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row?;
        out.push(TpvRecord {
            subject_id: row[0].to_string(),
            gt_ml: number(&row[1], "gt_ml")?,
            pred_ml: number(&row[2], "pred_ml")?,
            percent_diff: number(&row[3], "percent_diff")?,
        });
    }
    Ok(out)
}

pub fn read_scores_csv(path: impl AsRef<Path>) -> Result<Vec<(String, String, [f64; 3])>> {
    let mut rd = csv::Reader::from_path(path)?;
    check_header(&mut rd, &SCORES_HEADER)?;
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row?;
        out.push((
            row[0].to_string(),
            row[1].to_string(),
            [number(&row[2], "dice")?, number(&row[3], "precision")?, number(&row[4], "recall")?],
        ));
    }
    Ok(out)
}

pub fn write_ba_csv(stats: &BlandAltmanStats, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(BA_HEADER)?;
    w.write_record([
        stats.n.to_string(),
        stats.mean_diff.to_string(),
        stats.sd_diff.to_string(),
        stats.loa_low.to_string(),
        stats.loa_high.to_string(),
        stats.rpc.to_string(),
        stats.rpc_pct.to_string(),
        stats.cv_pct.to_string(),
        stats.pearson_r.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

/// Reads the single data row of a ba CSV as `(header, value)` pairs.
pub fn read_ba_csv(path: impl AsRef<Path>) -> Result<Vec<(String, f64)>> {
    let mut rd = csv::Reader::from_path(path)?;
    check_header(&mut rd, &BA_HEADER)?;
    let row = rd.records().next().ok_or_else(|| Error::invalid("ba CSV has no data row"))??;
    BA_HEADER.iter().zip(row.iter()).map(|(h, v)| Ok((h.to_string(), number(v, h)?))).collect()
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 400.0;
const PANEL: f64 = 400.0;
const MARGIN: f64 = 50.0;

/// Linear map of `[lo, hi]` onto `[a, b]`, widened when the range is empty.
fn scale(lo: f64, hi: f64, a: f64, b: f64) -> impl Fn(f64) -> f64 {
    let (lo, hi) = if hi - lo > 1e-12 { (lo, hi) } else { (lo - 1.0, hi + 1.0) };
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    move |v| a + (v - lo) / (hi - lo) * (b - a)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Two-panel agreement figure: correlation of `(reference, test)` with the
/// identity line on the left (points as squares), Bland-Altman
/// difference-vs-mean on the right (points as circles) with the mean
/// difference and both limits of agreement as horizontal `ref` lines.
pub fn agreement_svg(pairs: &[(f64, f64)], stats: &BlandAltmanStats) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8" standalone="no"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);

    // correlation panel
    let all = pairs.iter().flat_map(|&(a, b)| [a, b]);
    let lo = all.clone().fold(f64::INFINITY, f64::min).min(0.0);
    let hi = all.fold(f64::NEG_INFINITY, f64::max).max(lo + 1.0);
    let sx = scale(lo, hi, MARGIN, PANEL - MARGIN / 2.0);
    let sy = scale(lo, hi, HEIGHT - MARGIN, MARGIN / 2.0);
    let _ = writeln!(s, r#"<g class="correlation">"#);
    let _ = writeln!(
        s,
        r#"<line class="axis" x1="{MARGIN}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        HEIGHT - MARGIN,
        PANEL - MARGIN / 2.0
    );
    let _ = writeln!(s, r#"<line class="axis" x1="{MARGIN}" y1="{0}" x2="{MARGIN}" y2="{1}" stroke="black"/>"#, HEIGHT - MARGIN, MARGIN / 2.0);
    let _ = writeln!(
        s,
        r#"<line class="identity" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="4 3"/>"#,
        sx(lo),
        sy(lo),
        sx(hi),
        sy(hi)
    );
    for &(r, t) in pairs {
        let _ = writeln!(s, r#"<rect class="point" x="{:.2}" y="{:.2}" width="6" height="6" fill="steelblue"/>"#, sx(r) - 3.0, sy(t) - 3.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">reference (mL)</text>"#, PANEL / 2.0, HEIGHT - 15.0);
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="15" font-size="12">predicted (mL), r = {:.3}</text>"#, stats.pearson_r);
    let _ = writeln!(s, "</g>");

    // Bland-Altman panel
    let means: Vec<f64> = pairs.iter().map(|(r, t)| (r + t) / 2.0).collect();
    let diffs: Vec<f64> = pairs.iter().map(|(r, t)| t - r).collect();
    let (mlo, mhi) = means.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let dlo = diffs.iter().copied().fold(stats.loa_low, f64::min);
    let dhi = diffs.iter().copied().fold(stats.loa_high, f64::max);
    let bx = scale(mlo, mhi, PANEL + MARGIN, WIDTH - MARGIN / 2.0);
    let by = scale(dlo, dhi, HEIGHT - MARGIN, MARGIN / 2.0);
    let _ = writeln!(s, r#"<g class="bland-altman">"#);
    let _ = writeln!(s, r#"<line class="axis" x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="black"/>"#, PANEL + MARGIN, HEIGHT - MARGIN, MARGIN / 2.0);
    for (label, y, dash) in [("mean", stats.mean_diff, ""), ("loa_low", stats.loa_low, "6 4"), ("loa_high", stats.loa_high, "6 4")] {
        let _ = writeln!(
            s,
            r#"<line class="ref" data-kind="{label}" x1="{}" y1="{:.2}" x2="{}" y2="{:.2}" stroke="firebrick" stroke-dasharray="{dash}"/>"#,
            PANEL + MARGIN,
            by(y),
            WIDTH - MARGIN / 2.0,
            by(y)
        );
    }
    for (m, d) in means.iter().zip(&diffs) {
        let _ = writeln!(s, r#"<circle class="point" cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#, bx(*m), by(*d));
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="15" font-size="12">{}</text>"#,
        PANEL + MARGIN,
        escape(&format!("CV = {:.2}%, RPC = {:.3} mL ({:.2}%)", stats.cv_pct, stats.rpc, stats.rpc_pct))
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">mean of pair (mL)</text>"#, PANEL + PANEL / 2.0, HEIGHT - 15.0);
    let _ = writeln!(s, "</g>\n</svg>");
    s
}

pub fn write_agreement_svg(pairs: &[(f64, f64)], stats: &BlandAltmanStats, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, agreement_svg(pairs, stats))?;
    Ok(())
}
