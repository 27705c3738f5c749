//! DOTA-format annotation ingestion and aspect-ratio statistics.
//!
//! Annotation files carry one object per line,
//! `x1 y1 x2 y2 x3 y3 x4 y4 category difficult`, optionally preceded by
//! `imagesource:` / `gsd:` header lines. Quadrilaterals are reduced to
//! oriented boxes with the minimum-area enclosing rectangle, and per-category
//! aspect ratios (long/short, always >= 1) feed the squareness report and a
//! Gaussian kernel density estimate.

use crate::error::{Error, Result};
use crate::geometry::{ObbBox, GEOM_EPS};
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Write;

/// One parsed annotation: a quadrilateral, its category, and the difficulty flag.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub quad: [[f64; 2]; 4],
    pub category: String,
    pub difficult: bool,
}

/// Aspect-ratio statistics for one category.
#[derive(Debug, Clone)]
pub struct AspectRatioStats {
    pub category: String,
    /// Long/short ratios, each `>= 1`.
    pub ratios: Vec<f64>,
    pub bandwidth: f64,
    /// `(abscissa, density)` samples of the kernel density estimate.
    pub kde_grid: Vec<(f64, f64)>,
}

/// Squareness summary for one category.
#[derive(Debug, Clone, Serialize)]
pub struct CategorySquareness {
    pub category: String,
    pub total: usize,
    pub square_like: usize,
    pub fraction: f64,
    /// `(w, h)` of the recovered box per record, for scatter plots.
    pub dims: Vec<(f64, f64)>,
}

/// Parses the text of one DOTA annotation file.
///
/// Metadata header lines and blank lines are skipped. Every other line must
/// have exactly ten whitespace-separated tokens; the first eight are corner
/// coordinates, then the category name and an integer difficulty flag.
pub fn parse_dota_annotation(text: &str) -> Result<Vec<AnnotationRecord>> {
    let mut records = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with("imagesource:") || line.starts_with("gsd:") {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 10 {
            return Err(Error::MalformedLine {
                line: line_no,
                reason: format!("expected 10 tokens, found {}", tokens.len()),
            });
        }
        let mut coords = [0.0f64; 8];
        for (k, token) in tokens[..8].iter().enumerate() {
            coords[k] = token.parse().map_err(|_| Error::NonNumericCoordinate {
                line: line_no,
                token: token.to_string(),
            })?;
            if !coords[k].is_finite() {
                return Err(Error::NonNumericCoordinate {
                    line: line_no,
                    token: token.to_string(),
                });
            }
        }
        let difficult: i64 = tokens[9].parse().map_err(|_| Error::MalformedLine {
            line: line_no,
            reason: format!("difficulty flag {:?} is not an integer", tokens[9]),
        })?;
        records.push(AnnotationRecord {
            quad: [
                [coords[0], coords[1]],
                [coords[2], coords[3]],
                [coords[4], coords[5]],
                [coords[6], coords[7]],
            ],
            category: tokens[8].to_string(),
            difficult: difficult != 0,
        });
    }
    Ok(records)
}

/// Convex hull in counter-clockwise order (monotone chain). Collinear points
/// are dropped.
pub(crate) fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_unstable_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let chain = |points: &mut dyn Iterator<Item = [f64; 2]>| {
        let mut out: Vec<[f64; 2]> = Vec::new();
        for p in points {
            while out.len() >= 2 && cross(out[out.len() - 2], out[out.len() - 1], p) <= 0.0 {
                out.pop();
            }
            out.push(p);
        }
        out
    };
    let mut lower = chain(&mut pts.iter().copied());
    let mut upper = chain(&mut pts.iter().rev().copied());
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Minimum-area oriented rectangle enclosing the given points.
///
/// The optimum has one side collinear with a hull edge, so each hull edge
/// direction is tried in turn.
pub fn min_area_rect(points: &[[f64; 2]]) -> Result<ObbBox> {
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return Err(Error::DegenerateQuad { area: 0.0 });
    }
    let mut area2 = 0.0;
    for i in 0..hull.len() {
        let [x0, y0] = hull[i];
        let [x1, y1] = hull[(i + 1) % hull.len()];
        area2 += x0 * y1 - x1 * y0;
    }
    if 0.5 * area2.abs() < GEOM_EPS {
        return Err(Error::DegenerateQuad {
            area: 0.5 * area2.abs(),
        });
    }

    let mut best: Option<(f64, f64, f64, f64, f64, f64)> = None; // area, cx, cy, w, h, theta
    let n = hull.len();
    for i in 0..n {
        let a = hull[i];
        let b = hull[(i + 1) % n];
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        if len <= GEOM_EPS {
            continue;
        }
        let dir = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
        let nrm = [-dir[1], dir[0]];
        let (mut umin, mut umax) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &hull {
            let u = p[0] * dir[0] + p[1] * dir[1];
            let v = p[0] * nrm[0] + p[1] * nrm[1];
            umin = umin.min(u);
            umax = umax.max(u);
            vmin = vmin.min(v);
            vmax = vmax.max(v);
        }
        let w = umax - umin;
        let h = vmax - vmin;
        let area = w * h;
        if best.is_none_or(|(best_area, ..)| area < best_area) {
            let uc = 0.5 * (umin + umax);
            let vc = 0.5 * (vmin + vmax);
            let cx = uc * dir[0] + vc * nrm[0];
            let cy = uc * dir[1] + vc * nrm[1];
            best = Some((area, cx, cy, w, h, dir[1].atan2(dir[0])));
        }
    }
    let (_, cx, cy, w, h, theta) = best.expect("hull has at least 3 edges");
    ObbBox::new(cx, cy, w, h, theta)
}

/// Minimum-area oriented box for one annotation's quadrilateral.
pub fn quad_to_obb(record: &AnnotationRecord) -> Result<ObbBox> {
    min_area_rect(&record.quad)
}

fn scott_bandwidth(ratios: &[f64]) -> f64 {
    let n = ratios.len() as f64;
    let mean = ratios.iter().sum::<f64>() / n;
    let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let scott = var.sqrt() * n.powf(-0.2);
    if scott > 1e-12 {
        scott
    } else {
        // Degenerate sample (all ratios equal): fall back to a narrow kernel
        // so the estimate is a sharp peak instead of a division by zero.
        1e-3 * mean.max(1.0)
    }
}

/// Gaussian kernel density estimate of the aspect-ratio distribution of one
/// category.
///
/// Ratios live on `[1, inf)`; kernel mass that would fall below 1 is
/// reflected back across the boundary, and the sampled curve is normalized
/// so its trapezoid integral over the grid is exactly 1. The bandwidth
/// defaults to Scott's rule.
pub fn aspect_ratio_kde(
    records: &[AnnotationRecord],
    category: &str,
    bandwidth: Option<f64>,
) -> Result<AspectRatioStats> {
    let mut ratios = Vec::new();
    for record in records.iter().filter(|r| r.category == category) {
        ratios.push(quad_to_obb(record)?.aspect_ratio());
    }
    if ratios.len() < 2 {
        return Err(Error::InsufficientData {
            category: category.to_string(),
            count: ratios.len(),
        });
    }
    if let Some(bw) = bandwidth {
        if !(bw > 0.0 && bw.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "bandwidth must be positive and finite (got {bw})"
            )));
        }
    }
    let bw = bandwidth.unwrap_or_else(|| scott_bandwidth(&ratios));

    let max_ratio = ratios.iter().cloned().fold(f64::MIN, f64::max);
    let lo = 1.0;
    let hi = max_ratio + 3.0 * bw;
    let span = hi - lo;
    // Step of bw/2 resolves the kernel; clamp the grid size to sane bounds.
    let n_grid = ((2.0 * span / bw).ceil() as usize).clamp(128, 20_000) + 1;
    let step = span / (n_grid - 1) as f64;

    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * bw * ratios.len() as f64);
    let mut grid: Vec<(f64, f64)> = (0..n_grid)
        .map(|k| {
            let x = lo + step * k as f64;
            let mut density = 0.0;
            for &r in &ratios {
                let z = (x - r) / bw;
                density += (-0.5 * z * z).exp();
                // Reflection of the kernel across the boundary at 1.
                let zr = (x - (2.0 - r)) / bw;
                density += (-0.5 * zr * zr).exp();
            }
            (x, density * norm)
        })
        .collect();

    let integral = trapezoid(&grid);
    if integral > 0.0 {
        for point in grid.iter_mut() {
            point.1 /= integral;
        }
    }

    Ok(AspectRatioStats {
        category: category.to_string(),
        ratios,
        bandwidth: bw,
        kde_grid: grid,
    })
}

/// Trapezoid-rule integral of a sampled curve.
pub fn trapezoid(grid: &[(f64, f64)]) -> f64 {
    grid.windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum()
}

/// Per-category squareness fractions, with the recovered `(w, h)` pairs.
/// Categories come back sorted by name.
pub fn squareness_report(records: &[AnnotationRecord], tau: f64) -> Result<Vec<CategorySquareness>> {
    let mut by_category: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for record in records {
        let obb = quad_to_obb(record)?;
        by_category
            .entry(record.category.as_str())
            .or_default()
            .push((obb.w(), obb.h()));
    }
    Ok(by_category
        .into_iter()
        .map(|(category, dims)| {
            let total = dims.len();
            let square_like = dims.iter().filter(|(w, h)| w / h <= tau).count();
            CategorySquareness {
                category: category.to_string(),
                total,
                square_like,
                fraction: square_like as f64 / total as f64,
                dims,
            }
        })
        .collect())
}

/// Writes the scatter CSV: `category,w,h,ratio,square_like` (flag as 1/0).
pub fn write_scatter_csv<W: Write>(
    out: &mut W,
    report: &[CategorySquareness],
    tau: f64,
) -> Result<()> {
    writeln!(out, "category,w,h,ratio,square_like")?;
    for cat in report {
        for (w, h) in &cat.dims {
            let ratio = w / h;
            let flag = u8::from(ratio <= tau);
            writeln!(out, "{},{},{},{},{}", cat.category, w, h, ratio, flag)?;
        }
    }
    Ok(())
}

/// Writes the KDE CSV: `category,grid_x,density`.
pub fn write_kde_csv<W: Write>(out: &mut W, stats: &[AspectRatioStats]) -> Result<()> {
    writeln!(out, "category,grid_x,density")?;
    for s in stats {
        for (x, density) in &s.kde_grid {
            writeln!(out, "{},{},{}", s.category, x, density)?;
        }
    }
    Ok(())
}
