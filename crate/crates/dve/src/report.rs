//! Report emission from a record store: 2D estimate-vs-actual grid plots,
//! normalized-bias surface matrices with SVG heatmaps, region summary
//! tables, and the sampling-fraction threshold table.
//!
//! SVG is emitted by hand from simple primitives so figures are pure
//! functions of the record store; every numeric figure also exists as CSV.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::json;

use crate::error::{DveError, Result};
use crate::estimators::EstimatorId;
use crate::harness::EstimateRecord;
use crate::metrics::{self, aggregate_cell, CellCoords, CellStats};

/// Row/column layout of the regime grid: rows are `N` values descending
/// (largest population on top), columns are `N/A` values ascending left to
/// right, matching the study's published grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridLayout {
    pub rows: Vec<u64>,
    pub cols: Vec<u64>,
}

impl GridLayout {
    pub fn from_records(records: &[EstimateRecord]) -> Self {
        let mut rows: BTreeSet<u64> = BTreeSet::new();
        let mut cols: BTreeSet<u64> = BTreeSet::new();
        for r in records {
            rows.insert(r.n_total);
            cols.insert(r.n_total / r.alphabet);
        }
        GridLayout {
            rows: rows.into_iter().rev().collect(),
            cols: cols.into_iter().collect(),
        }
    }

    pub fn position(&self, n_total: u64, alphabet: u64) -> Option<(usize, usize)> {
        let row = self.rows.iter().position(|&n| n == n_total)?;
        let col = self.cols.iter().position(|&c| c == n_total / alphabet)?;
        Some((row, col))
    }
}

/// One aggregated cell: (regime, θ, q, estimator) with per-rep stats.
#[derive(Debug, Clone)]
pub struct AggregatedCell {
    pub coords: CellCoords,
    pub estimator: EstimatorId,
    pub d_true: u64,
    /// Stats over the successful reps, absent when every rep failed.
    pub stats: Option<CellStats>,
    pub failed_reps: usize,
}

/// Group records by (regime, θ, q, estimator) and aggregate each group.
pub fn aggregate_records(records: &[EstimateRecord]) -> Vec<AggregatedCell> {
    type Key = (u64, u64, u64, u64, EstimatorId);
    let mut groups: BTreeMap<Key, (CellCoords, u64, Vec<f64>, usize)> = BTreeMap::new();
    for r in records {
        let key = (r.n_total, r.alphabet, r.theta.to_bits(), r.q.to_bits(), r.estimator);
        let entry = groups.entry(key).or_insert_with(|| {
            (
                CellCoords {
                    n_total: r.n_total,
                    alphabet: r.alphabet,
                    theta: r.theta,
                    q: r.q,
                    gamma_sq: r.gamma_sq_true,
                },
                r.d_true,
                Vec::new(),
                0,
            )
        });
        match &r.outcome {
            Ok(v) => entry.2.push(*v),
            Err(_) => entry.3 += 1,
        }
    }
    groups
        .into_iter()
        .map(|((_, _, _, _, estimator), (coords, d_true, estimates, failed))| AggregatedCell {
            coords,
            estimator,
            d_true,
            stats: aggregate_cell(&estimates, d_true).ok(),
            failed_reps: failed,
        })
        .collect()
}

fn fmt_f(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

// ---------------------------------------------------------------------------
// SVG primitives
// ---------------------------------------------------------------------------

struct Svg {
    body: String,
    width: f64,
    height: f64,
}

impl Svg {
    fn new(width: f64, height: f64) -> Self {
        Svg { body: String::new(), width, height }
    }

    fn dashed_line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}" stroke-width="1" stroke-dasharray="4 3"/>"#
        );
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}" stroke="{stroke}" stroke-width="0.5"/>"#
        );
    }

    fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r:.2}" fill="{fill}"/>"#
        );
    }

    fn polyline(&mut self, points: &[(f64, f64)], stroke: &str) {
        let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="1.2"/>"#,
            pts.join(" ")
        );
    }

    fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, content: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-size="{size}" font-family="sans-serif" text-anchor="{anchor}">{content}</text>"#
        );
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0}\" height=\"{:.0}\" viewBox=\"0 0 {:.0} {:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.width, self.height, self.width, self.height, self.body
        )
    }
}

const PALETTE: [(&str, EstimatorId); 11] = [
    ("#1f77b4", EstimatorId::Uj1),
    ("#ff7f0e", EstimatorId::Uj2),
    ("#2ca02c", EstimatorId::Sj2),
    ("#d62728", EstimatorId::Uj2a),
    ("#9467bd", EstimatorId::Sh),
    ("#8c564b", EstimatorId::Sh2),
    ("#e377c2", EstimatorId::Sh3),
    ("#7f7f7f", EstimatorId::Gee),
    ("#bcbd22", EstimatorId::Ae),
    ("#17becf", EstimatorId::Cl1),
    ("#000000", EstimatorId::Cl2),
];

fn color_for(id: EstimatorId) -> &'static str {
    PALETTE.iter().find(|(_, e)| *e == id).map(|(c, _)| *c).unwrap()
}

// ---------------------------------------------------------------------------
// 2D estimate-vs-actual grid
// ---------------------------------------------------------------------------

const PLOT_W: f64 = 190.0;
const PLOT_H: f64 = 170.0;
const MARGIN: f64 = 46.0;

/// Emit the grid of 2D estimate-vs-actual subplots for one sampling
/// fraction. Each subplot shows, per estimator, the mean estimate against
/// the true `D` across the θ grid, on log-log axes with a `y = x`
/// reference line.
pub fn emit_2d_grid(
    records: &[EstimateRecord],
    estimators: &[EstimatorId],
    q: f64,
    out_path: &Path,
) -> Result<()> {
    if estimators.is_empty() {
        return Err(DveError::MissingSlice("no estimators requested".into()));
    }
    let slice: Vec<&EstimateRecord> = records.iter().filter(|r| r.q == q).collect();
    if slice.is_empty() {
        return Err(DveError::MissingSlice(format!("no records at q={q}")));
    }
    let owned: Vec<EstimateRecord> = slice.iter().map(|r| (*r).clone()).collect();
    let layout = GridLayout::from_records(&owned);
    let cells = aggregate_records(&owned);

    let total_w = MARGIN * 2.0 + layout.cols.len() as f64 * PLOT_W;
    let total_h = MARGIN * 2.0 + layout.rows.len() as f64 * PLOT_H + 30.0;
    let mut svg = Svg::new(total_w, total_h);
    svg.text(
        total_w / 2.0,
        18.0,
        13.0,
        "middle",
        &format!("mean estimate vs actual distincts, q = {q}"),
    );

    // Global log range across all subplots keeps axes comparable.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in &cells {
        lo = lo.min(c.d_true as f64);
        hi = hi.max(c.d_true as f64);
        if let Some(s) = &c.stats {
            if estimators.contains(&c.estimator) {
                lo = lo.min(s.mean_estimate.max(1e-3));
                hi = hi.max(s.mean_estimate);
            }
        }
    }
    let (log_lo, log_hi) = (lo.log10().floor(), hi.log10().ceil().max(lo.log10().floor() + 1.0));

    for (ri, &n_row) in layout.rows.iter().enumerate() {
        for (ci, &ratio) in layout.cols.iter().enumerate() {
            let x0 = MARGIN + ci as f64 * PLOT_W + 18.0;
            let y0 = MARGIN + ri as f64 * PLOT_H;
            let w = PLOT_W - 34.0;
            let h = PLOT_H - 44.0;
            svg.rect(x0, y0, w, h, "none", "#444444");
            svg.text(
                x0 + w / 2.0,
                y0 + h + 14.0,
                9.0,
                "middle",
                &format!("N={n_row} N/A={ratio}"),
            );
            let project = |v: f64| -> (f64, f64) {
                let t = (v.max(1e-3).log10() - log_lo) / (log_hi - log_lo);
                (t.clamp(0.0, 1.0), t.clamp(0.0, 1.0))
            };
            // y = x reference
            let (t0, _) = project(10f64.powf(log_lo));
            let (t1, _) = project(10f64.powf(log_hi));
            svg.dashed_line(
                x0 + t0 * w,
                y0 + h - t0 * h,
                x0 + t1 * w,
                y0 + h - t1 * h,
                "#999999",
            );
            for &est in estimators {
                let mut pts: Vec<(f64, f64, f64)> = cells
                    .iter()
                    .filter(|c| {
                        c.estimator == est
                            && c.coords.n_total == n_row
                            && c.coords.n_total / c.coords.alphabet == ratio
                    })
                    .filter_map(|c| {
                        c.stats.as_ref().map(|s| (c.coords.theta, c.d_true as f64, s.mean_estimate))
                    })
                    .collect();
                pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                let projected: Vec<(f64, f64)> = pts
                    .iter()
                    .map(|&(_, d, e)| {
                        let (tx, _) = project(d);
                        let (ty, _) = project(e);
                        (x0 + tx * w, y0 + h - ty * h)
                    })
                    .collect();
                if projected.len() > 1 {
                    svg.polyline(&projected, color_for(est));
                }
                for &(px, py) in &projected {
                    svg.circle(px, py, 2.0, color_for(est));
                }
            }
        }
    }
    // Legend
    let mut lx = MARGIN;
    let ly = total_h - 14.0;
    for &est in estimators {
        svg.circle(lx, ly - 3.0, 3.0, color_for(est));
        svg.text(lx + 7.0, ly, 10.0, "start", est.name());
        lx += 58.0;
    }
    fs::write(out_path, svg.finish())
        .map_err(|e| DveError::InvalidSpec(format!("write {}: {e}", out_path.display())))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Normalized-bias surfaces (θ × q matrices + heatmap grid)
// ---------------------------------------------------------------------------

/// Diverging color scale pinned at normalized bias −1, 0, and 3:
/// blue below zero (saturating at −1), white at zero, red above
/// (saturating at +3). Monotone in bias.
pub fn bias_color(bias: f64) -> String {
    if bias.is_nan() {
        return "#dddddd".to_string();
    }
    if bias <= 0.0 {
        let t = (-bias).clamp(0.0, 1.0);
        let chan = (255.0 * (1.0 - t)) as u8;
        format!("#{chan:02x}{chan:02x}ff")
    } else {
        let t = (bias / 3.0).clamp(0.0, 1.0);
        let chan = (255.0 * (1.0 - t)) as u8;
        format!("#ff{chan:02x}{chan:02x}")
    }
}

/// Per-regime matrix of mean normalized bias over (θ, q).
#[derive(Debug, Clone)]
pub struct BiasMatrix {
    pub n_total: u64,
    pub alphabet: u64,
    pub thetas: Vec<f64>,
    pub qs: Vec<f64>,
    /// `values[theta_idx][q_idx]`, NaN when every rep failed.
    pub values: Vec<Vec<f64>>,
}

impl BiasMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta\\q");
        for q in &self.qs {
            let _ = write!(out, ",{q}");
        }
        out.push('\n');
        for (ti, theta) in self.thetas.iter().enumerate() {
            let _ = write!(out, "{theta}");
            for qi in 0..self.qs.len() {
                let v = self.values[ti][qi];
                if v.is_nan() {
                    out.push_str(",na");
                } else {
                    let _ = write!(out, ",{v}");
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Build the per-regime bias matrices for one estimator.
pub fn bias_matrices(records: &[EstimateRecord], estimator: EstimatorId) -> Result<Vec<BiasMatrix>> {
    let cells: Vec<AggregatedCell> = aggregate_records(records)
        .into_iter()
        .filter(|c| c.estimator == estimator)
        .collect();
    let thetas: BTreeSet<u64> = cells.iter().map(|c| c.coords.theta.to_bits()).collect();
    let qs: BTreeSet<u64> = cells.iter().map(|c| c.coords.q.to_bits()).collect();
    if thetas.len() < 2 || qs.len() < 2 {
        return Err(DveError::MissingSlice(
            "bias surface needs at least 2 theta and 2 q values".into(),
        ));
    }
    let thetas: Vec<f64> = thetas.into_iter().map(f64::from_bits).collect();
    let qs: Vec<f64> = qs.into_iter().map(f64::from_bits).collect();
    let regimes: BTreeSet<(u64, u64)> =
        cells.iter().map(|c| (c.coords.n_total, c.coords.alphabet)).collect();
    let mut out = Vec::new();
    for (n, a) in regimes {
        let mut values = vec![vec![f64::NAN; qs.len()]; thetas.len()];
        for c in cells.iter().filter(|c| c.coords.n_total == n && c.coords.alphabet == a) {
            let ti = thetas.iter().position(|&t| t == c.coords.theta).unwrap();
            let qi = qs.iter().position(|&q| q == c.coords.q).unwrap();
            if let Some(s) = &c.stats {
                values[ti][qi] = s.mean_normalized_bias;
            }
        }
        out.push(BiasMatrix {
            n_total: n,
            alphabet: a,
            thetas: thetas.clone(),
            qs: qs.clone(),
            values,
        });
    }
    Ok(out)
}

/// Emit the bias-surface artifacts for one estimator: a CSV matrix per
/// regime plus one SVG heatmap grid laid out on the regime grid.
pub fn emit_bias_surface(
    records: &[EstimateRecord],
    estimator: EstimatorId,
    out_dir: &Path,
) -> Result<()> {
    let matrices = bias_matrices(records, estimator)?;
    fs::create_dir_all(out_dir)
        .map_err(|e| DveError::InvalidSpec(format!("mkdir {}: {e}", out_dir.display())))?;
    for m in &matrices {
        let path = out_dir.join(format!("bias_{}_{}_{}.csv", estimator, m.n_total, m.alphabet));
        fs::write(&path, m.to_csv())
            .map_err(|e| DveError::InvalidSpec(format!("write {}: {e}", path.display())))?;
    }

    let layout = GridLayout::from_records(records);
    let cell_w = 16.0;
    let cell_h = 14.0;
    let qn = matrices[0].qs.len() as f64;
    let tn = matrices[0].thetas.len() as f64;
    let sub_w = qn * cell_w + 30.0;
    let sub_h = tn * cell_h + 36.0;
    let total_w = MARGIN * 2.0 + layout.cols.len() as f64 * sub_w;
    let total_h = MARGIN * 2.0 + layout.rows.len() as f64 * sub_h + 56.0;
    let mut svg = Svg::new(total_w, total_h);
    svg.text(
        total_w / 2.0,
        18.0,
        13.0,
        "middle",
        &format!("mean normalized bias (estimate - D)/D per regime, estimator {estimator}"),
    );
    for m in &matrices {
        let Some((ri, ci)) = layout.position(m.n_total, m.alphabet) else { continue };
        let x0 = MARGIN + ci as f64 * sub_w + 24.0;
        let y0 = MARGIN + ri as f64 * sub_h;
        for (ti, _) in m.thetas.iter().enumerate() {
            for (qi, _) in m.qs.iter().enumerate() {
                let v = m.values[ti][qi];
                svg.rect(
                    x0 + qi as f64 * cell_w,
                    y0 + ti as f64 * cell_h,
                    cell_w,
                    cell_h,
                    &bias_color(v),
                    "#666666",
                );
            }
        }
        svg.text(
            x0 + qn * cell_w / 2.0,
            y0 + tn * cell_h + 12.0,
            8.0,
            "middle",
            &format!("N={} N/A={}", m.n_total, m.n_total / m.alphabet),
        );
        svg.text(x0 - 4.0, y0 + 8.0, 7.0, "end", "θ");
        svg.text(x0 + qn * cell_w / 2.0, y0 + tn * cell_h + 22.0, 7.0, "middle", "q →");
    }
    // Legend: the marked bias levels -1, 0, 3 plus intermediate swatches.
    let ly = total_h - 40.0;
    svg.text(MARGIN, ly - 6.0, 10.0, "start", "normalized bias (blue = under, red = over):");
    let marks = [-1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0];
    for (i, &b) in marks.iter().enumerate() {
        let x = MARGIN + i as f64 * 54.0;
        svg.rect(x, ly, 20.0, 12.0, &bias_color(b), "#333333");
        svg.text(x + 24.0, ly + 10.0, 9.0, "start", &fmt_f(b));
    }
    let svg_path = out_dir.join(format!("bias_surface_{estimator}.svg"));
    fs::write(&svg_path, svg.finish())
        .map_err(|e| DveError::InvalidSpec(format!("write {}: {e}", svg_path.display())))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Threshold table (sampling fraction required for a ratio-error target)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdStatistic {
    Max,
    Avg,
}

impl ThresholdStatistic {
    pub fn label(&self) -> &'static str {
        match self {
            ThresholdStatistic::Max => "Max",
            ThresholdStatistic::Avg => "Avg",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ThresholdTable {
    /// (statistic, level) targets, one row each.
    pub targets: Vec<(ThresholdStatistic, f64)>,
    pub estimators: Vec<EstimatorId>,
    /// `entries[target_idx][estimator_idx]`: smallest grid q, or None = "na".
    pub entries: Vec<Vec<Option<f64>>>,
}

/// Compute, per estimator, the smallest grid q at which the ratio-error
/// statistic over all (regime, θ) cells is at or below the target level.
/// A cell where every rep failed counts as infinite ratio error.
pub fn emit_threshold_table(
    records: &[EstimateRecord],
    targets: &[(ThresholdStatistic, f64)],
) -> ThresholdTable {
    let cells = aggregate_records(records);
    let mut qs: Vec<f64> = {
        let set: BTreeSet<u64> = cells.iter().map(|c| c.coords.q.to_bits()).collect();
        set.into_iter().map(f64::from_bits).collect()
    };
    qs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let estimators: Vec<EstimatorId> = EstimatorId::ALL
        .into_iter()
        .filter(|e| cells.iter().any(|c| c.estimator == *e))
        .collect();

    let mut entries = Vec::new();
    for &(stat, level) in targets {
        let mut row = Vec::new();
        for &est in &estimators {
            let mut found = None;
            for &q in &qs {
                let slice: Vec<&AggregatedCell> = cells
                    .iter()
                    .filter(|c| c.estimator == est && c.coords.q == q)
                    .collect();
                if slice.is_empty() {
                    continue;
                }
                let per_cell: Vec<f64> = slice
                    .iter()
                    .map(|c| match (&c.stats, c.failed_reps) {
                        (Some(s), 0) => match stat {
                            ThresholdStatistic::Max => s.max_ratio_error,
                            ThresholdStatistic::Avg => s.mean_ratio_error,
                        },
                        // Any failed rep means the estimator cannot certify
                        // the cell; treat as unbounded error.
                        _ => f64::INFINITY,
                    })
                    .collect();
                let value = match stat {
                    ThresholdStatistic::Max => per_cell.iter().fold(1.0f64, |a, &b| a.max(b)),
                    ThresholdStatistic::Avg => {
                        per_cell.iter().sum::<f64>() / per_cell.len() as f64
                    }
                };
                if value <= level {
                    found = Some(q);
                    break;
                }
            }
            row.push(found);
        }
        entries.push(row);
    }
    ThresholdTable { targets: targets.to_vec(), estimators, entries }
}

impl ThresholdTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("target");
        for e in &self.estimators {
            let _ = write!(out, ",{e}");
        }
        out.push('\n');
        for (ti, (stat, level)) in self.targets.iter().enumerate() {
            let _ = write!(out, "{} {}", stat.label(), fmt_f(*level));
            for entry in &self.entries[ti] {
                match entry {
                    Some(q) => {
                        let _ = write!(out, ",{q}");
                    }
                    None => out.push_str(",na"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .targets
            .iter()
            .enumerate()
            .map(|(ti, (stat, level))| {
                let cols: serde_json::Map<String, serde_json::Value> = self
                    .estimators
                    .iter()
                    .zip(&self.entries[ti])
                    .map(|(e, entry)| {
                        (
                            e.name().to_string(),
                            entry.map(serde_json::Value::from).unwrap_or(json!("na")),
                        )
                    })
                    .collect();
                json!({ "statistic": stat.label(), "level": level, "thresholds": cols })
            })
            .collect();
        json!({ "targets": rows })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<10}", "target");
        for e in &self.estimators {
            let _ = write!(out, "{:>8}", e.name());
        }
        out.push('\n');
        for (ti, (stat, level)) in self.targets.iter().enumerate() {
            let _ = write!(out, "{:<10}", format!("{} {}", stat.label(), fmt_f(*level)));
            for entry in &self.entries[ti] {
                match entry {
                    Some(q) => {
                        let _ = write!(out, "{:>8}", format!("{q}"));
                    }
                    None => {
                        let _ = write!(out, "{:>8}", "na");
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn lookup(&self, stat: ThresholdStatistic, level: f64, est: EstimatorId) -> Option<f64> {
        let ti = self.targets.iter().position(|&(s, l)| s == stat && l == level)?;
        let ei = self.estimators.iter().position(|&e| e == est)?;
        self.entries[ti][ei]
    }
}

// ---------------------------------------------------------------------------
// Region summary tables (ratio error / bias / RMSE analogues)
// ---------------------------------------------------------------------------

/// Emit the three region summary tables as CSV: ratio error and bias by
/// (θ band × N/A band × q band), RMSE by (γ² band × N/A band × q band).
pub fn emit_region_tables(records: &[EstimateRecord], out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)
        .map_err(|e| DveError::InvalidSpec(format!("mkdir {}: {e}", out_dir.display())))?;
    let aggregated = aggregate_records(records);
    let estimators: Vec<EstimatorId> = EstimatorId::ALL
        .into_iter()
        .filter(|e| aggregated.iter().any(|c| c.estimator == *e))
        .collect();

    let theta_bands: [(&str, fn(&CellCoords) -> bool); 2] = [
        ("0<=theta<=1", metrics::bands::theta_low),
        ("1.5<=theta<=2", metrics::bands::theta_high),
    ];
    let gamma_bands: [(&str, fn(&CellCoords) -> bool); 3] = [
        ("0<=gamma2<1", metrics::bands::gamma_low),
        ("1<=gamma2<=50", metrics::bands::gamma_mid),
        ("gamma2>50", metrics::bands::gamma_high),
    ];
    let na_bands: [(&str, fn(&CellCoords) -> bool); 2] = [
        ("N/A<=100", metrics::bands::na_low),
        ("N/A>=100", metrics::bands::na_high),
    ];
    let q_bands: [(&str, fn(&CellCoords) -> bool); 2] = [
        ("0.001<=q<=0.005", metrics::bands::q_low),
        ("0.01<=q<=0.1", metrics::bands::q_high),
    ];

    let table = |row_bands: &[(&str, fn(&CellCoords) -> bool)],
                 row_label: &str,
                 pick: fn(&metrics::RegionSummary) -> f64|
     -> String {
        let mut out = format!("{row_label},na_band,q_band");
        for e in &estimators {
            let _ = write!(out, ",{e}");
        }
        out.push('\n');
        for (row_name, row_pred) in row_bands {
            for (na_name, na_pred) in &na_bands {
                for (q_name, q_pred) in &q_bands {
                    let _ = write!(out, "{row_name},{na_name},{q_name}");
                    for &est in &estimators {
                        let cells: Vec<(CellCoords, CellStats)> = aggregated
                            .iter()
                            .filter(|c| c.estimator == est)
                            .filter_map(|c| c.stats.clone().map(|s| (c.coords, s)))
                            .collect();
                        let summary = metrics::region_summary(&cells, |c| {
                            row_pred(c) && na_pred(c) && q_pred(c)
                        });
                        match summary {
                            Ok(s) => {
                                let _ = write!(out, ",{:.2}", pick(&s));
                            }
                            Err(_) => out.push_str(",na"),
                        }
                    }
                    out.push('\n');
                }
            }
        }
        out
    };

    let writes = [
        ("ratio_error.csv", table(&theta_bands, "skew_band", |s| s.mean_ratio_error)),
        ("pct_bias.csv", table(&theta_bands, "skew_band", |s| s.pct_bias)),
        ("pct_rmse.csv", table(&gamma_bands, "gamma_band", |s| s.pct_rmse)),
    ];
    for (name, content) in writes {
        let path = out_dir.join(name);
        fs::write(&path, content)
            .map_err(|e| DveError::InvalidSpec(format!("write {}: {e}", path.display())))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(
        n: u64,
        a: u64,
        theta: f64,
        q: f64,
        rep: u32,
        est: EstimatorId,
        outcome: std::result::Result<f64, String>,
        d_true: u64,
    ) -> EstimateRecord {
        EstimateRecord {
            n_total: n,
            alphabet: a,
            theta,
            q,
            rep,
            seed: 0,
            estimator: est,
            outcome,
            d_true,
            d_sample: 1,
            n_sample: 1,
            gamma_sq_true: 0.0,
            wall_time_us: 0,
        }
    }

    fn exact_grid() -> Vec<EstimateRecord> {
        // Two regimes, two thetas, two qs, estimator exact everywhere.
        let mut out = Vec::new();
        for (n, a) in [(1000u64, 100u64), (1000, 50)] {
            for theta in [0.0, 1.0] {
                for q in [0.01, 0.1] {
                    for rep in 0..2 {
                        out.push(record(n, a, theta, q, rep, EstimatorId::Uj1, Ok(a as f64), a));
                    }
                }
            }
        }
        out
    }

    #[test]
    fn layout_from_records() {
        let layout = GridLayout::from_records(&exact_grid());
        assert_eq!(layout.rows, vec![1000]);
        assert_eq!(layout.cols, vec![10, 20]);
        assert_eq!(layout.position(1000, 50), Some((0, 1)));
    }

    #[test]
    fn exact_estimator_gives_zero_bias_matrix() {
        let matrices = bias_matrices(&exact_grid(), EstimatorId::Uj1).unwrap();
        assert_eq!(matrices.len(), 2);
        for m in &matrices {
            for row in &m.values {
                for &v in row {
                    assert_eq!(v, 0.0);
                }
            }
        }
        // Mid-scale color everywhere.
        assert_eq!(bias_color(0.0), "#ffffff");
    }

    #[test]
    fn bias_matrix_csv_reaggregates_identically() {
        let records = exact_grid();
        let m = &bias_matrices(&records, EstimatorId::Uj1).unwrap()[0];
        // Independent aggregation path: straight scan over the raw records.
        for (ti, &theta) in m.thetas.iter().enumerate() {
            for (qi, &q) in m.qs.iter().enumerate() {
                let vals: Vec<f64> = records
                    .iter()
                    .filter(|r| {
                        r.n_total == m.n_total
                            && r.alphabet == m.alphabet
                            && r.theta == theta
                            && r.q == q
                    })
                    .map(|r| {
                        (*r.outcome.as_ref().unwrap() - r.d_true as f64) / r.d_true as f64
                    })
                    .collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                assert!((m.values[ti][qi] - mean).abs() < 1e-12);
            }
        }
        assert!(m.to_csv().starts_with("theta\\q,0.01,0.1\n"));
    }

    #[test]
    fn bias_surface_needs_two_points_per_axis() {
        let single: Vec<EstimateRecord> =
            vec![record(1000, 100, 0.0, 0.01, 0, EstimatorId::Uj1, Ok(100.0), 100)];
        assert!(matches!(
            bias_matrices(&single, EstimatorId::Uj1),
            Err(DveError::MissingSlice(_))
        ));
    }

    #[test]
    fn threshold_exact_everywhere_is_smallest_q() {
        let t = emit_threshold_table(
            &exact_grid(),
            &[(ThresholdStatistic::Max, 5.0), (ThresholdStatistic::Avg, 2.0)],
        );
        assert_eq!(t.lookup(ThresholdStatistic::Max, 5.0, EstimatorId::Uj1), Some(0.01));
        assert_eq!(t.lookup(ThresholdStatistic::Avg, 2.0, EstimatorId::Uj1), Some(0.01));
    }

    #[test]
    fn threshold_failures_print_na() {
        let mut records = exact_grid();
        for r in &mut records {
            r.estimator = EstimatorId::Cl1;
            r.outcome = Err("zero_coverage".into());
        }
        let t = emit_threshold_table(&records, &[(ThresholdStatistic::Max, 5.0)]);
        assert_eq!(t.lookup(ThresholdStatistic::Max, 5.0, EstimatorId::Cl1), None);
        assert!(t.to_csv().contains("na"));
        assert!(t.to_text().contains("na"));
    }

    #[test]
    fn emit_2d_grid_rejects_missing_slice() {
        let records = exact_grid();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plot.svg");
        assert!(matches!(
            emit_2d_grid(&records, &[EstimatorId::Uj1], 0.5, &path),
            Err(DveError::MissingSlice(_))
        ));
        assert!(matches!(
            emit_2d_grid(&records, &[], 0.01, &path),
            Err(DveError::MissingSlice(_))
        ));
    }

    #[test]
    fn emission_is_byte_stable() {
        let records = exact_grid();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.svg");
        let p2 = dir.path().join("b.svg");
        emit_2d_grid(&records, &[EstimatorId::Uj1], 0.01, &p1).unwrap();
        emit_2d_grid(&records, &[EstimatorId::Uj1], 0.01, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());

        let s1 = dir.path().join("surf1");
        let s2 = dir.path().join("surf2");
        emit_bias_surface(&records, EstimatorId::Uj1, &s1).unwrap();
        emit_bias_surface(&records, EstimatorId::Uj1, &s2).unwrap();
        let f1 = fs::read(s1.join("bias_surface_uj1.svg")).unwrap();
        let f2 = fs::read(s2.join("bias_surface_uj1.svg")).unwrap();
        assert_eq!(f1, f2);
    }

    #[test]
    fn bias_color_is_monotone() {
        let biases = [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 3.0, 5.0];
        // Parse back the red/blue channel ordering: below zero the red
        // channel shrinks as bias drops; above zero the green shrinks.
        let mut greens = Vec::new();
        for &b in &biases[3..] {
            let c = bias_color(b);
            greens.push(u8::from_str_radix(&c[3..5], 16).unwrap());
        }
        assert!(greens.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn region_tables_emit() {
        let dir = tempfile::tempdir().unwrap();
        emit_region_tables(&exact_grid(), dir.path()).unwrap();
        let ratio = fs::read_to_string(dir.path().join("ratio_error.csv")).unwrap();
        assert!(ratio.contains("uj1"));
        assert!(fs::metadata(dir.path().join("pct_rmse.csv")).is_ok());
    }
}
