//! Desk-scale verification experiments: metric-property suites, the
//! loss-alignment study against Complete-IoU, gradient checks, the isotropic
//! failure demonstration, and dataset statistics.
//!
//! Runs are deterministic: every trial draws from its own ChaCha8 stream
//! derived from the configured seed and the trial index, trials may be
//! evaluated on any number of worker threads, and results are reduced in a
//! fixed order. Identical configurations produce byte-identical CSV files.

use crate::dataset::{
    aspect_ratio_kde, parse_dota_annotation, quad_to_obb, squareness_report, write_kde_csv,
    write_scatter_csv, AnnotationRecord, AspectRatioStats, CategorySquareness,
};
use crate::divergence::{
    bd_loss, bd_loss_params, bd_loss_grad, bhattacharyya_distance, gwd, gwd_loss, kld, kld_loss,
    DivergenceConfig,
};
use crate::error::{Error, Result};
use crate::gaussian::{
    gaussian_for_pair, is_square_like, obb_to_anisotropic_gaussian, obb_to_gaussian, Gaussian2,
    SquareLikePolicy,
};
use crate::geometry::{ciou_loss, hbb_iou, rotated_iou, Hbb, ObbBox};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

/// Tolerance for exact metric identities (symmetry gap, self-distance).
pub const EXACT_TOL: f64 = 1e-12;
/// Relative tolerance for scale invariance under random transforms.
pub const SCALE_TOL: f64 = 1e-9;
/// A loss counts as scale-sensitive when a uniform doubling moves it by more
/// than this, relatively.
pub const SCALE_CHANGE_MIN: f64 = 1e-3;
/// Gradient check pass threshold (max relative error vs central differences).
pub const GRAD_TOL: f64 = 1e-5;

/// Stream-id offset separating the scale-invariance suite from the main
/// trial streams.
const SCALE_STREAM_BASE: u64 = 1 << 32;

/// Sampling ranges, seed, and output location for the experiment commands.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub trials: u64,
    /// Box centers are uniform in this range, per axis.
    pub center_range: (f64, f64),
    /// Box sizes are uniform in this range, per side.
    pub size_range: (f64, f64),
    /// Box angles are uniform in this half-open range.
    pub angle_range: (f64, f64),
    pub out_dir: PathBuf,
    pub policy: SquareLikePolicy,
    pub divergence: DivergenceConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 10_000,
            center_range: (0.0, 10.0),
            size_range: (0.5, 5.0),
            angle_range: (-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2),
            out_dir: PathBuf::from("out"),
            policy: SquareLikePolicy::default(),
            divergence: DivergenceConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::InvalidConfig("trials must be >= 1".into()));
        }
        let ranges = [
            ("center", self.center_range),
            ("size", self.size_range),
            ("angle", self.angle_range),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidConfig(format!(
                    "{name} range ({lo}, {hi}) is not an ordered finite interval"
                )));
            }
        }
        if self.size_range.0 <= 0.0 {
            return Err(Error::InvalidConfig(
                "size range must be strictly positive".into(),
            ));
        }
        if !(self.policy.tau >= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "tau must be >= 1 (got {})",
                self.policy.tau
            )));
        }
        if !(self.policy.delta > 1.0) {
            return Err(Error::InvalidPolicy {
                delta: self.policy.delta,
            });
        }
        if !(self.divergence.alpha > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be > 0 (got {})",
                self.divergence.alpha
            )));
        }
        if !(self.divergence.grad_step > 0.0 && self.divergence.grad_step < 1e-2) {
            return Err(Error::InvalidConfig(format!(
                "grad step must lie in (0, 1e-2) (got {})",
                self.divergence.grad_step
            )));
        }
        Ok(())
    }

    /// Independent deterministic generator for one trial.
    fn trial_rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    fn sample_in(&self, rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..hi)
        }
    }

    /// One random box: center, then sizes, then angle.
    fn sample_box(&self, rng: &mut ChaCha8Rng) -> ObbBox {
        let cx = self.sample_in(rng, self.center_range);
        let cy = self.sample_in(rng, self.center_range);
        let w = self.sample_in(rng, self.size_range);
        let h = self.sample_in(rng, self.size_range);
        let theta = self.sample_in(rng, self.angle_range);
        ObbBox::new(cx, cy, w, h, theta).expect("sampled parameters are valid")
    }

    /// Raw `(cx, cy, w, h)` of an axis-aligned box for the alignment study.
    fn sample_horizontal(&self, rng: &mut ChaCha8Rng) -> [f64; 4] {
        let cx = self.sample_in(rng, self.center_range);
        let cy = self.sample_in(rng, self.center_range);
        let w = self.sample_in(rng, self.size_range);
        let h = self.sample_in(rng, self.size_range);
        [cx, cy, w, h]
    }
}

fn create_out_file(dir: &Path, name: &str) -> Result<BufWriter<fs::File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(fs::File::create(dir.join(name))?))
}

// ---------------------------------------------------------------------------
// Metric property suite
// ---------------------------------------------------------------------------

/// Which loss a property row belongs to.
pub const LOSS_NAMES: [&str; 3] = ["bd", "gwd", "kld"];

/// Violation counts for one loss across the property suites.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct LossPropertyCounts {
    pub non_negativity: u64,
    pub identity: u64,
    pub symmetry: u64,
    pub triangle: u64,
    /// Pairs whose value moved by more than [`SCALE_TOL`] (relative) under a
    /// random invertible transform of both Gaussians.
    pub scale: u64,
    /// Pairs whose value moved by more than [`SCALE_CHANGE_MIN`] (relative)
    /// under a uniform doubling; nonzero flags a scale-sensitive loss.
    pub scale_doubling_changed: u64,
    pub max_symmetry_gap: f64,
    pub max_scale_rel_change: f64,
}

impl LossPropertyCounts {
    fn merge(mut self, other: Self) -> Self {
        self.non_negativity += other.non_negativity;
        self.identity += other.identity;
        self.symmetry += other.symmetry;
        self.triangle += other.triangle;
        self.scale += other.scale;
        self.scale_doubling_changed += other.scale_doubling_changed;
        self.max_symmetry_gap = self.max_symmetry_gap.max(other.max_symmetry_gap);
        self.max_scale_rel_change = self.max_scale_rel_change.max(other.max_scale_rel_change);
        self
    }

    /// True when every metric property held (triangle, symmetry, identity,
    /// non-negativity, and scale invariance).
    pub fn all_properties_hold(&self) -> bool {
        self.non_negativity == 0
            && self.identity == 0
            && self.symmetry == 0
            && self.triangle == 0
            && self.scale == 0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyReport {
    pub trials: u64,
    pub scale_trials: u64,
    /// Counts for `bd`, `gwd`, `kld`, in [`LOSS_NAMES`] order.
    pub losses: [LossPropertyCounts; 3],
    /// Whether the primary loss held every property.
    pub passed: bool,
}

impl PropertyReport {
    pub fn bd(&self) -> &LossPropertyCounts {
        &self.losses[0]
    }
    pub fn gwd(&self) -> &LossPropertyCounts {
        &self.losses[1]
    }
    pub fn kld(&self) -> &LossPropertyCounts {
        &self.losses[2]
    }

    pub fn summary_json(&self, seed: u64) -> Value {
        let metrics: Value = LOSS_NAMES
            .iter()
            .zip(&self.losses)
            .map(|(name, counts)| (name.to_string(), serde_json::to_value(counts).unwrap()))
            .collect::<serde_json::Map<String, Value>>()
            .into();
        json!({
            "command": "verify-properties",
            "seed": seed,
            "trials": self.trials,
            "verdict": if self.passed { "pass" } else { "fail" },
            "metrics": {
                "scale_trials": self.scale_trials,
                "losses": metrics,
            },
        })
    }
}

/// Losses for one ordered pair, in [`LOSS_NAMES`] order.
fn pair_losses(p: &Gaussian2, t: &Gaussian2, dcfg: &DivergenceConfig) -> [f64; 3] {
    [
        bd_loss(p, t, dcfg).expect("sampled covariances are nondegenerate"),
        gwd_loss(p, t).expect("sampled covariances are nondegenerate"),
        kld_loss(p, t).expect("sampled covariances are nondegenerate"),
    ]
}

/// Distances (not losses) for the scale suite, in [`LOSS_NAMES`] order.
fn pair_distances(p: &Gaussian2, t: &Gaussian2, dcfg: &DivergenceConfig) -> [f64; 3] {
    [
        bhattacharyya_distance(p, t, dcfg).expect("sampled covariances are nondegenerate"),
        gwd(p, t).expect("sampled covariances are nondegenerate"),
        kld(p, t).expect("sampled covariances are nondegenerate"),
    ]
}

fn linear_transform(g: &Gaussian2, m: [[f64; 2]; 2]) -> Gaussian2 {
    let [mx, my] = g.mean();
    let mean = [
        m[0][0] * mx + m[0][1] * my,
        m[1][0] * mx + m[1][1] * my,
    ];
    let c = g.cov();
    // M C (columns), then (M C) M^T; the off-diagonal is computed once so the
    // stored matrix is exactly symmetric.
    let mc = [
        [
            m[0][0] * c[0][0] + m[0][1] * c[1][0],
            m[0][0] * c[0][1] + m[0][1] * c[1][1],
        ],
        [
            m[1][0] * c[0][0] + m[1][1] * c[1][0],
            m[1][0] * c[0][1] + m[1][1] * c[1][1],
        ],
    ];
    let c00 = mc[0][0] * m[0][0] + mc[0][1] * m[0][1];
    let c01 = mc[0][0] * m[1][0] + mc[0][1] * m[1][1];
    let c11 = mc[1][0] * m[1][0] + mc[1][1] * m[1][1];
    Gaussian2::from_parts(mean, [[c00, c01], [c01, c11]])
}

fn rel_change(before: f64, after: f64) -> f64 {
    (after - before).abs() / (1.0 + before.abs())
}

/// Runs the metric-property suites (non-negativity, identity, symmetry,
/// triangle inequality over `trials` random box triples, and scale
/// invariance over up to 10^4 random invertible transforms) for the primary
/// loss and both normalized baselines.
pub fn evaluate_properties(cfg: &ExperimentConfig) -> Result<PropertyReport> {
    cfg.validate()?;
    let dcfg = cfg.divergence;

    let triple_counts = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = cfg.trial_rng(trial);
            let g: [Gaussian2; 3] = [
                obb_to_gaussian(&cfg.sample_box(&mut rng)),
                obb_to_gaussian(&cfg.sample_box(&mut rng)),
                obb_to_gaussian(&cfg.sample_box(&mut rng)),
            ];
            let fwd = [
                pair_losses(&g[0], &g[1], &dcfg),
                pair_losses(&g[0], &g[2], &dcfg),
                pair_losses(&g[1], &g[2], &dcfg),
            ];
            let rev = [
                pair_losses(&g[1], &g[0], &dcfg),
                pair_losses(&g[2], &g[0], &dcfg),
                pair_losses(&g[2], &g[1], &dcfg),
            ];
            // Identity is checked on the distances: the sqrt in the loss map
            // would blow 1e-15 self-distance rounding noise up to 1e-8.
            let self_distances = pair_distances(&g[0], &g[0], &dcfg);

            let mut counts = [LossPropertyCounts::default(); 3];
            for (k, c) in counts.iter_mut().enumerate() {
                for pair in 0..3 {
                    if fwd[pair][k] < 0.0 || rev[pair][k] < 0.0 {
                        c.non_negativity += 1;
                    }
                    let gap = (fwd[pair][k] - rev[pair][k]).abs();
                    c.max_symmetry_gap = c.max_symmetry_gap.max(gap);
                    if gap > EXACT_TOL {
                        c.symmetry += 1;
                    }
                }
                if self_distances[k] > EXACT_TOL {
                    c.identity += 1;
                }
                // Largest pairwise loss against the sum of the other two.
                let d = [fwd[0][k], fwd[1][k], fwd[2][k]];
                let total: f64 = d.iter().sum();
                let max = d.iter().cloned().fold(f64::MIN, f64::max);
                if max > total - max {
                    c.triangle += 1;
                }
            }
            counts
        })
        .reduce(
            || [LossPropertyCounts::default(); 3],
            |a, b| [a[0].merge(b[0]), a[1].merge(b[1]), a[2].merge(b[2])],
        );

    let scale_trials = cfg.trials.min(10_000);
    let scale_counts = (0..scale_trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = cfg.trial_rng(SCALE_STREAM_BASE + trial);
            let p = obb_to_gaussian(&cfg.sample_box(&mut rng));
            let t = obb_to_gaussian(&cfg.sample_box(&mut rng));
            // Random invertible transform, determinant bounded away from 0.
            let m = loop {
                let m: [[f64; 2]; 2] = [
                    [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
                    [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
                ];
                if (m[0][0] * m[1][1] - m[0][1] * m[1][0]).abs() >= 0.1 {
                    break m;
                }
            };
            let before = pair_distances(&p, &t, &dcfg);
            let after = pair_distances(
                &linear_transform(&p, m),
                &linear_transform(&t, m),
                &dcfg,
            );
            let doubled = pair_distances(
                &linear_transform(&p, [[2.0, 0.0], [0.0, 2.0]]),
                &linear_transform(&t, [[2.0, 0.0], [0.0, 2.0]]),
                &dcfg,
            );
            let mut counts = [LossPropertyCounts::default(); 3];
            for (k, c) in counts.iter_mut().enumerate() {
                let change = rel_change(before[k], after[k]);
                c.max_scale_rel_change = change;
                if change > SCALE_TOL {
                    c.scale += 1;
                }
                if rel_change(before[k], doubled[k]) > SCALE_CHANGE_MIN {
                    c.scale_doubling_changed += 1;
                }
            }
            counts
        })
        .reduce(
            || [LossPropertyCounts::default(); 3],
            |a, b| [a[0].merge(b[0]), a[1].merge(b[1]), a[2].merge(b[2])],
        );

    let losses = [
        triple_counts[0].merge(scale_counts[0]),
        triple_counts[1].merge(scale_counts[1]),
        triple_counts[2].merge(scale_counts[2]),
    ];
    let passed = losses[0].all_properties_hold();
    Ok(PropertyReport {
        trials: cfg.trials,
        scale_trials,
        losses,
        passed,
    })
}

/// Runs the property suite and writes `property_table.csv` (one yes/no row
/// per loss) and `property_counts.csv` (violation counts per property).
pub fn run_verify_properties(cfg: &ExperimentConfig) -> Result<PropertyReport> {
    let report = evaluate_properties(cfg)?;

    let mut table = create_out_file(&cfg.out_dir, "property_table.csv")?;
    writeln!(
        table,
        "loss,non_negativity,identity_of_indiscernibles,symmetry,triangle_inequality,scale_invariance"
    )?;
    for (name, c) in LOSS_NAMES.iter().zip(&report.losses) {
        let yes_no = |violations: u64| if violations == 0 { "yes" } else { "no" };
        writeln!(
            table,
            "{},{},{},{},{},{}",
            name,
            yes_no(c.non_negativity),
            yes_no(c.identity),
            yes_no(c.symmetry),
            yes_no(c.triangle),
            yes_no(c.scale),
        )?;
    }
    table.flush()?;

    let mut counts = create_out_file(&cfg.out_dir, "property_counts.csv")?;
    writeln!(counts, "loss,property,violations,checks")?;
    for (name, c) in LOSS_NAMES.iter().zip(&report.losses) {
        let rows = [
            ("non_negativity", c.non_negativity, 3 * report.trials),
            ("identity_of_indiscernibles", c.identity, report.trials),
            ("symmetry", c.symmetry, 3 * report.trials),
            ("triangle_inequality", c.triangle, report.trials),
            ("scale_invariance", c.scale, report.scale_trials),
            (
                "scale_doubling_changed",
                c.scale_doubling_changed,
                report.scale_trials,
            ),
        ];
        for (property, violations, checks) in rows {
            writeln!(counts, "{name},{property},{violations},{checks}")?;
        }
    }
    counts.flush()?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Loss alignment study
// ---------------------------------------------------------------------------

/// One sampled horizontal pair with all four losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub pair: u64,
    pub a: [f64; 4],
    pub b: [f64; 4],
    pub l_ciou: f64,
    pub l_bd: f64,
    pub l_gwd: f64,
    pub l_kld: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub trials: u64,
    /// Mean absolute deviation of each loss around its systematic offset
    /// from the Complete-IoU loss: bd, gwd, kld. The losses live on
    /// different scales (the normalized ones saturate below 1 while the
    /// Complete-IoU loss does not), so the constant offset is removed and
    /// this measures variability around the trend.
    pub mad: [f64; 3],
    /// Mean residual against the Complete-IoU loss: bd, gwd, kld.
    pub offset: [f64; 3],
    /// Pearson correlation with the Complete-IoU loss: bd, gwd, kld.
    pub corr: [f64; 3],
    pub passed: bool,
    #[serde(skip)]
    pub rows: Vec<ComparisonRow>,
}

impl CompareReport {
    pub fn summary_json(&self, seed: u64) -> Value {
        json!({
            "command": "compare-losses",
            "seed": seed,
            "trials": self.trials,
            "verdict": if self.passed { "pass" } else { "fail" },
            "metrics": {
                "mad_bd": self.mad[0],
                "mad_gwd": self.mad[1],
                "mad_kld": self.mad[2],
                "offset_bd": self.offset[0],
                "offset_gwd": self.offset[1],
                "offset_kld": self.offset[2],
                "corr_bd": self.corr[0],
                "corr_gwd": self.corr[1],
                "corr_kld": self.corr[2],
            },
        })
    }
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    sxy / (sxx * syy).sqrt()
}

/// Losses of one horizontal pair from its raw parameters. Shared by the
/// sampler and the CSV re-derivation check, so both follow the same
/// floating-point path.
fn horizontal_pair_losses(a: [f64; 4], b: [f64; 4], dcfg: &DivergenceConfig) -> Result<[f64; 4]> {
    let hbb_a = Hbb::from_center_size(a[0], a[1], a[2], a[3])?;
    let hbb_b = Hbb::from_center_size(b[0], b[1], b[2], b[3])?;
    let ga = obb_to_gaussian(&ObbBox::new(a[0], a[1], a[2], a[3], 0.0)?);
    let gb = obb_to_gaussian(&ObbBox::new(b[0], b[1], b[2], b[3], 0.0)?);
    Ok([
        ciou_loss(&hbb_a, &hbb_b),
        bd_loss(&ga, &gb, dcfg)?,
        gwd_loss(&ga, &gb)?,
        kld_loss(&ga, &gb)?,
    ])
}

fn comparison_row(cfg: &ExperimentConfig, trial: u64) -> ComparisonRow {
    let mut rng = cfg.trial_rng(trial);
    let a = cfg.sample_horizontal(&mut rng);
    let hbb_a = Hbb::from_center_size(a[0], a[1], a[2], a[3]).expect("sampled sizes are positive");
    // Half the pairs are forced to overlap so the study spans both regimes.
    let b = loop {
        let b = cfg.sample_horizontal(&mut rng);
        let hbb_b = Hbb::from_center_size(b[0], b[1], b[2], b[3]).expect("sampled sizes are positive");
        if trial % 2 != 0 || hbb_iou(&hbb_a, &hbb_b) > 0.0 {
            break b;
        }
    };
    let losses = horizontal_pair_losses(a, b, &cfg.divergence)
        .expect("sampled covariances are nondegenerate");
    ComparisonRow {
        pair: trial,
        a,
        b,
        l_ciou: losses[0],
        l_bd: losses[1],
        l_gwd: losses[2],
        l_kld: losses[3],
    }
}

/// Samples `trials` axis-aligned pairs and scores every loss against the
/// Complete-IoU reference.
pub fn evaluate_comparison(cfg: &ExperimentConfig) -> Result<CompareReport> {
    cfg.validate()?;
    let rows: Vec<ComparisonRow> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| comparison_row(cfg, trial))
        .collect();

    let ciou: Vec<f64> = rows.iter().map(|r| r.l_ciou).collect();
    let series = [
        rows.iter().map(|r| r.l_bd).collect::<Vec<f64>>(),
        rows.iter().map(|r| r.l_gwd).collect::<Vec<f64>>(),
        rows.iter().map(|r| r.l_kld).collect::<Vec<f64>>(),
    ];
    let n = rows.len() as f64;
    let offset: [f64; 3] = std::array::from_fn(|k| {
        series[k].iter().zip(&ciou).map(|(a, b)| a - b).sum::<f64>() / n
    });
    let mad: [f64; 3] = std::array::from_fn(|k| {
        series[k]
            .iter()
            .zip(&ciou)
            .map(|(a, b)| (a - b - offset[k]).abs())
            .sum::<f64>()
            / n
    });
    let corr = std::array::from_fn(|k| pearson(&series[k], &ciou));
    let passed = mad[0] < mad[1] && mad[0] < mad[2] && corr[0] > corr[1] && corr[0] > corr[2];
    Ok(CompareReport {
        trials: cfg.trials,
        mad,
        offset,
        corr,
        passed,
        rows,
    })
}

fn write_compare_csv<W: Write>(out: &mut W, rows: &[ComparisonRow]) -> Result<()> {
    writeln!(
        out,
        "pair,ax,ay,aw,ah,bx,by,bw,bh,l_ciou,l_bd,l_gwd,l_kld"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.pair,
            r.a[0],
            r.a[1],
            r.a[2],
            r.a[3],
            r.b[0],
            r.b[1],
            r.b[2],
            r.b[3],
            r.l_ciou,
            r.l_bd,
            r.l_gwd,
            r.l_kld
        )?;
    }
    Ok(())
}

/// Recomputes the losses of one serialized row from its box columns; the
/// full-precision decimal round trip makes bit-exact agreement possible.
pub fn rederive_comparison_row(line: &str, dcfg: &DivergenceConfig) -> Result<ComparisonRow> {
    let fields: Vec<&str> = line.trim_end().split(',').collect();
    if fields.len() != 13 {
        return Err(Error::InvalidConfig(format!(
            "expected 13 csv fields, found {}",
            fields.len()
        )));
    }
    let parse = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::InvalidConfig(format!("bad float {s:?} in csv row")))
    };
    let pair: u64 = fields[0]
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad index {:?} in csv row", fields[0])))?;
    let a: [f64; 4] = [
        parse(fields[1])?,
        parse(fields[2])?,
        parse(fields[3])?,
        parse(fields[4])?,
    ];
    let b: [f64; 4] = [
        parse(fields[5])?,
        parse(fields[6])?,
        parse(fields[7])?,
        parse(fields[8])?,
    ];
    let losses = horizontal_pair_losses(a, b, dcfg)?;
    Ok(ComparisonRow {
        pair,
        a,
        b,
        l_ciou: losses[0],
        l_bd: losses[1],
        l_gwd: losses[2],
        l_kld: losses[3],
    })
}

fn spot_check_compare_csv(path: &Path, rows: &[ComparisonRow], dcfg: &DivergenceConfig) -> Result<()> {
    let text = fs::read_to_string(path)?;
    let lines: Vec<&str> = text.lines().skip(1).collect();
    if lines.len() != rows.len() {
        return Err(Error::InvalidConfig(format!(
            "csv has {} rows, expected {}",
            lines.len(),
            rows.len()
        )));
    }
    let step = (rows.len() / 100).max(1);
    for idx in (0..rows.len()).step_by(step) {
        let rederived = rederive_comparison_row(lines[idx], dcfg)?;
        if rederived != rows[idx] {
            return Err(Error::InvalidConfig(format!(
                "csv row {idx} does not re-derive from its inputs"
            )));
        }
    }
    Ok(())
}

/// Runs the alignment study, writes `compare_losses.csv`, and spot-checks
/// that up to 100 serialized rows re-derive exactly from their inputs.
pub fn run_compare_losses(cfg: &ExperimentConfig) -> Result<CompareReport> {
    let report = evaluate_comparison(cfg)?;
    let mut out = create_out_file(&cfg.out_dir, "compare_losses.csv")?;
    write_compare_csv(&mut out, &report.rows)?;
    out.flush()?;
    drop(out);
    spot_check_compare_csv(
        &cfg.out_dir.join("compare_losses.csv"),
        &report.rows,
        &cfg.divergence,
    )?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GradCheckRow {
    pub trial: u64,
    pub pred: [f64; 5],
    pub gt: [f64; 5],
    pub loss: f64,
    pub grad: [f64; 5],
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradReport {
    pub trials: u64,
    pub max_rel_err: f64,
    pub worst_trial: u64,
    pub passed: bool,
    #[serde(skip)]
    pub rows: Vec<GradCheckRow>,
}

impl GradReport {
    pub fn summary_json(&self, seed: u64) -> Value {
        json!({
            "command": "grad-check",
            "seed": seed,
            "trials": self.trials,
            "verdict": if self.passed { "pass" } else { "fail" },
            "metrics": {
                "max_rel_err": self.max_rel_err,
                "worst_trial": self.worst_trial,
                "tolerance": GRAD_TOL,
            },
        })
    }
}

fn grad_check_trial(cfg: &ExperimentConfig, trial: u64) -> GradCheckRow {
    let mut rng = cfg.trial_rng(trial);
    let pred = cfg.sample_box(&mut rng);
    let gt = cfg.sample_box(&mut rng);
    // Odd trials force a square-like ground truth so the anisotropic branch
    // is exercised about half the time.
    let gt = if trial % 2 == 1 {
        ObbBox::new(gt.cx(), gt.cy(), gt.w(), gt.w() / 1.05, gt.theta())
            .expect("sampled parameters are valid")
    } else {
        gt
    };

    let (loss, grad) =
        bd_loss_grad(&pred, &gt, &cfg.policy, &cfg.divergence).expect("valid sampled pair");
    let params = pred.params();
    let mut fd = [0.0; 5];
    for (k, slot) in fd.iter_mut().enumerate() {
        let step = cfg.divergence.grad_step * params[k].abs().max(1.0);
        let mut hi = params;
        hi[k] += step;
        let mut lo = params;
        lo[k] -= step;
        let f_hi =
            bd_loss_params(hi, &gt, &cfg.policy, &cfg.divergence).expect("perturbed pair valid");
        let f_lo =
            bd_loss_params(lo, &gt, &cfg.policy, &cfg.divergence).expect("perturbed pair valid");
        *slot = (f_hi - f_lo) / (2.0 * step);
    }
    let analytic = grad.to_array();
    let scale = analytic
        .iter()
        .chain(fd.iter())
        .fold(0.0f64, |m, g| m.max(g.abs()))
        .max(1e-6);
    let max_rel_err = analytic
        .iter()
        .zip(fd)
        .map(|(a, f)| (a - f).abs() / scale)
        .fold(0.0f64, f64::max);
    GradCheckRow {
        trial,
        pred: params,
        gt: gt.params(),
        loss,
        grad: analytic,
        max_rel_err,
    }
}

/// Compares analytic gradients against central finite differences over
/// `trials` random pairs; passes when the worst relative error stays within
/// [`GRAD_TOL`].
pub fn evaluate_grad_check(cfg: &ExperimentConfig) -> Result<GradReport> {
    cfg.validate()?;
    let rows: Vec<GradCheckRow> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| grad_check_trial(cfg, trial))
        .collect();
    let (worst_trial, max_rel_err) = rows
        .iter()
        .map(|r| (r.trial, r.max_rel_err))
        .fold((0, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
    Ok(GradReport {
        trials: cfg.trials,
        max_rel_err,
        worst_trial,
        passed: max_rel_err <= GRAD_TOL,
        rows,
    })
}

/// Runs the gradient check and writes `grad_check.csv`.
pub fn run_grad_check(cfg: &ExperimentConfig) -> Result<GradReport> {
    let report = evaluate_grad_check(cfg)?;
    let mut out = create_out_file(&cfg.out_dir, "grad_check.csv")?;
    writeln!(
        out,
        "trial,p_cx,p_cy,p_w,p_h,p_theta,t_cx,t_cy,t_w,t_h,t_theta,loss,d_cx,d_cy,d_w,d_h,d_theta,max_rel_err"
    )?;
    for r in &report.rows {
        let p = r.pred.map(|v| v.to_string()).join(",");
        let t = r.gt.map(|v| v.to_string()).join(",");
        let g = r.grad.map(|v| v.to_string()).join(",");
        writeln!(out, "{},{},{},{},{},{}", r.trial, p, t, r.loss, g, r.max_rel_err)?;
    }
    out.flush()?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Isotropic failure demonstration
// ---------------------------------------------------------------------------

/// Metrics for a square box against its 45-degree rotation: the plain
/// encoding sees no difference, the exact IoU does, and the anisotropic
/// encoding restores a usable gradient signal.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct IsotropicReport {
    pub gbb_distance: f64,
    pub exact_iou: f64,
    pub iou_loss: f64,
    pub agbb_loss: f64,
    pub passed: bool,
}

impl IsotropicReport {
    pub fn summary_json(&self) -> Value {
        json!({
            "command": "isotropic-demo",
            "seed": 0,
            "trials": 1,
            "verdict": if self.passed { "pass" } else { "fail" },
            "metrics": {
                "gbb_distance": self.gbb_distance,
                "exact_iou": self.exact_iou,
                "iou_loss": self.iou_loss,
                "agbb_loss": self.agbb_loss,
            },
        })
    }
}

pub fn isotropic_demo(
    policy: &SquareLikePolicy,
    dcfg: &DivergenceConfig,
) -> Result<IsotropicReport> {
    let a = ObbBox::new(0.0, 0.0, 2.0, 2.0, 0.0)?;
    let b = ObbBox::new(0.0, 0.0, 2.0, 2.0, std::f64::consts::FRAC_PI_4)?;

    let gbb_distance =
        bhattacharyya_distance(&obb_to_gaussian(&a), &obb_to_gaussian(&b), dcfg)?;
    let exact_iou = rotated_iou(&a, &b);
    let agbb_loss = bd_loss(
        &obb_to_anisotropic_gaussian(&a, policy)?,
        &obb_to_anisotropic_gaussian(&b, policy)?,
        dcfg,
    )?;
    let passed = gbb_distance <= 1e-10
        && (exact_iou - std::f64::consts::FRAC_1_SQRT_2).abs() <= 1e-3
        && agbb_loss > 0.01;
    Ok(IsotropicReport {
        gbb_distance,
        exact_iou,
        iou_loss: 1.0 - exact_iou,
        agbb_loss,
        passed,
    })
}

// ---------------------------------------------------------------------------
// Single-pair inspection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PairDivergences {
    pub bd_distance: f64,
    pub l_bd: f64,
    pub kld: f64,
    pub l_kld: f64,
    pub gwd: f64,
    pub l_gwd: f64,
}

fn divergences_for(p: &Gaussian2, t: &Gaussian2, dcfg: &DivergenceConfig) -> Result<PairDivergences> {
    Ok(PairDivergences {
        bd_distance: bhattacharyya_distance(p, t, dcfg)?,
        l_bd: bd_loss(p, t, dcfg)?,
        kld: kld(p, t)?,
        l_kld: kld_loss(p, t)?,
        gwd: gwd(p, t)?,
        l_gwd: gwd_loss(p, t)?,
    })
}

/// All metrics for one (prediction, ground-truth) pair. The anisotropic
/// pipeline is reported when the second box is square-like.
#[derive(Debug, Clone, Serialize)]
pub struct PairReport {
    pub box_a: [f64; 5],
    pub box_b: [f64; 5],
    pub iou: f64,
    pub iou_loss: f64,
    pub gbb: PairDivergences,
    pub agbb: Option<PairDivergences>,
}

impl PairReport {
    pub fn summary_json(&self) -> Value {
        json!({
            "command": "iou",
            "seed": 0,
            "trials": 1,
            "verdict": "ok",
            "metrics": serde_json::to_value(self).unwrap(),
        })
    }
}

pub fn pair_metrics(
    a: &ObbBox,
    b: &ObbBox,
    policy: &SquareLikePolicy,
    dcfg: &DivergenceConfig,
) -> Result<PairReport> {
    let iou = rotated_iou(a, b);
    let gbb = divergences_for(&obb_to_gaussian(a), &obb_to_gaussian(b), dcfg)?;
    let agbb = if is_square_like(b, policy) {
        let (p, t) = gaussian_for_pair(a, b, policy)?;
        Some(divergences_for(&p, &t, dcfg)?)
    } else {
        None
    };
    Ok(PairReport {
        box_a: a.params(),
        box_b: b.params(),
        iou,
        iou_loss: 1.0 - iou,
        gbb,
        agbb,
    })
}

// ---------------------------------------------------------------------------
// Dataset analysis
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DatasetOptions {
    pub tau: f64,
    pub bandwidth: Option<f64>,
    pub include_difficult: bool,
    pub out_dir: PathBuf,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            tau: SquareLikePolicy::default().tau,
            bandwidth: None,
            include_difficult: true,
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetReport {
    pub files: usize,
    pub records: usize,
    /// `(path, reason)` for files or records that could not be used.
    pub skipped: Vec<(String, String)>,
    pub categories: Vec<CategorySquareness>,
    #[serde(skip)]
    pub kde: Vec<AspectRatioStats>,
}

impl DatasetReport {
    pub fn summary_json(&self) -> Value {
        let fractions: serde_json::Map<String, Value> = self
            .categories
            .iter()
            .map(|c| (c.category.clone(), json!(c.fraction)))
            .collect();
        json!({
            "command": "analyze-dataset",
            "seed": 0,
            "trials": self.records,
            "verdict": "ok",
            "metrics": {
                "files": self.files,
                "records": self.records,
                "skipped": self.skipped.len(),
                "squareness_fractions": fractions,
            },
        })
    }
}

fn annotation_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for path in paths {
        let meta = fs::metadata(path)?;
        if meta.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(path)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|ext| ext == "txt"))
                .collect();
            entries.sort();
            files.extend(entries);
        } else {
            files.push(path.clone());
        }
    }
    Ok(files)
}

/// Parses every annotation file, computes per-category squareness fractions
/// and aspect-ratio KDEs, and writes `scatter.csv` and `kde.csv`.
///
/// Files that fail to parse are reported in `skipped` and do not stop the
/// run; listed paths that do not exist are hard errors.
pub fn run_analyze_dataset(paths: &[PathBuf], opts: &DatasetOptions) -> Result<DatasetReport> {
    if !(opts.tau >= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "tau must be >= 1 (got {})",
            opts.tau
        )));
    }
    let files = annotation_files(paths)?;
    let mut skipped: Vec<(String, String)> = Vec::new();
    let mut records: Vec<AnnotationRecord> = Vec::new();
    for file in &files {
        let text = fs::read_to_string(file)?;
        match parse_dota_annotation(&text) {
            Ok(parsed) => {
                for record in parsed {
                    if !opts.include_difficult && record.difficult {
                        continue;
                    }
                    // Degenerate quads are reported and skipped.
                    match quad_to_obb(&record) {
                        Ok(_) => records.push(record),
                        Err(err) => {
                            skipped.push((file.display().to_string(), err.to_string()))
                        }
                    }
                }
            }
            Err(err) => skipped.push((file.display().to_string(), err.to_string())),
        }
    }

    let categories = squareness_report(&records, opts.tau)?;
    let mut kde = Vec::new();
    for cat in &categories {
        if cat.total >= 2 {
            kde.push(aspect_ratio_kde(&records, &cat.category, opts.bandwidth)?);
        }
    }

    let mut scatter = create_out_file(&opts.out_dir, "scatter.csv")?;
    write_scatter_csv(&mut scatter, &categories, opts.tau)?;
    scatter.flush()?;
    let mut kde_out = create_out_file(&opts.out_dir, "kde.csv")?;
    write_kde_csv(&mut kde_out, &kde)?;
    kde_out.flush()?;

    Ok(DatasetReport {
        files: files.len(),
        records: records.len(),
        skipped,
        categories,
        kde,
    })
}
