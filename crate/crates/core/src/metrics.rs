//! Detection and pose metrics plus their aggregation into reports.

use std::io::Write;

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::geometry::Pose;
use crate::skeleton::{Limb, SkeletonModel, NUM_JOINTS, NUM_MAPS};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn from_masks(pred: ArrayView2<bool>, gt: ArrayView2<bool>) -> Result<Self> {
        if pred.dim() != gt.dim() {
            return Err(Error::Shape(format!("masks {:?} and {:?}", pred.dim(), gt.dim())));
        }
        let mut c = ConfusionCounts::default();
        Zip::from(pred).and(gt).for_each(|&p, &g| match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        });
        Ok(c)
    }

    /// 2TP / (2TP + FP + FN); 1 when both masks are empty.
    pub fn dsc(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }

    /// TP / (TP + FN); 1 when the ground truth is empty.
    pub fn recall(&self) -> f64 {
        let denom = self.tp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            self.tp as f64 / denom as f64
        }
    }

    pub fn both_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }
}

pub fn dsc(pred: ArrayView2<bool>, gt: ArrayView2<bool>) -> Result<f64> {
    Ok(ConfusionCounts::from_masks(pred, gt)?.dsc())
}

pub fn recall(pred: ArrayView2<bool>, gt: ArrayView2<bool>) -> Result<f64> {
    Ok(ConfusionCounts::from_masks(pred, gt)?.recall())
}

pub fn binarize(map: ArrayView2<f32>, threshold: f32) -> Array2<bool> {
    map.mapv(|v| v > threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsdOutcome {
    /// `None` when no joint of the limb is present in both poses.
    pub value: Option<f64>,
    pub matched: usize,
    /// Ground-truth joints of the limb without a prediction.
    pub missing: usize,
}

/// Root mean square joint distance over the limb's joints present in both
/// poses.
pub fn rmsd(pred: &Pose, gt: &Pose, limb: Limb) -> RmsdOutcome {
    let mut sum_sq = 0.0;
    let mut matched = 0;
    let mut missing = 0;
    for j in limb.joints() {
        match (pred.joints[j], gt.joints[j]) {
            (Some(p), Some(g)) => {
                sum_sq += p.distance_sq(g);
                matched += 1;
            }
            (None, Some(_)) => missing += 1,
            _ => {}
        }
    }
    RmsdOutcome {
        value: (matched > 0).then(|| (sum_sq / matched as f64).sqrt()),
        matched,
        missing,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatTestConfig {
    pub alpha: f64,
}

impl Default for StatTestConfig {
    fn default() -> Self {
        StatTestConfig { alpha: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum TTestOutcome {
    Computed {
        t: f64,
        p: f64,
        df: f64,
        significant: bool,
    },
    /// All paired differences are identical, so the statistic is undefined.
    Degenerate,
}

/// Two-sided paired t-test on `a[i] - b[i]`.
pub fn paired_ttest(a: &[f64], b: &[f64], cfg: &StatTestConfig) -> Result<TTestOutcome> {
    if a.len() != b.len() {
        return Err(Error::Pairing(a.len(), b.len()));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::Parameter(format!("alpha {} outside (0, 1)", cfg.alpha)));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Parameter(format!("paired t-test needs at least 2 pairs, got {n}")));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Ok(TTestOutcome::Degenerate);
    }
    let df = (n - 1) as f64;
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Parameter(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTestOutcome::Computed {
        t,
        p,
        df,
        significant: p < cfg.alpha,
    })
}

/// Linear-interpolation quantile of sorted data (`q` in [0, 1]).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
}

/// Median and inter-quartile range; `None` for an empty list.
pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    Some(Summary {
        n: sorted.len(),
        median: quantile_sorted(&sorted, 0.5),
        q1,
        q3,
        iqr: q3 - q1,
    })
}

/// Per-frame values gathered during an evaluation run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricsCollector {
    /// Per map channel.
    pub dsc: Vec<Vec<f64>>,
    pub recall: Vec<Vec<f64>>,
    /// Frames where prediction and ground truth of a channel were both empty.
    pub empty_masks: Vec<usize>,
    /// Per limb.
    pub rmsd: Vec<Vec<f64>>,
    pub rmsd_undefined: Vec<usize>,
    pub missing_joints: Vec<usize>,
    pub seconds_per_image: Vec<f64>,
}

impl MetricsCollector {
    pub fn new() -> Self {
        MetricsCollector {
            dsc: vec![Vec::new(); NUM_MAPS],
            recall: vec![Vec::new(); NUM_MAPS],
            empty_masks: vec![0; NUM_MAPS],
            rmsd: vec![Vec::new(); 4],
            rmsd_undefined: vec![0; 4],
            missing_joints: vec![0; 4],
            seconds_per_image: Vec::new(),
        }
    }

    pub fn add_detection(&mut self, channel: usize, pred: ArrayView2<bool>, gt: ArrayView2<bool>) -> Result<()> {
        let c = ConfusionCounts::from_masks(pred, gt)?;
        if c.both_empty() {
            self.empty_masks[channel] += 1;
        }
        self.dsc[channel].push(c.dsc());
        self.recall[channel].push(c.recall());
        Ok(())
    }

    pub fn add_pose(&mut self, pred: &Pose, gt: &Pose) {
        for limb in Limb::ALL {
            let out = rmsd(pred, gt, limb);
            self.missing_joints[limb.index()] += out.missing;
            match out.value {
                Some(v) => self.rmsd[limb.index()].push(v),
                None => self.rmsd_undefined[limb.index()] += 1,
            }
        }
    }

    pub fn add_timing(&mut self, seconds_per_image: f64) {
        self.seconds_per_image.push(seconds_per_image);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRow {
    pub name: String,
    pub dsc: Option<Summary>,
    pub recall: Option<Summary>,
    pub empty_cases: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimbRow {
    pub limb: Limb,
    pub rmsd: Option<Summary>,
    pub undefined: usize,
    pub missing_joints: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Working resolution the pixel metrics refer to, `[width, height]`.
    pub resolution: [usize; 2],
    pub joints: Vec<ChannelRow>,
    pub connections: Vec<ChannelRow>,
    pub limbs: Vec<LimbRow>,
    /// Median of the per-limb medians.
    pub overall_rmsd_median: Option<f64>,
    pub mean_seconds_per_image: Option<f64>,
    pub notes: Vec<String>,
}

pub fn aggregate_report(metrics: &MetricsCollector, resolution: [usize; 2]) -> EvaluationReport {
    let skeleton = SkeletonModel::new();
    let mut notes = Vec::new();
    let channel_row = |c: usize, name: String, notes: &mut Vec<String>| {
        let dsc = summarize(&metrics.dsc[c]);
        if dsc.is_none() {
            notes.push(format!("{name}: no detection samples, omitted"));
        }
        ChannelRow {
            name,
            dsc,
            recall: summarize(&metrics.recall[c]),
            empty_cases: metrics.empty_masks[c],
        }
    };
    let joints = (0..NUM_JOINTS)
        .map(|j| channel_row(j, skeleton.joint_name(j).unwrap().to_string(), &mut notes))
        .collect();
    let connections = (NUM_JOINTS..NUM_MAPS)
        .map(|c| channel_row(c, skeleton.connection_name(c - NUM_JOINTS).unwrap(), &mut notes))
        .collect();
    let limbs: Vec<LimbRow> = Limb::ALL
        .iter()
        .map(|&limb| {
            let rmsd = summarize(&metrics.rmsd[limb.index()]);
            if rmsd.is_none() {
                notes.push(format!("{limb}: no RMSD samples, omitted"));
            }
            LimbRow {
                limb,
                rmsd,
                undefined: metrics.rmsd_undefined[limb.index()],
                missing_joints: metrics.missing_joints[limb.index()],
            }
        })
        .collect();
    let medians: Vec<f64> = limbs.iter().filter_map(|l| l.rmsd.map(|s| s.median)).collect();
    let mean_time = (!metrics.seconds_per_image.is_empty())
        .then(|| metrics.seconds_per_image.iter().sum::<f64>() / metrics.seconds_per_image.len() as f64);
    EvaluationReport {
        resolution,
        joints,
        connections,
        limbs,
        overall_rmsd_median: summarize(&medians).map(|s| s.median),
        mean_seconds_per_image: mean_time,
        notes,
    }
}

fn fmt_summary(s: &Option<Summary>) -> [String; 2] {
    match s {
        Some(s) => [format!("{:.4}", s.median), format!("{:.4}", s.iqr)],
        None => [String::new(), String::new()],
    }
}

/// Per joint and connection: median and IQR of DSC and recall.
pub fn write_detection_csv<W: Write>(report: &EvaluationReport, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kind", "name", "dsc_median", "dsc_iqr", "recall_median", "recall_iqr", "empty_cases"])?;
    for (kind, rows) in [("joint", &report.joints), ("connection", &report.connections)] {
        for row in rows {
            let [dm, di] = fmt_summary(&row.dsc);
            let [rm, ri] = fmt_summary(&row.recall);
            w.write_record([kind, &row.name, &dm, &di, &rm, &ri, &row.empty_cases.to_string()])?;
        }
    }
    w.flush()
}

/// Per limb: median and IQR of RMSD in working-resolution pixels.
pub fn write_limb_csv<W: Write>(report: &EvaluationReport, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["limb", "rmsd_median", "rmsd_iqr", "frames", "undefined", "missing_joints", "resolution"])?;
    let res = format!("{}x{}", report.resolution[0], report.resolution[1]);
    for row in &report.limbs {
        let [m, i] = fmt_summary(&row.rmsd);
        let n = row.rmsd.map(|s| s.n).unwrap_or(0).to_string();
        w.write_record([
            row.limb.name(),
            &m,
            &i,
            &n,
            &row.undefined.to_string(),
            &row.missing_joints.to_string(),
            &res,
        ])?;
    }
    w.flush()
}
