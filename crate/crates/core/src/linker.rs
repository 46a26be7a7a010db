//! Turns confidence maps into limb poses.
//!
//! Each frame is handled on its own. Joint candidates are local maxima of
//! the joint channels; each connection then picks the candidate pair whose
//! straight line collects the highest mean value on the connection channel.
//! Within a limb the connections are matched distal first, and the middle
//! joint shared by both connections follows the stronger of the two matches.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::geometry::{Point, Pose};
use crate::skeleton::{Limb, SkeletonModel, NUM_CONNECTIONS, NUM_JOINTS, NUM_MAPS};
use crate::targets::MapStack;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub x: usize,
    pub y: usize,
    pub score: f32,
}

impl Peak {
    pub fn point(&self) -> Point {
        Point::new(self.x as f64, self.y as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointCandidate {
    pub joint: usize,
    pub position: Point,
    pub score: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkerParams {
    /// Odd side length of the suppression window.
    pub window: usize,
    pub threshold: f32,
    /// Candidates kept per joint channel.
    pub top_k: usize,
    /// Samples along each candidate line.
    pub line_samples: usize,
    /// When set, each candidate is moved to the score-weighted centroid of
    /// the pixels within this radius whose value is at least half the peak.
    pub refine_radius: Option<f64>,
}

impl Default for LinkerParams {
    fn default() -> Self {
        LinkerParams {
            window: 5,
            threshold: 0.3,
            top_k: 4,
            line_samples: 32,
            refine_radius: None,
        }
    }
}

impl LinkerParams {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::Parameter(format!("NMS window must be odd, got {}", self.window)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Parameter(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if self.top_k == 0 {
            return Err(Error::Parameter("top_k must be at least 1".into()));
        }
        if self.line_samples < 2 {
            return Err(Error::Parameter("line_samples must be at least 2".into()));
        }
        Ok(())
    }
}

/// Local maxima of `map` within a `window` x `window` neighbourhood.
///
/// A pixel survives when no neighbour beats it, where equal values are won
/// by the lower row-major index, and its value is at least `threshold`.
/// Results are sorted by descending score, then row-major index.
pub fn nms(map: ArrayView2<f32>, window: usize, threshold: f32) -> Result<Vec<Peak>> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::Parameter(format!("NMS window must be odd, got {window}")));
    }
    let (h, w) = map.dim();
    let half = window / 2;
    let mut peaks = Vec::new();
    for i in 0..h {
        for j in 0..w {
            let v = map[(i, j)];
            if !(v >= threshold) {
                continue;
            }
            let here = i * w + j;
            let mut is_max = true;
            'scan: for ii in i.saturating_sub(half)..(i + half + 1).min(h) {
                for jj in j.saturating_sub(half)..(j + half + 1).min(w) {
                    let u = map[(ii, jj)];
                    if u > v || (u == v && ii * w + jj < here) {
                        is_max = false;
                        break 'scan;
                    }
                }
            }
            if is_max {
                peaks.push(Peak { x: j, y: i, score: v });
            }
        }
    }
    peaks.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then((a.y * w + a.x).cmp(&(b.y * w + b.x)))
    });
    Ok(peaks)
}

/// Bilinear sample with coordinates clamped to the frame.
pub fn sample_bilinear(map: ArrayView2<f32>, p: Point) -> f64 {
    let (h, w) = map.dim();
    let x = p.x.clamp(0.0, (w - 1) as f64);
    let y = p.y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = map[(y0, x0)] as f64 * (1.0 - fx) + map[(y0, x1)] as f64 * fx;
    let bottom = map[(y1, x0)] as f64 * (1.0 - fx) + map[(y1, x1)] as f64 * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Mean of `n_samples` bilinear samples evenly spaced on the segment `a`-`b`
/// (both ends included).
pub fn line_integral(conn_map: ArrayView2<f32>, a: Point, b: Point, n_samples: usize) -> f64 {
    if a == b {
        return sample_bilinear(conn_map, a);
    }
    let n = n_samples.max(2);
    let sum: f64 = (0..n)
        .map(|i| sample_bilinear(conn_map, a.lerp(b, i as f64 / (n - 1) as f64)))
        .sum();
    sum / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairMatch {
    /// Index into the first candidate list.
    pub a: usize,
    /// Index into the second candidate list.
    pub b: usize,
    pub score: f64,
}

/// The candidate pair with the highest line integral; ties go to the higher
/// combined candidate score, then the lowest indices.
pub fn bipartite_match(
    cands_a: &[JointCandidate],
    cands_b: &[JointCandidate],
    conn_map: ArrayView2<f32>,
    n_samples: usize,
) -> Option<PairMatch> {
    let mut best: Option<(PairMatch, f64)> = None;
    for (ia, ca) in cands_a.iter().enumerate() {
        for (ib, cb) in cands_b.iter().enumerate() {
            let score = line_integral(conn_map, ca.position, cb.position, n_samples);
            let combined = ca.score as f64 + cb.score as f64;
            let better = match &best {
                None => true,
                Some((m, c)) => score > m.score || (score == m.score && combined > *c),
            };
            if better {
                best = Some((PairMatch { a: ia, b: ib, score }, combined));
            }
        }
    }
    best.map(|(m, _)| m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkedConnection {
    pub from: JointCandidate,
    pub to: JointCandidate,
    pub score: f64,
}

/// Linked pose of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub joints: [Option<JointCandidate>; NUM_JOINTS],
    pub connections: [Option<LinkedConnection>; NUM_CONNECTIONS],
}

impl PoseEstimate {
    pub fn empty() -> Self {
        PoseEstimate {
            joints: [None; NUM_JOINTS],
            connections: [None; NUM_CONNECTIONS],
        }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.joints.map(|j| j.map(|c| c.position)))
    }

    /// Distal, middle and proximal joints of a limb.
    pub fn limb(&self, limb: Limb) -> [Option<JointCandidate>; 3] {
        limb.joints().map(|j| self.joints[j])
    }
}

fn refine(map: ArrayView2<f32>, peak: Peak, radius: f64) -> Point {
    let (h, w) = map.dim();
    let r = radius.ceil() as usize;
    let floor = peak.score * 0.5;
    let (mut sx, mut sy, mut sw) = (0.0f64, 0.0f64, 0.0f64);
    for i in peak.y.saturating_sub(r)..(peak.y + r + 1).min(h) {
        for j in peak.x.saturating_sub(r)..(peak.x + r + 1).min(w) {
            let v = map[(i, j)];
            let d = Point::new(j as f64, i as f64).distance(peak.point());
            if d <= radius && v >= floor {
                sx += j as f64 * v as f64;
                sy += i as f64 * v as f64;
                sw += v as f64;
            }
        }
    }
    if sw > 0.0 {
        Point::new(sx / sw, sy / sw)
    } else {
        peak.point()
    }
}

/// Top-K joint candidates of one joint map.
pub fn joint_candidates(map: ArrayView2<f32>, joint: usize, params: &LinkerParams) -> Result<Vec<JointCandidate>> {
    let mut peaks = nms(map, params.window, params.threshold)?;
    peaks.truncate(params.top_k);
    Ok(peaks
        .into_iter()
        .map(|p| JointCandidate {
            joint,
            position: match params.refine_radius {
                Some(r) => refine(map, p, r),
                None => p.point(),
            },
            score: p.score,
        })
        .collect())
}

/// Links one frame given its 20 maps (indexable by channel).
pub fn link_frame<'a>(
    maps: impl Fn(usize) -> ArrayView2<'a, f32>,
    params: &LinkerParams,
    skeleton: &SkeletonModel,
) -> Result<PoseEstimate> {
    let candidates: Vec<Vec<JointCandidate>> = (0..NUM_JOINTS)
        .map(|j| joint_candidates(maps(skeleton.joint_channel(j)), j, params))
        .collect::<Result<_>>()?;
    let mut est = PoseEstimate::empty();

    for limb in Limb::ALL {
        let [distal, middle, proximal] = limb.joints();
        let [c_distal, c_proximal] = limb.connections();
        let matched = |cid: usize, from: &[JointCandidate], to: &[JointCandidate]| {
            let map = maps(skeleton.connection_channel(cid));
            bipartite_match(from, to, map, params.line_samples).map(|m| LinkedConnection {
                from: from[m.a],
                to: to[m.b],
                score: m.score,
            })
        };

        // Each connection is oriented distal -> proximal for matching.
        let first = matched(c_distal, &candidates[distal], &candidates[middle]);
        let second = matched(c_proximal, &candidates[middle], &candidates[proximal]);

        let (first, second) = match (first, second) {
            (Some(f), Some(s)) if f.to.position != s.from.position => {
                // The weaker connection is re-matched with the middle joint
                // pinned to the stronger one's choice.
                if f.score >= s.score {
                    let pinned = [f.to];
                    (Some(f), matched(c_proximal, &pinned, &candidates[proximal]))
                } else {
                    let pinned = [s.from];
                    (matched(c_distal, &candidates[distal], &pinned), Some(s))
                }
            }
            other => other,
        };

        if let Some(f) = first {
            est.joints[distal] = Some(f.from);
            est.joints[middle] = Some(f.to);
            est.connections[c_distal] = Some(f);
        }
        if let Some(s) = second {
            est.joints[middle] = Some(s.from);
            est.joints[proximal] = Some(s.to);
            est.connections[c_proximal] = Some(s);
        }
        // Joints that were not linked fall back to their best candidate.
        for j in [distal, middle, proximal] {
            if est.joints[j].is_none() {
                est.joints[j] = candidates[j].first().copied();
            }
        }
    }
    Ok(est)
}

/// Links every frame of a confidence (or affinity) stack independently.
pub fn estimate_pose(stack: &MapStack, params: &LinkerParams, skeleton: &SkeletonModel) -> Result<Vec<PoseEstimate>> {
    params.validate()?;
    let (_, _, frames, channels) = stack.shape();
    if channels != NUM_MAPS {
        return Err(Error::Shape(format!("expected {NUM_MAPS} channels, got {channels}")));
    }
    (0..frames)
        .map(|t| link_frame(|c| stack.map(t, c), params, skeleton))
        .collect()
}

/// Serialized pose output: per joint `{x, y, score}` or `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePoseRecord {
    pub frame_index: usize,
    pub joints: Vec<Option<JointOutput>>,
    pub limbs: Vec<LimbOutput>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointOutput {
    pub x: f64,
    pub y: f64,
    pub score: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimbOutput {
    pub limb: Limb,
    /// Distal, middle and proximal positions; `null` when missing.
    pub joints: [Option<[f64; 2]>; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoPoses {
    pub video_id: String,
    pub frames: Vec<FramePoseRecord>,
}

impl FramePoseRecord {
    pub fn from_estimate(frame_index: usize, est: &PoseEstimate) -> Self {
        FramePoseRecord {
            frame_index,
            joints: est
                .joints
                .iter()
                .map(|j| {
                    j.map(|c| JointOutput {
                        x: c.position.x,
                        y: c.position.y,
                        score: c.score,
                    })
                })
                .collect(),
            limbs: Limb::ALL
                .iter()
                .map(|&limb| LimbOutput {
                    limb,
                    joints: est.limb(limb).map(|j| j.map(|c| [c.position.x, c.position.y])),
                })
                .collect(),
        }
    }
}
