//! Synthetic "puppet" depth sequences with exact ground-truth joints.
//!
//! A fixed torso ellipse carries four two-segment limbs whose joint angles
//! follow a bounded random walk. Everything is rendered as shaded depth
//! surfaces over a flat background, nearest surface wins. All geometry is in
//! native pixels; annotations are converted to working resolution.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::clips::AnnotatedFrame;
use crate::dataset::{
    frame_path, preprocess_frame, save_annotations, write_depth_png, AnnotationRecord, FrameSpec, JointAnnotation,
    Manifest, ManifestEntry, Preprocess, ANNOTATION_CADENCE,
};
use crate::geometry::{point_segment_distance, segment_segment_distance, Point};
use crate::skeleton::{Limb, NUM_JOINTS};
use crate::{Error, Result};

const KINEMATICS_STREAM: u64 = 1;
const OCCLUSION_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;

/// Joint spheres are drawn slightly thicker than the segments.
const JOINT_SPHERE_SCALE: f64 = 1.35;
const BURST_GAIN: f64 = 3.0;

/// Angle limits of one limb type, expressed for the right side. The left
/// side is mirrored about the vertical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleRange {
    /// Rest direction of the proximal segment (radians, 0 = +x, pi/2 = +y).
    pub base: f64,
    /// Maximum deviation of the proximal segment from `base`.
    pub swing: f64,
    /// Maximum bend of the distal segment relative to the proximal one.
    pub bend: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorsoConfig {
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
    /// Right shoulder offset from the centre; the left one is mirrored.
    pub shoulder: [f64; 2],
    pub hip: [f64; 2],
    /// Height of the torso surface above its rim.
    pub bulge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PuppetConfig {
    /// Frames are rendered at the native resolution of this spec.
    pub frame: FrameSpec,
    pub length: usize,
    pub upper_arm: f64,
    pub forearm: f64,
    pub thigh: f64,
    pub shank: f64,
    pub arm_radius: f64,
    pub leg_radius: f64,
    pub arm_angles: AngleRange,
    pub leg_angles: AngleRange,
    pub torso: TorsoConfig,
    /// Maximum per-sequence translation of the whole body.
    pub jitter: f64,
    /// Standard deviation of the per-frame joint-angle step (radians).
    pub angle_step: f64,
    pub background_depth: f64,
    pub torso_depth: f64,
    /// Surface depth per limb in `Limb::ALL` order.
    pub limb_depth: [f64; 4],
    pub occluder_depth: f64,
    pub occluder_radius: f64,
    pub noise: f64,
    pub occlusion_probability: f64,
    pub seed: u64,
}

impl Default for PuppetConfig {
    fn default() -> Self {
        PuppetConfig {
            frame: FrameSpec::native(128, 96, 30.0),
            length: 20,
            upper_arm: 16.0,
            forearm: 14.0,
            thigh: 16.0,
            shank: 14.0,
            arm_radius: 3.0,
            leg_radius: 4.0,
            arm_angles: AngleRange {
                base: 0.75 * PI,
                swing: 0.6,
                bend: 0.9,
            },
            leg_angles: AngleRange {
                base: 0.5 * PI + 0.3,
                swing: 0.3,
                bend: 0.7,
            },
            torso: TorsoConfig {
                center: [64.0, 42.0],
                semi_axes: [13.0, 20.0],
                shoulder: [-12.0, -14.0],
                hip: [-8.0, 14.0],
                bulge: 30.0,
            },
            jitter: 3.0,
            angle_step: 0.08,
            background_depth: 1000.0,
            torso_depth: 900.0,
            limb_depth: [840.0, 845.0, 860.0, 865.0],
            occluder_depth: 600.0,
            occluder_radius: 7.0,
            noise: 2.0,
            occlusion_probability: 0.0,
            seed: 0,
        }
    }
}

impl PuppetConfig {
    /// The default puppet scaled to a frame spec's native resolution.
    pub fn for_frame(frame: FrameSpec) -> Self {
        let base = PuppetConfig::default();
        let s = frame.native_width as f64 / base.frame.native_width as f64;
        let sy = frame.native_height as f64 / base.frame.native_height as f64;
        PuppetConfig {
            frame,
            upper_arm: base.upper_arm * s,
            forearm: base.forearm * s,
            thigh: base.thigh * s,
            shank: base.shank * s,
            arm_radius: base.arm_radius * s,
            leg_radius: base.leg_radius * s,
            torso: TorsoConfig {
                center: [base.torso.center[0] * s, base.torso.center[1] * sy],
                semi_axes: [base.torso.semi_axes[0] * s, base.torso.semi_axes[1] * s],
                shoulder: [base.torso.shoulder[0] * s, base.torso.shoulder[1] * s],
                hip: [base.torso.hip[0] * s, base.torso.hip[1] * s],
                bulge: base.torso.bulge,
            },
            jitter: base.jitter * s,
            occluder_radius: base.occluder_radius * s,
            ..base
        }
    }

    fn segments(&self, limb: Limb) -> (f64, f64) {
        match limb {
            Limb::RightArm | Limb::LeftArm => (self.upper_arm, self.forearm),
            Limb::RightLeg | Limb::LeftLeg => (self.thigh, self.shank),
        }
    }

    fn radius(&self, limb: Limb) -> f64 {
        match limb {
            Limb::RightArm | Limb::LeftArm => self.arm_radius,
            Limb::RightLeg | Limb::LeftLeg => self.leg_radius,
        }
    }

    fn angles(&self, limb: Limb) -> AngleRange {
        match limb {
            Limb::RightArm | Limb::LeftArm => self.arm_angles,
            Limb::RightLeg | Limb::LeftLeg => self.leg_angles,
        }
    }

    fn root(&self, limb: Limb, offset: Point) -> Point {
        let [cx, cy] = self.torso.center;
        let [dx, dy] = match limb {
            Limb::RightArm | Limb::LeftArm => self.torso.shoulder,
            Limb::RightLeg | Limb::LeftLeg => self.torso.hip,
        };
        let dx = if is_left(limb) { -dx } else { dx };
        Point::new(cx + dx + offset.x, cy + dy + offset.y)
    }

    pub fn validate(&self) -> Result<()> {
        self.frame.validate()?;
        let bad = |m: String| Err(Error::Parameter(m));
        if self.length == 0 {
            return bad("sequence length must be at least 1".into());
        }
        for (name, v) in [
            ("upper_arm", self.upper_arm),
            ("forearm", self.forearm),
            ("thigh", self.thigh),
            ("shank", self.shank),
            ("arm_radius", self.arm_radius),
            ("leg_radius", self.leg_radius),
            ("occluder_radius", self.occluder_radius),
        ] {
            if !(v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.occlusion_probability) {
            return bad(format!("occlusion probability {} outside [0, 1]", self.occlusion_probability));
        }
        if !(self.noise >= 0.0 && self.angle_step >= 0.0 && self.jitter >= 0.0) {
            return bad("noise, angle_step and jitter must be non-negative".into());
        }
        let surfaces = self.limb_depth.iter().chain([&self.torso_depth, &self.occluder_depth]);
        for &d in surfaces {
            if !(d - self.torso.bulge.max(self.leg_radius).max(self.arm_radius) > 0.0 && d < self.background_depth) {
                return bad(format!("surface depth {d} must lie between 0 and the background"));
            }
        }
        if self.background_depth >= u16::MAX as f64 {
            return bad(format!("background depth {} exceeds the 16-bit range", self.background_depth));
        }
        self.check_reach()
    }

    /// Every reachable joint, padded by its sphere radius and the body
    /// jitter, has to stay inside the frame. The angle box is scanned on a
    /// dense grid.
    fn check_reach(&self) -> Result<()> {
        let w = self.frame.native_width as f64;
        let h = self.frame.native_height as f64;
        const STEPS: usize = 24;
        for limb in Limb::ALL {
            let range = self.angles(limb);
            let margin = self.radius(limb) * JOINT_SPHERE_SCALE + self.jitter;
            let root = self.root(limb, Point::default());
            let (l1, l2) = self.segments(limb);
            for i in 0..=STEPS {
                for k in 0..=STEPS {
                    let phi = range.base - range.swing + 2.0 * range.swing * i as f64 / STEPS as f64;
                    let beta = -range.bend + 2.0 * range.bend * k as f64 / STEPS as f64;
                    let [mid, distal] = limb_points(limb, root, l1, l2, phi, beta);
                    for p in [root, mid, distal] {
                        if p.x - margin < 0.0 || p.y - margin < 0.0 || p.x + margin > w - 1.0 || p.y + margin > h - 1.0 {
                            return Err(Error::Parameter(format!(
                                "{limb} can reach ({:.1}, {:.1}), outside the {}x{} frame; shorten the segments",
                                p.x, p.y, self.frame.native_width, self.frame.native_height
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn is_left(limb: Limb) -> bool {
    matches!(limb, Limb::LeftArm | Limb::LeftLeg)
}

/// Middle and distal joint of a limb for right-side angles `phi`, `beta`.
fn limb_points(limb: Limb, root: Point, l1: f64, l2: f64, phi: f64, beta: f64) -> [Point; 2] {
    let (phi, beta) = if is_left(limb) { (PI - phi, -beta) } else { (phi, beta) };
    let mid = Point::new(root.x + l1 * phi.cos(), root.y + l1 * phi.sin());
    let psi = phi + beta;
    let distal = Point::new(mid.x + l2 * psi.cos(), mid.y + l2 * psi.sin());
    [mid, distal]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChallengeKind {
    /// The right wrist is driven onto the right hip, crossing the leg.
    SelfOcclusion,
    /// An occluder blob covers one joint per affected frame.
    ExternalOcclusion,
    /// Noise amplitude is tripled in the affected frames.
    NoiseBurst,
}

impl ChallengeKind {
    pub const ALL: [ChallengeKind; 3] = [
        ChallengeKind::SelfOcclusion,
        ChallengeKind::ExternalOcclusion,
        ChallengeKind::NoiseBurst,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ChallengeKind::SelfOcclusion => "self-occlusion",
            ChallengeKind::ExternalOcclusion => "external-occlusion",
            ChallengeKind::NoiseBurst => "noise-burst",
        }
    }
}

impl fmt::Display for ChallengeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ChallengeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ChallengeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown challenge kind `{s}`")))
    }
}

/// Joint positions of one frame in native pixels plus their visibility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PuppetPose {
    pub joints: [Point; NUM_JOINTS],
    pub visible: [bool; NUM_JOINTS],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSequence {
    pub video_id: String,
    pub frame: FrameSpec,
    /// Raw depth frames at native resolution.
    pub frames: Vec<Array2<u16>>,
    /// Annotations at working resolution, frame indices on the annotation
    /// cadence.
    pub records: Vec<AnnotationRecord>,
    pub poses: Vec<PuppetPose>,
    /// Sequence positions touched by a challenge.
    pub affected: Vec<usize>,
    pub challenge: Option<ChallengeKind>,
}

impl SyntheticSequence {
    /// Preprocessed frames ready for clip building.
    pub fn annotated_frames(&self, pre: &Preprocess) -> Vec<AnnotatedFrame> {
        self.frames
            .iter()
            .zip(&self.records)
            .map(|(f, r)| AnnotatedFrame {
                frame_index: r.frame_index,
                depth: preprocess_frame(f.mapv(|v| v as f32).view(), &self.frame, pre),
            })
            .collect()
    }
}

pub fn generate_sequence(cfg: &PuppetConfig, video_id: &str) -> Result<SyntheticSequence> {
    generate(cfg, video_id, None)
}

pub fn challenge_variant(cfg: &PuppetConfig, video_id: &str, kind: ChallengeKind) -> Result<SyntheticSequence> {
    generate(cfg, video_id, Some(kind))
}

/// Parses `kind` and generates the matching challenge sequence.
pub fn challenge_variants(cfg: &PuppetConfig, video_id: &str, kind: &str) -> Result<SyntheticSequence> {
    challenge_variant(cfg, video_id, kind.parse()?)
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Reflects `v` back into `[lo, hi]`.
fn reflect(mut v: f64, lo: f64, hi: f64) -> f64 {
    for _ in 0..4 {
        if v < lo {
            v = 2.0 * lo - v;
        } else if v > hi {
            v = 2.0 * hi - v;
        } else {
            return v;
        }
    }
    v.clamp(lo, hi)
}

struct Occluder {
    center: Point,
    radius: f64,
}

fn generate(cfg: &PuppetConfig, video_id: &str, challenge: Option<ChallengeKind>) -> Result<SyntheticSequence> {
    cfg.validate()?;
    let mut kin = stream(cfg.seed, KINEMATICS_STREAM);
    let mut occ = stream(cfg.seed, OCCLUSION_STREAM);
    let mut noise_rng = stream(cfg.seed, NOISE_STREAM);
    let step = Normal::new(0.0, cfg.angle_step).map_err(|e| Error::Parameter(e.to_string()))?;
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Parameter(e.to_string()))?;

    let n = cfg.length;
    let affected: Vec<usize> = match challenge {
        None => Vec::new(),
        Some(_) => (n / 3..(2 * n / 3).max(n / 3 + 1)).collect(),
    };

    let offset = Point::new(
        kin.gen_range(-cfg.jitter..=cfg.jitter),
        kin.gen_range(-cfg.jitter..=cfg.jitter),
    );
    let sample_state = |kin: &mut ChaCha8Rng| -> Vec<(f64, f64)> {
        Limb::ALL
            .iter()
            .map(|&limb| {
                let r = cfg.angles(limb);
                (
                    kin.gen_range(r.base - r.swing..=r.base + r.swing),
                    kin.gen_range(-r.bend..=r.bend),
                )
            })
            .collect()
    };
    let mut state = sample_state(&mut kin);
    let mut tries = 1;
    while !limbs_apart(cfg, &pose_points(cfg, offset, &state)) {
        if tries == 1000 {
            return Err(Error::Parameter("no starting pose keeps the limbs apart".into()));
        }
        state = sample_state(&mut kin);
        tries += 1;
    }

    let mut seq = SyntheticSequence {
        video_id: video_id.to_string(),
        frame: cfg.frame,
        frames: Vec::with_capacity(n),
        records: Vec::with_capacity(n),
        poses: Vec::with_capacity(n),
        affected: affected.clone(),
        challenge,
    };
    for t in 0..n {
        if t > 0 {
            // Limbs only cross when a challenge forces it: a step that
            // would bring two limbs into contact is dropped.
            for (k, limb) in Limb::ALL.iter().enumerate() {
                let r = cfg.angles(*limb);
                let prev = state[k];
                state[k] = (
                    reflect(prev.0 + step.sample(&mut kin), r.base - r.swing, r.base + r.swing),
                    reflect(prev.1 + step.sample(&mut kin), -r.bend, r.bend),
                );
                if !limbs_apart(cfg, &pose_points(cfg, offset, &state)) {
                    state[k] = prev;
                }
            }
        }
        let in_challenge = affected.contains(&t);
        let mut angles = state.clone();
        if in_challenge && challenge == Some(ChallengeKind::SelfOcclusion) {
            angles[Limb::RightArm.index()] = reach_hip(cfg, offset);
        }
        let joints = pose_points(cfg, offset, &angles);

        let mut occluders = Vec::new();
        for &p in &joints {
            if cfg.occlusion_probability > 0.0 && occ.gen_bool(cfg.occlusion_probability) {
                occluders.push(occluder_near(cfg, p, &mut occ));
            }
        }
        if in_challenge && challenge == Some(ChallengeKind::ExternalOcclusion) {
            let j = occ.gen_range(0..NUM_JOINTS);
            occluders.push(occluder_near(cfg, joints[j], &mut occ));
        }

        let depth = render(cfg, &joints, &occluders);
        let gain = if in_challenge && challenge == Some(ChallengeKind::NoiseBurst) {
            BURST_GAIN
        } else {
            1.0
        };
        // mapv visits in row-major order, keeping the noise stream stable.
        let raw = depth.mapv(|v| {
            let noisy = v + gain * noise.sample(&mut noise_rng);
            noisy.round().clamp(0.0, u16::MAX as f64) as u16
        });

        let visible = visibility(cfg, &joints, &occluders);
        let frame_index = t * ANNOTATION_CADENCE;
        let mut record = AnnotationRecord::new(video_id, frame_index);
        for j in 0..NUM_JOINTS {
            let p = joints[j];
            record.joints[j] = if cfg.frame.in_native_bounds(p) {
                JointAnnotation {
                    position: Some(cfg.frame.to_working(p)),
                    visible: visible[j],
                }
            } else {
                JointAnnotation::hidden()
            };
        }
        seq.frames.push(raw);
        seq.records.push(record);
        seq.poses.push(PuppetPose { joints, visible });
    }
    Ok(seq)
}

fn occluder_near(cfg: &PuppetConfig, p: Point, rng: &mut ChaCha8Rng) -> Occluder {
    // Offset inside half the radius so the joint itself is always covered.
    let r = rng.gen_range(0.0..cfg.occluder_radius * 0.5);
    let a = rng.gen_range(0.0..2.0 * PI);
    Occluder {
        center: Point::new(p.x + r * a.cos(), p.y + r * a.sin()),
        radius: cfg.occluder_radius,
    }
}

fn pose_points(cfg: &PuppetConfig, offset: Point, angles: &[(f64, f64)]) -> [Point; NUM_JOINTS] {
    let mut joints = [Point::default(); NUM_JOINTS];
    for (limb, &(phi, beta)) in Limb::ALL.iter().zip(angles) {
        let root = cfg.root(*limb, offset);
        let (l1, l2) = cfg.segments(*limb);
        let [mid, distal] = limb_points(*limb, root, l1, l2, phi, beta);
        let [d, m, p] = limb.joints();
        joints[d] = distal;
        joints[m] = mid;
        joints[p] = root;
    }
    joints
}

/// Two-link inverse kinematics placing the right wrist on the right hip,
/// or as close as the arm reaches. The elbow bends away from the body.
fn reach_hip(cfg: &PuppetConfig, offset: Point) -> (f64, f64) {
    let s = cfg.root(Limb::RightArm, offset);
    let target = cfg.root(Limb::RightLeg, offset);
    let (l1, l2) = (cfg.upper_arm, cfg.forearm);
    let d = s
        .distance(target)
        .clamp((l1 - l2).abs() + 1e-6, 0.98 * (l1 + l2));
    let alpha = (target.y - s.y).atan2(target.x - s.x);
    let cos_a = ((l1 * l1 + d * d - l2 * l2) / (2.0 * l1 * d)).clamp(-1.0, 1.0);
    let phi = alpha + cos_a.acos();
    let mid = Point::new(s.x + l1 * phi.cos(), s.y + l1 * phi.sin());
    let end = Point::new(s.x + d * alpha.cos(), s.y + d * alpha.sin());
    let psi = (end.y - mid.y).atan2(end.x - mid.x);
    let mut beta = psi - phi;
    while beta > PI {
        beta -= 2.0 * PI;
    }
    while beta < -PI {
        beta += 2.0 * PI;
    }
    (phi, beta)
}

fn limb_segments(joints: &[Point; NUM_JOINTS], limb: Limb) -> [(Point, Point); 2] {
    let [d, m, p] = limb.joints();
    [(joints[p], joints[m]), (joints[m], joints[d])]
}

fn limbs_apart(cfg: &PuppetConfig, joints: &[Point; NUM_JOINTS]) -> bool {
    for (i, &a) in Limb::ALL.iter().enumerate() {
        for &b in &Limb::ALL[i + 1..] {
            let gap = cfg.radius(a) + cfg.radius(b);
            for (a0, a1) in limb_segments(joints, a) {
                for (b0, b1) in limb_segments(joints, b) {
                    if segment_segment_distance(a0, a1, b0, b1) <= gap {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// A joint is hidden when an occluder covers it or when a capsule of a
/// nearer limb passes over it.
fn visibility(cfg: &PuppetConfig, joints: &[Point; NUM_JOINTS], occluders: &[Occluder]) -> [bool; NUM_JOINTS] {
    let mut visible = [true; NUM_JOINTS];
    for limb in Limb::ALL {
        let depth = cfg.limb_depth[limb.index()];
        for j in limb.joints() {
            let p = joints[j];
            let blocked = occluders.iter().any(|o| p.distance(o.center) <= o.radius)
                || Limb::ALL.iter().any(|&other| {
                    other != limb
                        && cfg.limb_depth[other.index()] < depth
                        && limb_segments(joints, other)
                            .iter()
                            .any(|&(a, b)| point_segment_distance(p, a, b) <= cfg.radius(other))
                });
            visible[j] = !blocked && cfg.frame.in_native_bounds(p);
        }
    }
    visible
}

fn render(cfg: &PuppetConfig, joints: &[Point; NUM_JOINTS], occluders: &[Occluder]) -> Array2<f64> {
    let h = cfg.frame.native_height;
    let w = cfg.frame.native_width;
    let mut depth = Array2::from_elem((h, w), cfg.background_depth);
    let offset = Point::new(
        joints[0].x - cfg.root(Limb::RightArm, Point::default()).x,
        joints[0].y - cfg.root(Limb::RightArm, Point::default()).y,
    );
    let [cx, cy] = cfg.torso.center;
    let [ax, ay] = cfg.torso.semi_axes;
    let c = Point::new(cx + offset.x, cy + offset.y);
    draw(&mut depth, c, ax.max(ay), |p| {
        let u = ((p.x - c.x) / ax).powi(2) + ((p.y - c.y) / ay).powi(2);
        (u <= 1.0).then(|| cfg.torso_depth - cfg.torso.bulge * (1.0 - u).sqrt())
    });
    for limb in Limb::ALL {
        let r = cfg.radius(limb);
        let level = cfg.limb_depth[limb.index()];
        for (a, b) in limb_segments(joints, limb) {
            capsule(&mut depth, a, b, r, level);
        }
        for j in limb.joints() {
            capsule(&mut depth, joints[j], joints[j], r * JOINT_SPHERE_SCALE, level);
        }
    }
    for o in occluders {
        capsule(&mut depth, o.center, o.center, o.radius, cfg.occluder_depth);
    }
    depth
}

fn capsule(depth: &mut Array2<f64>, a: Point, b: Point, r: f64, level: f64) {
    let mid = a.lerp(b, 0.5);
    let extent = a.distance(b) * 0.5 + r;
    draw(depth, mid, extent, |p| {
        let d = point_segment_distance(p, a, b);
        (d <= r).then(|| level - (r * r - d * d).sqrt())
    });
}

/// Nearest-surface compositing of `surface` over the square of half-size
/// `extent` around `c`.
fn draw(depth: &mut Array2<f64>, c: Point, extent: f64, surface: impl Fn(Point) -> Option<f64>) {
    let (h, w) = depth.dim();
    let lo = |v: f64| (v - extent).floor().max(0.0) as usize;
    let hi = |v: f64, n: usize| ((v + extent).ceil().max(0.0) as usize).min(n.saturating_sub(1));
    for i in lo(c.y)..=hi(c.y, h) {
        for j in lo(c.x)..=hi(c.x, w) {
            if let Some(z) = surface(Point::new(j as f64, i as f64)) {
                let cell = &mut depth[(i, j)];
                if z < *cell {
                    *cell = z;
                }
            }
        }
    }
}

/// Writes sequences in the canonical dataset layout:
/// `frames/<video_id>/frame_NNNNNN.png`, `annotations/<video_id>.csv` and
/// `manifest.txt` under `root`.
pub fn write_dataset(root: &Path, sequences: &[SyntheticSequence]) -> Result<Manifest> {
    let mut manifest = Manifest::default();
    let annotations_dir = root.join("annotations");
    fs::create_dir_all(&annotations_dir).map_err(|e| Error::io(&annotations_dir, e))?;
    for seq in sequences {
        let dir = root.join("frames").join(&seq.video_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (frame, rec) in seq.frames.iter().zip(&seq.records) {
            write_depth_png(&frame_path(&dir, rec.frame_index), frame.view())?;
        }
        let csv = annotations_dir.join(format!("{}.csv", seq.video_id));
        save_annotations(&csv, &seq.records, &seq.frame)?;
        manifest.entries.push(ManifestEntry {
            video_id: seq.video_id.clone(),
            frames_dir: dir,
            annotations: csv,
        });
    }
    manifest.save(&root.join("manifest.txt"))?;
    Ok(manifest)
}
