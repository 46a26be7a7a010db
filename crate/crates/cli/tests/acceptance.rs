//! Acceptance suite: one PASS/FAIL line per criterion, with its runtime
//! checked against the allowed budget. Exits non-zero when any criterion
//! fails.
//!
//! `LIMBPOSE_ACCEPTANCE=1,2,5` runs only the listed criteria.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use limbpose_cli::pipeline::{evaluate_clips, regression_samples, synthetic_clips, AffinitySource, ClipData, EvalOptions};
use limbpose_core::clips::{build_clips, AnnotatedFrame, ClipConfig};
use limbpose_core::dataset::{FrameSpec, Preprocess};
use limbpose_core::geometry::{Point, Pose};
use limbpose_core::linker::{bipartite_match, estimate_pose, line_integral, nms, JointCandidate, LinkerParams, Peak};
use limbpose_core::metrics::{
    aggregate_report, dsc, paired_ttest, recall, rmsd, MetricsCollector, StatTestConfig, TTestOutcome,
};
use limbpose_core::synth::{generate_sequence, PuppetConfig};
use limbpose_core::targets::{
    affinity_connection_map, affinity_joint_map, build_target_stack, confidence_connection_map, confidence_joint_map,
    MapGenConfig, MapKind,
};
use limbpose_core::{Error as CoreError, Limb, SkeletonModel, NUM_JOINTS, NUM_MAPS};
use limbpose_nets::infer::Variant;
use limbpose_nets::loss::{loss_ce, loss_ce_grad, loss_mse, loss_mse_grad};
use limbpose_nets::train::{train, Samples, TrainConfig, TrainReport};
use limbpose_nets::{DetectionNetSpec, Network, RegressionInput, RegressionNetSpec, Tensor};
use ndarray::{Array, Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

struct Criterion {
    id: usize,
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "target-map oracles", limit: Duration::from_secs(10), run: target_maps },
        Criterion { id: 2, name: "disk lattice count", limit: Duration::from_secs(1), run: lattice },
        Criterion { id: 3, name: "loss oracles and gradients", limit: Duration::from_secs(30), run: losses },
        Criterion { id: 4, name: "network shape contracts", limit: Duration::from_secs(60), run: shapes },
        Criterion { id: 5, name: "linker oracles", limit: Duration::from_secs(30), run: linker },
        Criterion { id: 6, name: "clip enumeration", limit: Duration::from_secs(5), run: clip_enumeration },
        Criterion { id: 7, name: "overfit five clips", limit: Duration::from_secs(15 * 60), run: overfit },
        Criterion { id: 8, name: "synthetic end-to-end", limit: Duration::from_secs(4 * 3600), run: end_to_end },
        Criterion { id: 9, name: "metric oracles", limit: Duration::from_secs(5), run: metrics },
    ];
    let selected: Option<Vec<usize>> = std::env::var("LIMBPOSE_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());

    let mut failed = 0;
    for c in &criteria {
        if selected.as_ref().is_some_and(|s| !s.contains(&c.id)) {
            println!("criterion {} ({}): SKIPPED", c.id, c.name);
            continue;
        }
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > c.limit => Err(format!("{detail}; exceeded the time limit")),
            other => other,
        };
        let (status, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!(
            "criterion {} ({}): {status} in {:.2} s (limit {} s); {detail}",
            c.id,
            c.name,
            elapsed.as_secs_f64(),
            c.limit.as_secs()
        );
        failed += outcome.is_err() as usize;
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

// ---------------------------------------------------------------- maps

fn frame_64x48() -> FrameSpec {
    FrameSpec::native(64, 48, 30.0)
}

/// Textbook membership tests over every pixel of the frame.
fn oracle_maps(c: Point, e: Point, r: f64, spec: &FrameSpec) -> [Array2<f64>; 4] {
    let sigma = 3.0 * r;
    let len = ((e.x - c.x).powi(2) + (e.y - c.y).powi(2)).sqrt();
    let mut out = [(); 4].map(|_| Array2::zeros((spec.height, spec.width)));
    for row in 0..spec.height {
        for col in 0..spec.width {
            let (x, y) = (col as f64, row as f64);
            let d_sq = (x - c.x).powi(2) + (y - c.y).powi(2);
            if d_sq <= r * r {
                out[0][(row, col)] = 1.0;
                out[1][(row, col)] = (-d_sq / (2.0 * sigma * sigma)).exp();
            }
            let t = ((x - c.x) * (e.x - c.x) + (y - c.y) * (e.y - c.y)) / (len * len);
            let perp = ((x - c.x) * (e.y - c.y) - (y - c.y) * (e.x - c.x)).abs() / len;
            if (0.0..=1.0).contains(&t) && perp <= r / 2.0 {
                out[2][(row, col)] = 1.0;
                let u = (t - 0.5) * len;
                out[3][(row, col)] = (-u * u / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    out
}

fn target_maps() -> Outcome {
    let spec = frame_64x48();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut pixels = 0usize;
    for case in 0..200 {
        let r = rng.gen_range(1..=8) as f64;
        let cfg = MapGenConfig {
            affinity_radius: r,
            confidence_radius: r,
            sigma: None,
        };
        // Centres may fall slightly outside the frame to exercise clipping.
        let c = Point::new(rng.gen_range(-4.0..68.0), rng.gen_range(-4.0..52.0));
        let e = Point::new(rng.gen_range(-4.0..68.0), rng.gen_range(-4.0..52.0));
        let got = [
            affinity_joint_map(Some(c), &cfg, &spec),
            confidence_joint_map(Some(c), &cfg, &spec),
            affinity_connection_map(Some(c), Some(e), &cfg, &spec),
            confidence_connection_map(Some(c), Some(e), &cfg, &spec),
        ];
        let want = oracle_maps(c, e, r, &spec);
        for (k, (g, w)) in got.iter().zip(&want).enumerate() {
            ensure!(g.dim() == w.dim(), "case {case} map {k}: shape {:?}", g.dim());
            for (a, b) in g.iter().zip(w) {
                if k % 2 == 0 {
                    ensure!(a == b, "case {case} (r {r}, centre {c:?}): binary map {k} differs");
                } else {
                    worst = worst.max((a - b).abs());
                }
            }
            pixels += w.iter().filter(|&&v| v > 0.0).count();
        }
        ensure!(
            affinity_joint_map(None, &cfg, &spec).iter().all(|&v| v == 0.0),
            "missing joint produced a non-empty map"
        );
    }
    ensure!(worst <= 1e-12, "real-valued maps differ by {worst:e}");
    Ok(format!("200 cases, {pixels} support pixels, max real deviation {worst:e}"))
}

fn lattice() -> Outcome {
    // Integer offsets with x^2 + y^2 <= 36, counted before the build.
    const EXPECTED: usize = 113;
    let enumerated = (-6i32..=6)
        .flat_map(|x| (-6i32..=6).map(move |y| (x, y)))
        .filter(|(x, y)| x * x + y * y <= 36)
        .count();
    ensure!(enumerated == EXPECTED, "enumeration gives {enumerated}");
    let cfg = MapGenConfig {
        affinity_radius: 6.0,
        ..MapGenConfig::default()
    };
    let spec = frame_64x48();
    for centre in [Point::new(32.0, 24.0), Point::new(10.0, 10.0), Point::new(53.0, 37.0)] {
        let map = affinity_joint_map(Some(centre), &cfg, &spec);
        let count = map.iter().filter(|&&v| v == 1.0).count();
        ensure!(count == EXPECTED, "centre {centre:?}: {count} pixels");
        ensure!(map.iter().all(|&v| v == 0.0 || v == 1.0), "map is not binary");
    }
    Ok(format!("{EXPECTED} pixels at three interior centres"))
}

// ---------------------------------------------------------------- losses

const BCE_EPS: f64 = 1e-7;

fn random_array(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> ArrayD<f64> {
    Array::from_shape_fn(IxDyn(shape), |_| rng.gen_range(lo..hi))
}

fn ce_oracle(pred: &ArrayD<f64>, target: &ArrayD<f64>) -> f64 {
    let s = pred.shape();
    let mut sum = 0.0;
    for i in 0..s[0] {
        for j in 0..s[1] {
            for t in 0..s[2] {
                for k in 0..s[3] {
                    let q = pred[[i, j, t, k]].clamp(BCE_EPS, 1.0 - BCE_EPS);
                    let p = target[[i, j, t, k]];
                    sum += p * q.ln() + (1.0 - p) * (1.0 - q).ln();
                }
            }
        }
    }
    -sum / pred.len() as f64
}

fn mse_oracle(pred: &ArrayD<f64>, target: &ArrayD<f64>) -> f64 {
    let s = pred.shape();
    let mut sum = 0.0;
    for i in 0..s[0] {
        for j in 0..s[1] {
            for t in 0..s[2] {
                for k in 0..s[3] {
                    sum += (target[[i, j, t, k]] - pred[[i, j, t, k]]).powi(2);
                }
            }
        }
    }
    sum / pred.len() as f64
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

fn losses() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_loss = 0.0f64;
    for _ in 0..50 {
        let shape = [4, 4, 2, 20];
        let pred = random_array(&shape, &mut rng, 0.0, 1.0);
        let binary = random_array(&shape, &mut rng, 0.0, 1.0).mapv(|v| (v > 0.7) as u8 as f64);
        let soft = random_array(&shape, &mut rng, 0.0, 1.0);
        let ce = loss_ce(pred.view(), binary.view()).map_err(|e| e.to_string())?;
        let mse = loss_mse(pred.view(), soft.view()).map_err(|e| e.to_string())?;
        worst_loss = worst_loss
            .max((ce - ce_oracle(&pred, &binary)).abs())
            .max((mse - mse_oracle(&pred, &soft)).abs());
    }
    ensure!(worst_loss <= 1e-6, "loss deviates from the loop oracle by {worst_loss:e}");

    let h = 1e-6;
    let mut worst_grad = 0.0f64;
    for _ in 0..50 {
        let shape = [2, 2, 2, 2];
        let pred = random_array(&shape, &mut rng, 0.05, 0.95);
        let binary = random_array(&shape, &mut rng, 0.0, 1.0).mapv(|v| (v > 0.5) as u8 as f64);
        let soft = random_array(&shape, &mut rng, 0.0, 1.0);
        let g_ce = loss_ce_grad(pred.view(), binary.view()).map_err(|e| e.to_string())?;
        let g_mse = loss_mse_grad(pred.view(), soft.view()).map_err(|e| e.to_string())?;
        for idx in 0..pred.len() {
            let mut plus = pred.clone();
            let mut minus = pred.clone();
            plus.as_slice_mut().unwrap()[idx] += h;
            minus.as_slice_mut().unwrap()[idx] -= h;
            let num_ce = (ce_oracle(&plus, &binary) - ce_oracle(&minus, &binary)) / (2.0 * h);
            let num_mse = (mse_oracle(&plus, &soft) - mse_oracle(&minus, &soft)) / (2.0 * h);
            worst_grad = worst_grad
                .max(relative_error(num_ce, g_ce.as_slice().unwrap()[idx]))
                .max(relative_error(num_mse, g_mse.as_slice().unwrap()[idx]));
        }
    }
    ensure!(worst_grad <= 1e-3, "gradient relative error {worst_grad:e}");
    Ok(format!("max loss deviation {worst_loss:e}, max gradient relative error {worst_grad:e}"))
}

// ---------------------------------------------------------------- shapes

fn ramp(shape: [usize; 5]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|i| ((i * 31) % 17) as f32 / 17.0 - 0.5).collect()).unwrap()
}

fn shapes() -> Outcome {
    let err = |e: limbpose_nets::NetError| e.to_string();
    let mut det = Network::detection(DetectionNetSpec::new(96, 128, 3), 0).map_err(err)?;
    let y = det.predict(&ramp([1, 1, 3, 96, 128])).map_err(err)?;
    ensure!(y.shape == [1, 20, 3, 96, 128], "detection output {:?}", y.shape);
    ensure!(y.data.iter().all(|&v| v > 0.0 && v < 1.0), "detection output leaves (0, 1)");

    let spec = RegressionNetSpec::new(96, 128, 3, RegressionInput::DepthAndAffinity);
    let mut reg = Network::regression(spec, 0).map_err(err)?;
    let y = reg.predict(&ramp([1, 21, 3, 96, 128])).map_err(err)?;
    ensure!(y.shape == [1, 20, 3, 96, 128], "regression output {:?}", y.shape);
    ensure!(y.data.iter().all(|v| v.is_finite()), "regression output is not finite");

    let mut det1 = Network::detection(DetectionNetSpec::new(96, 128, 1), 0).map_err(err)?;
    let y = det1.predict(&ramp([1, 1, 1, 96, 128])).map_err(err)?;
    ensure!(y.shape == [1, 20, 1, 96, 128], "single-frame detection output {:?}", y.shape);
    let spec1 = RegressionNetSpec::new(96, 128, 1, RegressionInput::DepthAndAffinity);
    let mut reg1 = Network::regression(spec1, 0).map_err(err)?;
    let y = reg1.predict(&ramp([1, 21, 1, 96, 128])).map_err(err)?;
    ensure!(y.shape == [1, 20, 1, 96, 128], "single-frame regression output {:?}", y.shape);
    Ok("(96,128,3,1) -> (96,128,3,20), (96,128,3,21) -> (96,128,3,20), single-frame clips run".into())
}

// ---------------------------------------------------------------- linker

fn nms_oracle(map: &Array2<f32>, window: usize, threshold: f32) -> Vec<Peak> {
    let (h, w) = map.dim();
    let half = (window / 2) as isize;
    let mut peaks = Vec::new();
    for i in 0..h {
        for j in 0..w {
            let v = map[(i, j)];
            if v < threshold {
                continue;
            }
            let mut is_max = true;
            for di in -half..=half {
                for dj in -half..=half {
                    let (ii, jj) = (i as isize + di, j as isize + dj);
                    if ii < 0 || jj < 0 || ii >= h as isize || jj >= w as isize || (di, dj) == (0, 0) {
                        continue;
                    }
                    let u = map[(ii as usize, jj as usize)];
                    let earlier = (ii, jj) < (i as isize, j as isize);
                    if u > v || (u == v && earlier) {
                        is_max = false;
                    }
                }
            }
            if is_max {
                peaks.push(Peak { x: j, y: i, score: v });
            }
        }
    }
    peaks.sort_by(|a, b| b.score.total_cmp(&a.score).then((a.y, a.x).cmp(&(b.y, b.x))));
    peaks
}

fn bilinear_oracle(map: &Array2<f32>, x: f64, y: f64) -> f64 {
    let (h, w) = map.dim();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let v = |r: usize, c: usize| map[(r, c)] as f64;
    v(y0, x0) * (1.0 - fx) * (1.0 - fy) + v(y0, x1) * fx * (1.0 - fy) + v(y1, x0) * (1.0 - fx) * fy + v(y1, x1) * fx * fy
}

fn random_candidates(n: usize, joint: usize, rng: &mut ChaCha8Rng) -> Vec<JointCandidate> {
    let mut out: Vec<JointCandidate> = (0..n)
        .map(|_| JointCandidate {
            joint,
            position: Point::new(rng.gen_range(0..32) as f64, rng.gen_range(0..24) as f64),
            score: rng.gen_range(1..5) as f32 / 4.0,
        })
        .collect();
    // Duplicated positions force ties on the line integral.
    if n >= 2 && rng.gen_bool(0.5) {
        out[n - 1].position = out[0].position;
    }
    out
}

fn linker() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut peaks_seen = 0;
    for case in 0..100 {
        // Coarse levels make equal neighbours common.
        let levels = rng.gen_range(2..12);
        let map = Array2::from_shape_fn((24, 32), |_| rng.gen_range(0..levels) as f32 / levels as f32);
        let window = [1, 3, 5, 7][case % 4];
        let threshold = rng.gen_range(0.0..0.9f32);
        let got = nms(map.view(), window, threshold).map_err(|e| e.to_string())?;
        let want = nms_oracle(&map, window, threshold);
        ensure!(got == want, "NMS case {case} (window {window}) differs from the brute-force scan");
        peaks_seen += want.len();
    }

    let mut worst_line = 0.0f64;
    let mut pairs = 0;
    for case in 0..300 {
        let map = Array2::from_shape_fn((24, 32), |_| rng.gen_range(0..6) as f32 / 5.0);
        let a = random_candidates(rng.gen_range(0..=6), 0, &mut rng);
        let b = random_candidates(rng.gen_range(0..=6), 1, &mut rng);
        for ca in &a {
            for cb in &b {
                let (p, q) = (ca.position, cb.position);
                let n = 32;
                let oracle = if p == q {
                    bilinear_oracle(&map, p.x, p.y)
                } else {
                    (0..n)
                        .map(|i| {
                            let s = i as f64 / (n - 1) as f64;
                            bilinear_oracle(&map, p.x + (q.x - p.x) * s, p.y + (q.y - p.y) * s)
                        })
                        .sum::<f64>()
                        / n as f64
                };
                worst_line = worst_line.max((line_integral(map.view(), p, q, n) - oracle).abs());
            }
        }
        // Exhaustive search: highest line integral, then combined score,
        // then lowest (a, b).
        let mut best: Option<(f64, f64, usize, usize)> = None;
        for (ia, ca) in a.iter().enumerate() {
            for (ib, cb) in b.iter().enumerate() {
                let s = line_integral(map.view(), ca.position, cb.position, 32);
                let c = ca.score as f64 + cb.score as f64;
                let wins = match best {
                    None => true,
                    Some((bs, bc, ba, bb)) => {
                        s > bs || (s == bs && (c > bc || (c == bc && (ia, ib) < (ba, bb))))
                    }
                };
                if wins {
                    best = Some((s, c, ia, ib));
                }
            }
        }
        let got = bipartite_match(&a, &b, map.view(), 32);
        match (got, best) {
            (None, None) => {}
            (Some(m), Some((s, _, ia, ib))) => {
                ensure!((m.a, m.b) == (ia, ib) && m.score == s, "matching case {case}: got {m:?}, want ({ia}, {ib})");
                pairs += 1;
            }
            (g, w) => return Err(format!("matching case {case}: got {g:?}, want {w:?}")),
        }
    }
    ensure!(worst_line <= 1e-9, "line integral deviates by {worst_line:e}");

    let cfg = MapGenConfig::default();
    let skeleton = SkeletonModel::new();
    let mut worst_pose = 0.0f64;
    let mut checked = 0;
    for seed in 0..10 {
        let seq = generate_sequence(&PuppetConfig { seed, length: 6, ..PuppetConfig::default() }, "oracle")
            .map_err(|e| e.to_string())?;
        let spec = seq.frame;
        let indices: Vec<usize> = seq.records.iter().map(|r| r.frame_index).collect();
        let stack = build_target_stack(&seq.records, &indices, MapKind::Confidence, &cfg, &spec)
            .map_err(|e| e.to_string())?;
        let estimates = estimate_pose(&stack, &LinkerParams::default(), &skeleton).map_err(|e| e.to_string())?;
        for (rec, est) in seq.records.iter().zip(&estimates) {
            for j in 0..NUM_JOINTS {
                let Some(p) = rec.joints[j].visible_position() else { continue };
                let r = cfg.confidence_radius;
                let interior = p.x >= r && p.y >= r && p.x <= (spec.width - 1) as f64 - r && p.y <= (spec.height - 1) as f64 - r;
                if !interior {
                    continue;
                }
                let Some(c) = est.joints[j] else {
                    return Err(format!("seed {seed} frame {}: joint {j} not recovered", rec.frame_index));
                };
                worst_pose = worst_pose.max(c.position.distance(p));
                checked += 1;
            }
        }
    }
    ensure!(checked > 0, "no interior joints were checked");
    ensure!(worst_pose <= 1.0, "recovered joints are up to {worst_pose:.3} px away");
    Ok(format!(
        "100 NMS maps ({peaks_seen} peaks), {pairs} matchings, {checked} joints recovered within {worst_pose:.3} px"
    ))
}

// ---------------------------------------------------------------- clips

fn clip_enumeration() -> Outcome {
    let mut cases = 0;
    for n in 0..=20usize {
        let frames: Vec<AnnotatedFrame> = (0..n)
            .map(|k| AnnotatedFrame {
                frame_index: 5 * k,
                depth: Array2::from_elem((1, 1), k as f32),
            })
            .collect();
        for wd in 1..=5usize {
            for ws in 0..wd {
                let cfg = ClipConfig::new(wd, ws).map_err(|e| e.to_string())?;
                let stride = wd - ws;
                let want: Vec<Vec<usize>> = (0..n)
                    .filter(|s| s % stride == 0 && s + wd <= n)
                    .map(|s| (s..s + wd).map(|k| 5 * k).collect())
                    .collect();
                let got = match build_clips("v", &frames, &cfg) {
                    Ok(clips) => {
                        for c in &clips {
                            let values: Vec<usize> = c.frames.iter().map(|f| f[(0, 0)] as usize * 5).collect();
                            ensure!(values == c.source_indices, "frames do not follow source indices");
                        }
                        clips.into_iter().map(|c| c.source_indices).collect()
                    }
                    Err(CoreError::InsufficientFrames { .. }) if n < wd => Vec::new(),
                    Err(e) => return Err(format!("N {n}, W_d {wd}, W_s {ws}: {e}")),
                };
                ensure!(got == want, "N {n}, W_d {wd}, W_s {ws}: got {got:?}, want {want:?}");
                cases += 1;
            }
        }
    }
    ensure!(ClipConfig::TRAIN.stride() == 1, "training stride {}", ClipConfig::TRAIN.stride());
    ensure!(ClipConfig::TEST.stride() == 3, "test stride {}", ClipConfig::TEST.stride());
    ensure!(
        (ClipConfig::TRAIN.frames_per_clip, ClipConfig::TRAIN.overlap, ClipConfig::TEST.overlap) == (3, 2, 0),
        "unexpected default clip settings"
    );
    Ok(format!("{cases} configurations; training stride 1, test stride 3"))
}

// ---------------------------------------------------------------- training

fn preprocess() -> Preprocess {
    Preprocess {
        depth_scale: 0.01,
        ..Preprocess::default()
    }
}

fn detection_net() -> Result<Network, String> {
    let spec = DetectionNetSpec {
        base_width: 16,
        skip_connections: true,
        ..DetectionNetSpec::new(96, 128, 3)
    };
    Network::detection(spec, 0).map_err(|e| e.to_string())
}

fn regression_net() -> Result<Network, String> {
    let spec = RegressionNetSpec {
        channels: vec![32; 5],
        kernels: vec![3, 3, 3, 3, 1],
        ..RegressionNetSpec::new(96, 128, 3, RegressionInput::DepthAndAffinity)
    };
    Network::regression(spec, 0).map_err(|e| e.to_string())
}

fn train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 1,
        ..TrainConfig::detection()
    }
}

fn eval_options(ablate: Option<Limb>) -> EvalOptions {
    EvalOptions {
        linker: LinkerParams {
            refine_radius: Some(9.0),
            ..LinkerParams::default()
        },
        ablate,
        ..EvalOptions::default()
    }
}

fn clips_from(seeds: std::ops::Range<u64>, length: usize, clip_cfg: &ClipConfig) -> Result<Vec<ClipData>, String> {
    let mut out = Vec::new();
    for seed in seeds {
        let cfg = PuppetConfig {
            seed,
            length,
            ..PuppetConfig::default()
        };
        let seq = generate_sequence(&cfg, &format!("synth_{seed:04}")).map_err(|e| e.to_string())?;
        out.extend(synthetic_clips(&seq, &preprocess(), clip_cfg, &MapGenConfig::default()).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

/// Detection samples that take the affinity targets out of the clips.
fn take_detection_samples(clips: &mut [ClipData]) -> Samples {
    let mut s = Samples::default();
    for c in clips {
        let target = std::mem::replace(&mut c.affinity, Tensor::zeros([1, 1, 1, 1, 1]));
        s.push(c.depth.clone(), target);
    }
    s
}

fn trained(net: &mut Network, train_set: &Samples, val_set: &Samples, epochs: usize, tag: &str) -> Result<TrainReport, String> {
    let start = Instant::now();
    train(net, train_set, val_set, &train_config(epochs), |r| {
        eprintln!(
            "  {tag} epoch {} loss {:.6} val {:.5} ({:.0} s)",
            r.epoch,
            r.train_loss,
            r.val_metric,
            start.elapsed().as_secs_f64()
        )
    })
    .map_err(|e| e.to_string())
}

fn limb_medians(col: &MetricsCollector) -> Vec<Option<f64>> {
    aggregate_report(col, [128, 96]).limbs.iter().map(|l| l.rmsd.map(|s| s.median)).collect()
}

fn fmt_medians(medians: &[Option<f64>]) -> String {
    Limb::ALL
        .iter()
        .zip(medians)
        .map(|(l, m)| match m {
            Some(v) => format!("{} {v:.2}", l.name()),
            None => format!("{} undefined", l.name()),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn overfit() -> Outcome {
    let mut clips = clips_from(1..2, 7, &ClipConfig::TRAIN)?;
    ensure!(clips.len() == 5, "expected 5 clips, got {}", clips.len());
    let mut det = detection_net()?;
    let det_set = take_detection_samples(&mut clips);
    let det_report = trained(&mut det, &det_set, &det_set, 55, "detection")?;
    for (c, s) in clips.iter_mut().zip(det_set.targets) {
        c.affinity = s;
    }
    let reg_set = regression_samples(&clips, RegressionInput::DepthAndAffinity, AffinitySource::Detection(&mut det))
        .map_err(|e| e.to_string())?;
    let mut reg = regression_net()?;
    let reg_report = trained(&mut reg, &reg_set, &reg_set, 60, "regression")?;
    drop(reg_set);

    let mut col = MetricsCollector::new();
    evaluate_clips(Variant::Full, Some(&mut det), Some(&mut reg), &clips, &eval_options(None), &mut col)
        .map_err(|e| e.to_string())?;
    let medians = limb_medians(&col);
    let det_ratio = det_report.final_loss / det_report.initial_loss;
    let reg_ratio = reg_report.final_loss / reg_report.initial_loss;
    let detail = format!(
        "loss ratios detection {det_ratio:.4}, regression {reg_ratio:.4}; median RMSD {}",
        fmt_medians(&medians)
    );
    ensure!(det_ratio < 0.05 && reg_ratio < 0.05, "{detail}");
    ensure!(medians.iter().all(|m| m.is_some_and(|v| v < 3.0)), "{detail}");
    ensure!(col.rmsd_undefined.iter().all(|&u| u == 0), "{detail}; undefined frames {:?}", col.rmsd_undefined);
    Ok(detail)
}

fn end_to_end() -> Outcome {
    const EPOCHS: usize = 10;
    let mut train_clips = clips_from(1000..1040, 7, &ClipConfig::TRAIN)?;
    let val_clips = clips_from(2000..2004, 6, &ClipConfig::TEST)?;
    let test_clips = clips_from(3000..3025, 6, &ClipConfig::TEST)?;
    ensure!(train_clips.len() == 200 && test_clips.len() == 50, "{} / {} clips", train_clips.len(), test_clips.len());

    let mut det = detection_net()?;
    let det_train = take_detection_samples(&mut train_clips);
    let det_val = limbpose_cli::pipeline::detection_samples(&val_clips);
    trained(&mut det, &det_train, &det_val, EPOCHS, "detection")?;
    drop(det_train);

    let reg_train = regression_samples(&train_clips, RegressionInput::DepthAndAffinity, AffinitySource::Detection(&mut det))
        .map_err(|e| e.to_string())?;
    drop(train_clips);
    let reg_val = regression_samples(&val_clips, RegressionInput::DepthAndAffinity, AffinitySource::Detection(&mut det))
        .map_err(|e| e.to_string())?;
    let mut reg = regression_net()?;
    trained(&mut reg, &reg_train, &reg_val, EPOCHS, "regression")?;
    drop(reg_train);

    let mut run = |ablate: Option<Limb>| -> Result<MetricsCollector, String> {
        let mut col = MetricsCollector::new();
        evaluate_clips(Variant::Full, Some(&mut det), Some(&mut reg), &test_clips, &eval_options(ablate), &mut col)
            .map_err(|e| e.to_string())?;
        Ok(col)
    };
    let base = run(None)?;
    let medians = limb_medians(&base);
    let mut detail = format!("median RMSD {}", fmt_medians(&medians));
    ensure!(medians.iter().all(|m| m.is_some_and(|v| v <= 10.0)), "{detail}");

    for limb in Limb::ALL {
        let col = run(Some(limb))?;
        let k = limb.index();
        for other in Limb::ALL.iter().filter(|&&o| o != limb) {
            let o = other.index();
            ensure!(
                col.rmsd[o] == base.rmsd[o] && col.rmsd_undefined[o] == base.rmsd_undefined[o],
                "{detail}; zeroing {limb} changed {other}"
            );
        }
        let ablated = limb_medians(&col)[k];
        let degraded = match (ablated, medians[k]) {
            (None, _) => true,
            (Some(a), Some(b)) => a > b,
            (Some(_), None) => false,
        };
        ensure!(degraded, "{detail}; zeroing {limb} left its RMSD at {ablated:?}");
        detail.push_str(&format!(
            "; without {}: {} undefined of {}",
            limb.name(),
            col.rmsd_undefined[k],
            col.rmsd_undefined[k] + col.rmsd[k].len()
        ));
    }
    Ok(detail)
}

// ---------------------------------------------------------------- metrics

/// Two-sided Student-t tail probability by integrating the unnormalised
/// density after the substitution x = tan(theta).
fn t_pvalue_oracle(t: f64, df: f64) -> f64 {
    let density = |theta: f64| {
        let x = theta.tan();
        let c = theta.cos();
        (1.0 + x * x / df).powf(-(df + 1.0) / 2.0) / (c * c)
    };
    let simpson = |a: f64, b: f64, n: usize| {
        let h = (b - a) / n as f64;
        let mut s = density(a) + density(b);
        for i in 1..n {
            s += density(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    // Stop just short of pi/2 so that tan stays finite.
    let top = std::f64::consts::FRAC_PI_2 - 1e-12;
    let half = simpson(0.0, top, 200_000);
    let tail = simpson(t.abs().atan(), top, 200_000);
    (tail / half).min(1.0)
}

fn metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..200 {
        let density = [0.0, 0.05, 0.3, 0.7][case % 4];
        let pred = Array2::from_shape_fn((24, 32), |_| rng.gen_bool(density));
        let gt = Array2::from_shape_fn((24, 32), |_| rng.gen_bool([0.0, 0.3, 0.05, 0.7][case % 4]));
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for (p, g) in pred.iter().zip(&gt) {
            match (p, g) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                _ => {}
            }
        }
        let want_dsc = if tp + fp + fn_ == 0.0 { 1.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
        let want_recall = if tp + fn_ == 0.0 { 1.0 } else { tp / (tp + fn_) };
        let got_dsc = dsc(pred.view(), gt.view()).map_err(|e| e.to_string())?;
        let got_recall = recall(pred.view(), gt.view()).map_err(|e| e.to_string())?;
        ensure!((got_dsc - want_dsc).abs() <= 1e-6, "DSC case {case}: {got_dsc} vs {want_dsc}");
        ensure!((got_recall - want_recall).abs() <= 1e-6, "recall case {case}: {got_recall} vs {want_recall}");
    }

    for case in 0..200 {
        let random_pose = |rng: &mut ChaCha8Rng| {
            let joints: [Option<Point>; NUM_JOINTS] = std::array::from_fn(|_| {
                rng.gen_bool(0.8).then(|| Point::new(rng.gen_range(0.0..128.0), rng.gen_range(0.0..96.0)))
            });
            Pose::new(joints)
        };
        let pred = random_pose(&mut rng);
        let gt = random_pose(&mut rng);
        for limb in Limb::ALL {
            let mut sum = 0.0;
            let mut n = 0.0;
            for j in limb.joints() {
                if let (Some(p), Some(g)) = (pred.joints[j], gt.joints[j]) {
                    sum += (p.x - g.x).powi(2) + (p.y - g.y).powi(2);
                    n += 1.0;
                }
            }
            let got = rmsd(&pred, &gt, limb).value;
            match got {
                None => ensure!(n == 0.0, "RMSD case {case}: undefined with {n} shared joints"),
                Some(v) => ensure!((v - (sum / n).sqrt()).abs() <= 1e-6, "RMSD case {case}: {v}"),
            }
        }
    }

    let cfg = StatTestConfig::default();
    let mut worst_p = 0.0f64;
    for case in 0..100 {
        let n = rng.gen_range(2..30);
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
        let shift = rng.gen_range(-1.0..1.0);
        let b: Vec<f64> = a.iter().map(|v| v + shift + rng.gen_range(-2.0..2.0)).collect();
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let mean = d.iter().sum::<f64>() / n as f64;
        let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let t = mean / (sd / (n as f64).sqrt());
        let p = t_pvalue_oracle(t, (n - 1) as f64);
        match paired_ttest(&a, &b, &cfg).map_err(|e| e.to_string())? {
            TTestOutcome::Computed { t: got_t, p: got_p, df, significant } => {
                ensure!((got_t - t).abs() <= 1e-6, "t-test case {case}: t {got_t} vs {t}");
                ensure!((got_p - p).abs() <= 1e-6, "t-test case {case}: p {got_p} vs {p}");
                ensure!(df == (n - 1) as f64 && significant == (got_p < cfg.alpha), "t-test case {case}");
                worst_p = worst_p.max((got_p - p).abs());
            }
            TTestOutcome::Degenerate => return Err(format!("t-test case {case} reported degenerate")),
        }
    }
    let same = paired_ttest(&[1.0, 2.0, 3.0], &[0.5, 1.5, 2.5], &cfg).map_err(|e| e.to_string())?;
    ensure!(same == TTestOutcome::Degenerate, "constant differences gave {same:?}");

    // Hand-computed summaries: (values, median, q1, q3, iqr).
    let lists: [([f64; 5], f64, f64, f64, f64); 4] = [
        ([4.0, 1.0, 3.0, 2.0, 5.0], 3.0, 2.0, 4.0, 2.0),
        ([9.0, 7.5, 12.25, 3.0, 10.0], 9.0, 7.5, 10.0, 2.5),
        ([0.5, 0.25, 1.0, 0.75, 0.0], 0.5, 0.25, 0.75, 0.5),
        ([6.0, 6.0, 2.0, 8.0, 6.5], 6.0, 6.0, 6.5, 0.5),
    ];
    let mut col = MetricsCollector::new();
    for ch in 0..NUM_MAPS {
        col.dsc[ch] = lists[ch % 4].0.to_vec();
        col.recall[ch] = lists[(ch + 1) % 4].0.to_vec();
    }
    for k in 0..4 {
        col.rmsd[k] = lists[k].0.to_vec();
    }
    let report = aggregate_report(&col, [128, 96]);
    let rows = report.joints.iter().chain(&report.connections);
    for (ch, row) in rows.enumerate() {
        for (summary, (_, median, q1, q3, iqr)) in [(row.dsc, lists[ch % 4]), (row.recall, lists[(ch + 1) % 4])] {
            let s = summary.ok_or(format!("channel {ch} has no summary"))?;
            ensure!(
                (s.n, s.median, s.q1, s.q3, s.iqr) == (5, median, q1, q3, iqr),
                "channel {ch}: {s:?}"
            );
        }
    }
    for (k, row) in report.limbs.iter().enumerate() {
        let (_, median, q1, q3, iqr) = lists[k];
        let s = row.rmsd.ok_or(format!("limb {k} has no summary"))?;
        ensure!((s.n, s.median, s.q1, s.q3, s.iqr) == (5, median, q1, q3, iqr), "limb {k}: {s:?}");
    }
    // Limb medians 3, 9, 0.5 and 6 have median 4.5.
    ensure!(report.overall_rmsd_median == Some(4.5), "overall median {:?}", report.overall_rmsd_median);
    Ok(format!("200 mask pairs, 800 limb RMSDs, 100 t-tests (max p deviation {worst_p:e}), exact summaries"))
}
