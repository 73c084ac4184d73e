//! Acceptance criteria, one line each. Tolerances are pinned below.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;

use dctrack::cmt::{anchored_expansion_squeeze, CmtWeights};
use dctrack::config::TrackerConfig;
use dctrack::metrics::{
    compare_cohorts, compute_metrics, mann_whitney_u, MetricName, MetricsReport, PValueMethod, Trajectory3D,
    IDLE_THRESHOLD_MM_S, SIGNIFICANCE_LEVEL,
};
use dctrack::mmh::{self_attention_stack, vision_motion_integrate, MmhWeights};
use dctrack::motion::{
    recurrence_oracle, selective_scan, zoh, BoundingBox, MotionToken, MotionTokenizer, SsmParams, ZOH_SERIES_THRESHOLD,
};
use dctrack::numeric::Matrix;
use dctrack::oracles::{naive_cmt, naive_integrator, naive_self_attention};
use dctrack::pyramid::{CameraId, FeatureMap, ImageSize, RegionKind, Stage};
use dctrack::selftest::enumerated_p;
use dctrack::session::{generate_synthetic_session, synthetic_trial, SkillProfile, EXPERT_TRIALS, NOVICE_TRIALS};
use dctrack::stereo::{Pixel, Point3D, StereoRig};
use dctrack::tracker::{occlusion_flags_match, run_tracking_session, Tracker};

const SCAN_TOL: f64 = 1e-10;
const SCAN_BUDGET_S: f64 = 10.0;
const ZOH_CONTINUITY_TOL: f64 = 1e-8;
const ATTENTION_TOL: f64 = 1e-10;
const STEREO_REL_TOL: f64 = 1e-9;
const DEPTH_PRODUCT_TOL: f64 = 1e-12;
const METRIC_REL_TOL: f64 = 1e-3;
const FLAT_SCALE_TOL: f64 = 1e-6;
const MW_P_TOL: f64 = 1e-12;
const NULL_FLAG_RATE: f64 = 0.06;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn map(h: usize, w: usize, c: usize, camera: CameraId, kind: RegionKind, rng: &mut ChaCha8Rng) -> FeatureMap {
    FeatureMap {
        stage: Stage::S3,
        height: h,
        width: w,
        tokens: Matrix::random_uniform(h * w, c, 1.0, rng),
        camera,
        kind,
    }
}

fn scan_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let steps = rng.random_range(1..=128);
        let d = rng.random_range(1..=16);
        let p = SsmParams::seeded(d, 16, &mut rng);
        let x = Matrix::random_uniform(steps, d, 2.0, &mut rng);
        let fast = selective_scan(&x, &p).map_err(|e| e.to_string())?.y;
        let slow = recurrence_oracle(&x, &p).map_err(|e| e.to_string())?;
        worst = worst.max(fast.max_abs_diff(&slow));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst <= SCAN_TOL, format!("max diff {worst:e}"))?;
    ensure(secs < SCAN_BUDGET_S, format!("took {secs:.2} s"))?;
    Ok(format!("200 cases, max diff {worst:.2e}, {secs:.2} s"))
}

fn ssm_limits() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut unit = vec![0.0; 16];
    unit[0] = 1.0;
    let p = SsmParams::fixed(Matrix::zeros(3, 16), 1.0, unit.clone(), unit);
    let x = Matrix::random_uniform(128, 3, 1.0, &mut rng);
    let y = selective_scan(&x, &p).map_err(|e| e.to_string())?.y;
    for ch in 0..3 {
        let mut s = 0.0;
        for t in 0..128 {
            s += x.get(t, ch);
            ensure(y.get(t, ch) == s, format!("cumsum differs at t={t} ch={ch}"))?;
        }
    }
    // B̄/Δb = (e^x - 1)/x, tends to 1 as x → 0.
    let mut worst: f64 = 0.0;
    for x in [1e-9, -1e-9, ZOH_SERIES_THRESHOLD * 0.999, ZOH_SERIES_THRESHOLD * 1.001] {
        for sign in [1.0, -1.0] {
            let a = sign * x;
            let (_, bbar) = zoh(a, 1.0, 1.0);
            let exact = a.exp_m1() / a;
            worst = worst.max((bbar - exact).abs()).max((bbar - 1.0).abs());
        }
    }
    ensure(worst < ZOH_CONTINUITY_TOL, format!("B̄ gap {worst:e}"))?;
    Ok(format!("cumsum exact, B̄ gap {worst:.2e}"))
}

fn attention_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let (mut cmt_w, mut att_w, mut int_w): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..20 {
        let cmt = CmtWeights::seeded(4, &mut rng);
        let z = map(2, 2, 4, CameraId::One, RegionKind::Template, &mut rng);
        let x = map(3, 3, 4, CameraId::Two, RegionKind::Search, &mut rng);
        let fast = anchored_expansion_squeeze(&z, &x, &cmt).map_err(|e| e.to_string())?;
        cmt_w = cmt_w.max(fast.template.map.tokens.max_abs_diff(&naive_cmt(&z.tokens, &x.tokens, &cmt)));

        let mmh = MmhWeights::seeded(4, 2, 2, &mut rng);
        let concat = Matrix::vstack(&z.tokens, &x.tokens).map_err(|e| e.to_string())?;
        let fast = self_attention_stack(&concat, &mmh).map_err(|e| e.to_string())?;
        let mut slow = concat.clone();
        for b in &mmh.blocks {
            slow = naive_self_attention(&slow, b);
        }
        att_w = att_w.max(fast.max_abs_diff(&slow));

        let seq_len = 3;
        let token = MotionToken(Matrix::random_uniform(2 * seq_len, 4, 1.0, &mut rng));
        let x1 = map(3, 3, 4, CameraId::One, RegionKind::Search, &mut rng);
        let fast = vision_motion_integrate(&fast, &x1, &token, &mmh, seq_len).map_err(|e| e.to_string())?;
        let slow = naive_integrator(
            &self_attention_stack(&concat, &mmh).map_err(|e| e.to_string())?,
            &x1.tokens,
            &token.0,
            &mmh.integrator,
        );
        int_w = int_w.max(fast.features.tokens.max_abs_diff(&slow));
    }
    let worst = cmt_w.max(att_w).max(int_w);
    ensure(worst <= ATTENTION_TOL, format!("cmt {cmt_w:e}, self {att_w:e}, integrator {int_w:e}"))?;
    Ok(format!("cmt {cmt_w:.1e}, self-attention {att_w:.1e}, integrator {int_w:.1e}"))
}

fn residual_degeneration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    for case in 0..10 {
        let mut cmt = CmtWeights::seeded(8, &mut rng);
        cmt.output.zero();
        let mut mmh = MmhWeights::seeded(8, 2, 2, &mut rng);
        mmh.zero_output_projections();
        let tok = MotionTokenizer::seeded(6, 4, 4, 8, &mut rng);
        let z = map(2, 2, 8, CameraId::One, RegionKind::Template, &mut rng);
        let x1 = map(4, 4, 8, CameraId::One, RegionKind::Search, &mut rng);
        let x2 = map(4, 4, 8, CameraId::Two, RegionKind::Search, &mut rng);
        let omega = anchored_expansion_squeeze(&z, &x2, &cmt).map_err(|e| e.to_string())?.template.map;
        ensure(omega.tokens == z.tokens, format!("case {case}: ω differs from φ(z)"))?;
        let concat = Matrix::vstack(&omega.tokens, &x1.tokens).map_err(|e| e.to_string())?;
        let attended = self_attention_stack(&concat, &mmh).map_err(|e| e.to_string())?;
        let boxes: Vec<_> = (0..8).map(|f| BoundingBox::new(90.0 + 2.0 * f as f64, 70.0, 18.0, 20.0, f, CameraId::One)).collect();
        let image = ImageSize { width: 640, height: 480 };
        let token = tok.tokenize_motion(&boxes, image).map_err(|e| e.to_string())?;
        let x_hat = vision_motion_integrate(&attended, &x1, &token, &mmh, tok.seq_len).map_err(|e| e.to_string())?;
        ensure(x_hat.features.tokens == x1.tokens, format!("case {case}: x̂ differs from φ(x)"))?;
    }
    Ok("10 cases bitwise".into())
}

fn shape_laws() -> Outcome {
    let cfg = TrackerConfig::full();
    let session = generate_synthetic_session(5, 0.5, Vec::new(), 0.0).map_err(|e| e.to_string())?;
    let tracker = Tracker::new(&cfg, &session).map_err(|e| e.to_string())?;
    let trace = tracker.trace(0).map_err(|e| e.to_string())?;
    let stages: Vec<u8> = trace.stages.iter().map(|s| s.stage.number()).collect();
    ensure(stages == [3, 4, 5], format!("stages {stages:?}"))?;
    for s in &trace.stages {
        ensure(s.prediction.0 * s.prediction.1 > 0, format!("stage {} has no prediction map", s.stage.number()))?;
        ensure(s.motion_token == (480, 256), format!("motion token {:?}", s.motion_token))?;
        ensure(s.mutual_template.0 == s.template_grid.0 * s.template_grid.1, "ω size differs from template")?;
    }
    let s4 = &trace.stages[1];
    ensure(s4.template_grid == (8, 8) && s4.search_grid == (16, 16), format!("stage 4 grids {:?} {:?}", s4.template_grid, s4.search_grid))?;
    ensure(s4.expansion == (256, 64), format!("M_E {:?}", s4.expansion))?;
    ensure(s4.squeeze == (64, 256), format!("M_S {:?}", s4.squeeze))?;
    Ok(format!("M_E {:?}, M_S {:?}, token {:?}, fused {:?}", s4.expansion, s4.squeeze, s4.motion_token, trace.fused))
}

fn stereo_roundtrip() -> Outcome {
    let rig = StereoRig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let (mut worst, mut n): (f64, usize) = (0.0, 0);
    while n < 1000 {
        let p = Point3D::new(rng.random_range(-60.0..80.0), rng.random_range(-50.0..50.0), rng.random_range(30.0..400.0));
        if !rig.sees(p, 0.0) {
            continue;
        }
        n += 1;
        let (l, r) = rig.project_point(p).map_err(|e| e.to_string())?;
        let q = rig
            .triangulate_point(Pixel { u: l.u, v: l.v }, Pixel { u: r.u, v: r.v })
            .map_err(|e| e.to_string())?
            .point;
        worst = worst.max(q.distance(&p) / (p.x * p.x + p.y * p.y + p.z * p.z).sqrt());
    }
    ensure(worst <= STEREO_REL_TOL, format!("relative error {worst:e}"))?;
    let k = rig.baseline_mm * rig.focal_mm / rig.pixel_pitch_mm;
    let mut prod_worst: f64 = 0.0;
    for disparity in [0.5, 1.0, 3.7, 10.0, 64.0, 160.0, 400.0] {
        let d = rig.depth_from_disparity(disparity).map_err(|e| e.to_string())?.mm;
        prod_worst = prod_worst.max((d * disparity - k).abs() / k);
    }
    ensure(prod_worst <= DEPTH_PRODUCT_TOL, format!("d·D spread {prod_worst:e}"))?;
    Ok(format!("1000 points, rel {worst:.1e}, d·D spread {prod_worst:.1e}"))
}

fn analytic_metrics() -> Outcome {
    let v = 20.0;
    let line = Trajectory3D::sampled(100.0, 1000, |t| Point3D::new(v * t, 0.0, 50.0));
    let m = compute_metrics(&line, IDLE_THRESHOLD_MM_S).map_err(|e| e.to_string())?;
    let rel = |a: f64, b: f64| (a - b).abs() / b;
    ensure(rel(m.path_length_m, 0.2) <= METRIC_REL_TOL, format!("PL {}", m.path_length_m))?;
    ensure(rel(m.speed_mm_s, v) <= METRIC_REL_TOL, format!("S {}", m.speed_mm_s))?;
    ensure(m.idle_pct == 0.0, format!("IT {}", m.idle_pct))?;
    // Accel scaled by v/1 s; MS is dimensionless.
    ensure(m.accel_mm_s2.abs() <= FLAT_SCALE_TOL * v, format!("A {}", m.accel_mm_s2))?;
    let ms = m.smoothness.ok_or("MS undefined on a moving line")?;
    ensure(ms.abs() <= FLAT_SCALE_TOL, format!("MS {ms}"))?;

    let still = Trajectory3D::sampled(100.0, 1000, |_| Point3D::new(3.0, -2.0, 80.0));
    let s = compute_metrics(&still, IDLE_THRESHOLD_MM_S).map_err(|e| e.to_string())?;
    ensure(s.idle_pct == 100.0 && s.path_length_m == 0.0, format!("static IT {} PL {}", s.idle_pct, s.path_length_m))?;
    ensure(s.smoothness.is_none() && s.economy_of_volume.is_none(), "static MS/EOV should be undefined")?;
    let kv = s.to_kv();
    ensure(kv.contains("MS = undefined") && kv.contains("EOV = undefined"), "undefined markers missing")?;
    Ok(format!("line PL {:.6} m S {:.6}; static IT 100 PL 0", m.path_length_m, m.speed_mm_s))
}

fn mann_whitney() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let mut worst: f64 = 0.0;
    let mut exact_cases = 0;
    for n1 in 1..=6 {
        for n2 in 1..=6 {
            for _ in 0..3 {
                let a: Vec<f64> = (0..n1).map(|_| rng.random::<f64>()).collect();
                let b: Vec<f64> = (0..n2).map(|_| rng.random::<f64>()).collect();
                let r = mann_whitney_u(&a, &b).map_err(|e| e.to_string())?;
                ensure(r.method == PValueMethod::Exact, format!("{n1}×{n2} not exact"))?;
                worst = worst.max((r.p_value - enumerated_p(n1, n2, r.u_a)).abs());
                exact_cases += 1;
            }
        }
    }
    ensure(worst <= MW_P_TOL, format!("exact p off by {worst:e}"))?;

    for case in 0..1000 {
        let n1 = rng.random_range(1..=40);
        let n2 = rng.random_range(1..=40);
        let a: Vec<f64> = (0..n1).map(|_| f64::from(rng.random_range(0..10u8))).collect();
        let b: Vec<f64> = (0..n2).map(|_| f64::from(rng.random_range(0..10u8))).collect();
        let r = mann_whitney_u(&a, &b).map_err(|e| e.to_string())?;
        ensure(r.u_a + r.u_b == (n1 * n2) as f64, format!("case {case}: U sum {}", r.u_a + r.u_b))?;
    }

    // Null: both cohorts drawn without replacement from one pool.
    let pool: Vec<MetricsReport> = (0..120)
        .map(|k| compute_metrics(&synthetic_trial(&SkillProfile::EXPERT, 9000 + k), IDLE_THRESHOLD_MM_S))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let reps = 1000;
    let mut flagged = [0usize; 7];
    for _ in 0..reps {
        let idx = sample(&mut rng, pool.len(), EXPERT_TRIALS + NOVICE_TRIALS).into_vec();
        let pick = |r: &[usize]| r.iter().map(|&i| pool[i]).collect::<Vec<_>>();
        let rows = compare_cohorts(&pick(&idx[..EXPERT_TRIALS]), &pick(&idx[EXPERT_TRIALS..])).map_err(|e| e.to_string())?;
        for (k, row) in rows.iter().enumerate() {
            let p = row.test.as_ref().map_or(1.0, |t| t.p_value);
            flagged[k] += usize::from(p <= SIGNIFICANCE_LEVEL);
        }
    }
    let rates: Vec<f64> = flagged.iter().map(|&f| f as f64 / reps as f64).collect();
    for (name, rate) in MetricName::ALL.iter().zip(&rates) {
        ensure(*rate <= NULL_FLAG_RATE, format!("null rate {rate} for {name}"))?;
    }
    let max_rate = rates.iter().cloned().fold(0.0, f64::max);
    Ok(format!("{exact_cases} exact pairs, 1000 U sums, null max rate {max_rate:.3}"))
}

fn end_to_end() -> Outcome {
    let cfg = TrackerConfig::default();
    let clean = generate_synthetic_session(11, 10.0, Vec::new(), 0.0).map_err(|e| e.to_string())?;
    ensure(clean.frames() == 300, format!("{} frames", clean.frames()))?;
    let rec = run_tracking_session(&clean, &cfg).map_err(|e| e.to_string())?;
    let summary = rec.error_summary().ok_or("no 3D estimates")?;
    let cell = rec.decode_cell_mm();
    ensure(summary.count == 300, format!("{} estimated frames", summary.count))?;
    ensure(summary.avg < cell, format!("mean error {:.3} mm ≥ cell {cell:.3} mm", summary.avg))?;

    let window = 120..=149u64;
    let occluded = generate_synthetic_session(12, 10.0, vec![window.clone()], 0.0).map_err(|e| e.to_string())?;
    let rec2 = run_tracking_session(&occluded, &cfg).map_err(|e| e.to_string())?;
    let flags = rec2.low_confidence_frames();
    ensure(flags == window.clone().collect::<Vec<_>>(), format!("flags {flags:?}"))?;
    ensure(occlusion_flags_match(&rec2, &occluded, 0), "flag check disagrees")?;
    Ok(format!(
        "mean {:.2} mm < cell {cell:.2} mm; 30 occluded frames flagged exactly",
        summary.avg
    ))
}

fn cli(dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_dctrack"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))?;
    Ok(out.stdout)
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .map(|e| {
            let e = e.map_err(|e| e.to_string())?;
            let bytes = std::fs::read(e.path()).map_err(|e| e.to_string())?;
            Ok((e.file_name().to_string_lossy().into_owned(), bytes))
        })
        .collect::<Result<_, String>>()?;
    files.sort();
    Ok(files)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for run in ["a", "b"] {
        let dir = tmp.path().join(run);
        std::fs::create_dir(&dir).map_err(|e| e.to_string())?;
        let selftest = cli(&dir, &["selftest"])?;
        cli(&dir, &["simulate", "--seed", "21", "--duration", "2", "--occlusion", "15-24", "--noise", "0.05", "--out", "s.txt"])?;
        let session = std::fs::read(dir.join("s.txt")).map_err(|e| e.to_string())?;
        let track = cli(&dir, &["track", "--session", "s.txt", "--mode", "oracle", "--out", "out"])?;
        let seeded = cli(&dir, &["track", "--session", "s.txt", "--mode", "seeded", "--out", "out_seeded"])?;
        let files = read_dir_sorted(&dir.join("out"))?;
        let seeded_files = read_dir_sorted(&dir.join("out_seeded"))?;
        runs.push((selftest, session, track, seeded, files, seeded_files));
    }
    let (a, b) = (&runs[0], &runs[1]);
    ensure(a.0 == b.0, "selftest output differs")?;
    ensure(a.1 == b.1, "session file differs")?;
    ensure(a.2 == b.2 && a.3 == b.3, "track stdout differs")?;
    ensure(a.4 == b.4 && a.5 == b.5, "track output files differ")?;
    Ok(format!("selftest, simulate, track x2 modes identical ({} report files)", a.4.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("scan_vs_recurrence_oracle", scan_oracle),
        ("ssm_limits", ssm_limits),
        ("attention_oracles", attention_oracles),
        ("residual_degeneration", residual_degeneration),
        ("shape_laws", shape_laws),
        ("stereo_roundtrip", stereo_roundtrip),
        ("analytic_metrics", analytic_metrics),
        ("mann_whitney_exactness", mann_whitney),
        ("end_to_end_geometry", end_to_end),
        ("determinism", determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name:<26} {detail} [{secs:.1} s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name:<26} {detail} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
