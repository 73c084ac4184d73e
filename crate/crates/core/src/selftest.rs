//! Fixed-seed equivalence checks between the fast kernels and their
//! scalar references. Output contains no timings, so it is identical
//! from run to run.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cmt::{anchored_expansion_squeeze, CmtWeights};
use crate::metrics::{mann_whitney_u, PValueMethod};
use crate::mmh::{self_attention_stack, vision_motion_integrate, MmhWeights};
use crate::motion::{recurrence_oracle, selective_scan, MotionTokenizer, SsmParams};
use crate::numeric::Matrix;
use crate::oracles::{naive_cmt, naive_integrator, naive_self_attention};
use crate::pyramid::{CameraId, FeatureMap, RegionKind, Stage};
use crate::stereo::{Pixel, Point3D, StereoRig};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub cases: usize,
    /// Worst deviation observed.
    pub worst: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<28} cases={:<5} worst={:.3e} tol={:.0e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.worst,
            self.tolerance
        )
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

fn scan_vs_recurrence(rng: &mut ChaCha8Rng) -> Check {
    let mut worst: f64 = 0.0;
    let cases = 200;
    for _ in 0..cases {
        let steps = rng.random_range(1..=128);
        let d = rng.random_range(1..=16);
        let p = SsmParams::seeded(d, 16, rng);
        let x = Matrix::random_uniform(steps, d, 2.0, rng);
        let fast = selective_scan(&x, &p).expect("valid shapes");
        let slow = recurrence_oracle(&x, &p).expect("valid shapes");
        worst = worst.max(fast.y.max_abs_diff(&slow));
    }
    Check {
        name: "selective_scan_vs_recurrence",
        cases,
        worst,
        tolerance: 1e-10,
    }
}

fn scan_cumulative_sum(rng: &mut ChaCha8Rng) -> Check {
    let mut e1 = vec![0.0; 16];
    e1[0] = 1.0;
    let p = SsmParams::fixed(Matrix::zeros(4, 16), 1.0, e1.clone(), e1);
    let x = Matrix::random_uniform(100, 4, 1.0, rng);
    let y = selective_scan(&x, &p).expect("valid shapes").y;
    let mut worst: f64 = 0.0;
    for ch in 0..4 {
        let mut s = 0.0;
        for t in 0..100 {
            s += x.get(t, ch);
            worst = worst.max((y.get(t, ch) - s).abs());
        }
    }
    Check {
        name: "degenerate_scan_cumsum",
        cases: 4,
        worst,
        tolerance: 0.0,
    }
}

fn cmt_vs_naive(rng: &mut ChaCha8Rng) -> Check {
    let mut worst: f64 = 0.0;
    let cases = 50;
    for k in 0..cases {
        let c = 4 * (1 + k % 3);
        let w = CmtWeights::seeded(c, rng);
        let z = map(2, 2, c, CameraId::One, RegionKind::Template, rng);
        let x = map(3, 3, c, CameraId::Two, RegionKind::Search, rng);
        let fast = anchored_expansion_squeeze(&z, &x, &w).expect("valid shapes");
        worst = worst.max(fast.template.map.tokens.max_abs_diff(&naive_cmt(&z.tokens, &x.tokens, &w)));
    }
    Check {
        name: "cmt_vs_naive",
        cases,
        worst,
        tolerance: 1e-10,
    }
}

fn attention_vs_naive(rng: &mut ChaCha8Rng) -> Check {
    let mut worst: f64 = 0.0;
    let cases = 50;
    for _ in 0..cases {
        let w = MmhWeights::seeded(4, 2, 2, rng);
        let x = Matrix::random_uniform(13, 4, 1.0, rng);
        let fast = self_attention_stack(&x, &w).expect("valid shapes");
        let mut slow = x.clone();
        for b in &w.blocks {
            slow = naive_self_attention(&slow, b);
        }
        worst = worst.max(fast.max_abs_diff(&slow));
    }
    Check {
        name: "self_attention_vs_naive",
        cases,
        worst,
        tolerance: 1e-10,
    }
}

fn integrator_vs_naive(rng: &mut ChaCha8Rng) -> Check {
    let mut worst: f64 = 0.0;
    let cases = 50;
    for _ in 0..cases {
        let w = MmhWeights::seeded(4, 1, 1, rng);
        let tok = MotionTokenizer::seeded(5, 3, 4, 4, rng);
        let search = map(3, 3, 4, CameraId::One, RegionKind::Search, rng);
        let attended = Matrix::random_uniform(13, 4, 1.0, rng);
        let token = crate::motion::MotionToken(Matrix::random_uniform(2 * tok.seq_len, 4, 1.0, rng));
        let fast = vision_motion_integrate(&attended, &search, &token, &w, tok.seq_len).expect("valid shapes");
        let slow = naive_integrator(&attended, &search.tokens, &token.0, &w.integrator);
        worst = worst.max(fast.features.tokens.max_abs_diff(&slow));
    }
    Check {
        name: "integrator_vs_naive",
        cases,
        worst,
        tolerance: 1e-10,
    }
}

/// Zeroed output projections: `ω = φ(z)` and `x̂ = φ(x)` bit for bit.
fn residual_degeneration(rng: &mut ChaCha8Rng) -> Check {
    let mut mismatches = 0usize;
    let cases = 20;
    for _ in 0..cases {
        let mut cmt = CmtWeights::seeded(8, rng);
        cmt.output.zero();
        let mut mmh = MmhWeights::seeded(8, 2, 2, rng);
        mmh.zero_output_projections();
        let tok = MotionTokenizer::seeded(6, 4, 4, 8, rng);
        let z = map(2, 2, 8, CameraId::One, RegionKind::Template, rng);
        let x1 = map(4, 4, 8, CameraId::One, RegionKind::Search, rng);
        let x2 = map(4, 4, 8, CameraId::Two, RegionKind::Search, rng);
        let omega = anchored_expansion_squeeze(&z, &x2, &cmt).expect("valid shapes").template.map;
        mismatches += usize::from(omega.tokens != z.tokens);
        let concat = Matrix::vstack(&omega.tokens, &x1.tokens).expect("same width");
        let attended = self_attention_stack(&concat, &mmh).expect("valid shapes");
        let boxes: Vec<_> = (0..9)
            .map(|f| crate::motion::BoundingBox::new(100.0 + f as f64, 80.0, 20.0, 24.0, f, CameraId::One))
            .collect();
        let token = tok
            .tokenize_motion(&boxes, crate::pyramid::ImageSize { width: 640, height: 480 })
            .expect("visible history");
        let x_hat = vision_motion_integrate(&attended, &x1, &token, &mmh, tok.seq_len).expect("valid shapes");
        mismatches += usize::from(x_hat.features.tokens != x1.tokens);
    }
    Check {
        name: "residual_degeneration",
        cases,
        worst: mismatches as f64,
        tolerance: 0.0,
    }
}

fn stereo_roundtrip(rng: &mut ChaCha8Rng) -> Check {
    let rig = StereoRig::default();
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    while cases < 1000 {
        let p = Point3D::new(
            rng.random_range(-40.0..60.0),
            rng.random_range(-40.0..40.0),
            rng.random_range(40.0..300.0),
        );
        if !rig.sees(p, 0.0) {
            continue;
        }
        cases += 1;
        let (l, r) = rig.project_point(p).expect("in front");
        let q = rig
            .triangulate_point(Pixel { u: l.u, v: l.v }, Pixel { u: r.u, v: r.v })
            .expect("positive disparity")
            .point;
        worst = worst.max(q.distance(&p) / p.distance(&Point3D::new(0.0, 0.0, 0.0)));
    }
    Check {
        name: "stereo_roundtrip_relative",
        cases,
        worst,
        tolerance: 1e-9,
    }
}

/// Two-sided exact p by listing every rank subset for sample A.
pub fn enumerated_p(n1: usize, n2: usize, u: f64) -> f64 {
    let n = n1 + n2;
    let mu = (n1 * n2) as f64 / 2.0;
    let (mut hit, mut total) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        if mask.count_ones() as usize != n1 {
            continue;
        }
        let rank_sum: usize = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| i + 1).sum();
        let ua = rank_sum as f64 - (n1 * (n1 + 1)) as f64 / 2.0;
        total += 1;
        hit += u64::from((ua - mu).abs() >= (u - mu).abs() - 1e-9);
    }
    hit as f64 / total as f64
}

fn mann_whitney_exact(rng: &mut ChaCha8Rng) -> Check {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for n1 in 1..=5 {
        for n2 in 1..=5 {
            for _ in 0..4 {
                let a: Vec<f64> = (0..n1).map(|_| rng.random::<f64>()).collect();
                let b: Vec<f64> = (0..n2).map(|_| rng.random::<f64>()).collect();
                let r = mann_whitney_u(&a, &b).expect("nonempty");
                debug_assert_eq!(r.method, PValueMethod::Exact);
                worst = worst.max((r.p_value - enumerated_p(n1, n2, r.u_a)).abs());
                cases += 1;
            }
        }
    }
    Check {
        name: "mann_whitney_exact_p",
        cases,
        worst,
        tolerance: 1e-12,
    }
}

pub fn run_selftest(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        scan_vs_recurrence(&mut rng),
        scan_cumulative_sum(&mut rng),
        cmt_vs_naive(&mut rng),
        attention_vs_naive(&mut rng),
        integrator_vs_naive(&mut rng),
        residual_degeneration(&mut rng),
        stereo_roundtrip(&mut rng),
        mann_whitney_exact(&mut rng),
    ]
}
