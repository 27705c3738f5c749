//! Shared test oracles, all independent of the library code paths they
//! check: Monte-Carlo rasterization for areas and IoU, sampling-based
//! divergence estimates, and an eigendecomposition route for the
//! Wasserstein distance.

// Each test target compiles its own copy; not every target uses every oracle.
#![allow(dead_code)]

use gbbox::gaussian::Gaussian2;
use gbbox::geometry::ObbBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random box matching the harness's default sampling ranges.
pub fn random_box(rng: &mut ChaCha8Rng) -> ObbBox {
    let cx = rng.random_range(0.0..10.0);
    let cy = rng.random_range(0.0..10.0);
    let w = rng.random_range(0.5..5.0);
    let h = rng.random_range(0.5..5.0);
    let theta = rng.random_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2);
    ObbBox::new(cx, cy, w, h, theta).unwrap()
}

fn point_in_obb(b: &ObbBox, x: f64, y: f64) -> bool {
    let (s, c) = b.theta().sin_cos();
    let dx = x - b.cx();
    let dy = y - b.cy();
    let u = c * dx + s * dy;
    let v = -s * dx + c * dy;
    u.abs() <= 0.5 * b.w() && v.abs() <= 0.5 * b.h()
}

/// Intersection area of two boxes by rasterizing box `a` with a jittered
/// grid of roughly `samples` points and testing membership in `b`.
/// Never touches the polygon-clipping path.
pub fn mc_intersection_area(a: &ObbBox, b: &ObbBox, samples: usize, seed: u64) -> f64 {
    let grid = (samples as f64).sqrt().round() as usize;
    let mut rng = rng(seed);
    let (s, c) = a.theta().sin_cos();
    let mut hits = 0usize;
    for i in 0..grid {
        for j in 0..grid {
            let u = ((i as f64 + rng.random::<f64>()) / grid as f64 - 0.5) * a.w();
            let v = ((j as f64 + rng.random::<f64>()) / grid as f64 - 0.5) * a.h();
            let x = a.cx() + c * u - s * v;
            let y = a.cy() + s * u + c * v;
            if point_in_obb(b, x, y) {
                hits += 1;
            }
        }
    }
    a.area() * hits as f64 / (grid * grid) as f64
}

/// IoU estimate from the rasterized intersection and the exact box areas.
pub fn mc_iou(a: &ObbBox, b: &ObbBox, samples: usize, seed: u64) -> f64 {
    let inter = mc_intersection_area(a, b, samples, seed);
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Eigendecomposition of a symmetric 2x2 matrix: eigenvalues with an
/// orthonormal eigenbasis.
fn sym_eig(m: [[f64; 2]; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
    let half_tr = 0.5 * (m[0][0] + m[1][1]);
    let half_diff = 0.5 * (m[0][0] - m[1][1]);
    let radius = (half_diff * half_diff + m[0][1] * m[0][1]).sqrt();
    let eig = [half_tr - radius, half_tr + radius];
    if m[0][1].abs() < 1e-300 && half_diff.abs() < 1e-300 {
        return (eig, [[1.0, 0.0], [0.0, 1.0]]);
    }
    // Eigenvector of the larger eigenvalue.
    let (vx, vy) = if half_diff >= 0.0 {
        (half_diff + radius, m[0][1])
    } else {
        (m[0][1], radius - half_diff)
    };
    let norm = vx.hypot(vy);
    let (vx, vy) = if norm > 0.0 {
        (vx / norm, vy / norm)
    } else {
        (1.0, 0.0)
    };
    // Columns: eigenvector of the smaller, then the larger eigenvalue.
    (eig, [[-vy, vx], [vx, vy]])
}

fn mat_mul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            for (k, bk) in b.iter().enumerate() {
                out[i][j] += a[i][k] * bk[j];
            }
        }
    }
    out
}

fn sym_sqrt(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let (eig, v) = sym_eig(m);
    let d = [[eig[0].max(0.0).sqrt(), 0.0], [0.0, eig[1].max(0.0).sqrt()]];
    let vt = [[v[0][0], v[1][0]], [v[0][1], v[1][1]]];
    mat_mul(mat_mul(v, d), vt)
}

/// Squared 2-Wasserstein distance via explicit eigendecomposition-based
/// matrix square roots, the long way around.
pub fn eig_gwd(p: &Gaussian2, t: &Gaussian2) -> f64 {
    let dx = p.mean()[0] - t.mean()[0];
    let dy = p.mean()[1] - t.mean()[1];
    let root_p = sym_sqrt(p.cov());
    let inner = mat_mul(mat_mul(root_p, t.cov()), root_p);
    let coupling = sym_sqrt(inner);
    let trace_term =
        p.cov()[0][0] + p.cov()[1][1] + t.cov()[0][0] + t.cov()[1][1]
            - 2.0 * (coupling[0][0] + coupling[1][1]);
    dx * dx + dy * dy + trace_term
}

fn log_density(g: &Gaussian2, x: [f64; 2]) -> f64 {
    let c = g.cov();
    let det = g.det();
    let dx = x[0] - g.mean()[0];
    let dy = x[1] - g.mean()[1];
    let quad = (c[1][1] * dx * dx - 2.0 * c[0][1] * dx * dy + c[0][0] * dy * dy) / det;
    -0.5 * quad - 0.5 * det.ln() - std::f64::consts::LN_2 - (std::f64::consts::PI).ln()
}

fn sample_gaussian(g: &Gaussian2, rng: &mut ChaCha8Rng) -> [f64; 2] {
    // Cholesky factor of the covariance.
    let c = g.cov();
    let l00 = c[0][0].sqrt();
    let l10 = c[0][1] / l00;
    let l11 = (c[1][1] - l10 * l10).sqrt();
    let z0: f64 = StandardNormal.sample(rng);
    let z1: f64 = StandardNormal.sample(rng);
    [
        g.mean()[0] + l00 * z0,
        g.mean()[1] + l10 * z0 + l11 * z1,
    ]
}

/// Monte-Carlo estimate of the Bhattacharyya coefficient
/// `E_p[sqrt(q/p)]`; the plain (unweighted) distance is `-ln` of it.
pub fn mc_bhattacharyya_plain(p: &Gaussian2, t: &Gaussian2, samples: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut acc = 0.0;
    for _ in 0..samples {
        let x = sample_gaussian(p, &mut rng);
        acc += (0.5 * (log_density(t, x) - log_density(p, x))).exp();
    }
    -(acc / samples as f64).ln()
}

/// Monte-Carlo estimate of `D_KL(p || t)`.
pub fn mc_kld(p: &Gaussian2, t: &Gaussian2, samples: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut acc = 0.0;
    for _ in 0..samples {
        let x = sample_gaussian(p, &mut rng);
        acc += log_density(p, x) - log_density(t, x);
    }
    acc / samples as f64
}
