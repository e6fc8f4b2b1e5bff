//! Random splat clouds for property tests.

#![allow(dead_code)]

use gscls_core::gs_ply::{RawColumns, RawGaussianCloud};
use gscls_core::rng::{Rng, SeedStream};
use rand::Rng as _;

/// Payload widths: none, degree 1..3, and a non-standard multiple of 3.
pub const REST_WIDTHS: [usize; 5] = [0, 9, 24, 45, 6];

/// Any finite float32, including subnormals, negative zero and extremes.
pub fn any_finite_f32(rng: &mut Rng) -> f32 {
    loop {
        let v = f32::from_bits(rng.random());
        if v.is_finite() {
            return v;
        }
    }
}

/// Random raw cloud whose values cover the whole finite float32 range.
pub fn wild_raw_cloud(seed: u64, max_points: usize) -> RawGaussianCloud {
    let mut rng = SeedStream::new(seed).derive("wild").rng();
    let n = rng.random_range(1..=max_points);
    let w = REST_WIDTHS[rng.random_range(0..REST_WIDTHS.len())];
    let mut f = || any_finite_f32(&mut rng);
    let cols = RawColumns {
        positions: (0..n).map(|_| [f(), f(), f()]).collect(),
        normals: (0..n).map(|_| [f(), f(), f()]).collect(),
        color_dc: (0..n).map(|_| [f(), f(), f()]).collect(),
        color_rest: (0..n * w).map(|_| f()).collect(),
        rest_width: w,
        opacity_logit: (0..n).map(|_| f()).collect(),
        log_scale: (0..n).map(|_| [f(), f(), f()]).collect(),
        raw_rotation: (0..n).map(|_| [f(), f(), f(), f()]).collect(),
    };
    RawGaussianCloud::new(cols).expect("finite columns of equal length")
}

/// Random raw cloud with values a trained splat model would produce, so
/// activation succeeds.
pub fn plausible_raw_cloud(seed: u64, max_points: usize) -> RawGaussianCloud {
    let mut rng = SeedStream::new(seed).derive("plausible").rng();
    let n = rng.random_range(1..=max_points);
    let w = REST_WIDTHS[rng.random_range(0..REST_WIDTHS.len())];
    let mut u = |lo: f32, hi: f32| rng.random_range(lo..hi);
    let positions = (0..n).map(|_| [u(-5.0, 5.0), u(-5.0, 5.0), u(-5.0, 5.0)]).collect();
    let normals = (0..n).map(|_| [0.0; 3]).collect();
    let color_dc = (0..n).map(|_| [u(-2.0, 2.0), u(-2.0, 2.0), u(-2.0, 2.0)]).collect();
    let color_rest = (0..n * w).map(|_| u(-0.5, 0.5)).collect();
    let opacity_logit = (0..n).map(|_| u(-8.0, 8.0)).collect();
    let log_scale = (0..n).map(|_| [u(-8.0, 1.0), u(-8.0, 1.0), u(-8.0, 1.0)]).collect();
    let raw_rotation = (0..n)
        .map(|_| loop {
            let q = [u(-1.0, 1.0), u(-1.0, 1.0), u(-1.0, 1.0), u(-1.0, 1.0)];
            if q.iter().map(|c| c * c).sum::<f32>() > 1e-3 {
                break q;
            }
        })
        .collect();
    let cols = RawColumns {
        positions,
        normals,
        color_dc,
        color_rest,
        rest_width: w,
        opacity_logit,
        log_scale,
        raw_rotation,
    };
    RawGaussianCloud::new(cols).expect("valid columns")
}
