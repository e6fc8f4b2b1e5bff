//! Canonical framing of splat clouds and per-point input features.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gs_ply::{GaussianCloud, PlyError};
use crate::quat::{norm3, Quat};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("all points coincide; the cloud has no extent")]
    ZeroRadius,
    #[error("quaternion norm {0} is not within 1e-6 of one")]
    NonUnitQuaternion(f64),
    #[error("unknown feature mode `{0}` (expected p, po, psq or posq)")]
    UnknownMode(String),
    #[error(transparent)]
    Cloud(#[from] PlyError),
}

impl GeometryError {
    pub fn code(&self) -> &'static str {
        match self {
            GeometryError::ZeroRadius => "ZeroRadius",
            GeometryError::NonUnitQuaternion(_) => "NonUnitQuaternion",
            GeometryError::UnknownMode(_) => "UnknownMode",
            GeometryError::Cloud(e) => e.code(),
        }
    }
}

/// Which per-point channels are fed to the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// Position only.
    P,
    /// Position and opacity.
    Po,
    /// Position, scale and rotation.
    Psq,
    /// Position, opacity, scale and rotation.
    Posq,
}

impl FeatureMode {
    pub const ALL: [FeatureMode; 4] = [
        FeatureMode::P,
        FeatureMode::Po,
        FeatureMode::Psq,
        FeatureMode::Posq,
    ];

    pub fn channels(self) -> usize {
        3 + usize::from(self.has_opacity()) + if self.has_shape() { 7 } else { 0 }
    }

    pub fn has_opacity(self) -> bool {
        matches!(self, FeatureMode::Po | FeatureMode::Posq)
    }

    pub fn has_shape(self) -> bool {
        matches!(self, FeatureMode::Psq | FeatureMode::Posq)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::P => "p",
            FeatureMode::Po => "po",
            FeatureMode::Psq => "psq",
            FeatureMode::Posq => "posq",
        }
    }

    pub fn from_channels(channels: usize) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.channels() == channels)
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureMode {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| GeometryError::UnknownMode(s.to_string()))
    }
}

/// Translation and uniform scale applied by [`normalize_cloud`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub centroid: [f64; 3],
    pub radius: f64,
}

impl NormalizationRecord {
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        [
            (p[0] - self.centroid[0]) / self.radius,
            (p[1] - self.centroid[1]) / self.radius,
            (p[2] - self.centroid[2]) / self.radius,
        ]
    }

    pub fn invert(&self, p: [f64; 3]) -> [f64; 3] {
        [
            p[0] * self.radius + self.centroid[0],
            p[1] * self.radius + self.centroid[1],
            p[2] * self.radius + self.centroid[2],
        ]
    }
}

/// Centers the cloud and scales it into the unit ball. Ellipsoid scales
/// shrink by the same factor; opacity and rotation are untouched.
pub fn normalize_cloud(
    cloud: &GaussianCloud,
) -> Result<(GaussianCloud, NormalizationRecord), GeometryError> {
    let n = cloud.len() as f64;
    let mut centroid = [0.0; 3];
    for p in cloud.positions() {
        for k in 0..3 {
            centroid[k] += p[k];
        }
    }
    centroid = centroid.map(|c| c / n);
    let radius = cloud
        .positions()
        .iter()
        .map(|p| norm3([p[0] - centroid[0], p[1] - centroid[1], p[2] - centroid[2]]))
        .fold(0.0, f64::max);
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(GeometryError::ZeroRadius);
    }
    let record = NormalizationRecord { centroid, radius };
    let positions = cloud.positions().iter().map(|&p| record.apply(p)).collect();
    let scale = cloud
        .scale()
        .iter()
        .map(|s| s.map(|c| c / radius))
        .collect();
    Ok((cloud.with_geometry(positions, scale)?, record))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureOptions {
    /// Feed `ln(scale)` instead of linear scale. Off by default.
    pub log_scale: bool,
}

/// `N × C` per-point inputs, row-major, channels ordered
/// `[x y z | o | sx sy sz q1 q2 q3 q4]` with absent blocks omitted.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    rows: usize,
    mode: FeatureMode,
}

impl FeatureMatrix {
    /// Panics if `data.len() != rows * mode.channels()`.
    pub fn from_rows(data: Vec<f64>, rows: usize, mode: FeatureMode) -> Self {
        assert_eq!(data.len(), rows * mode.channels(), "feature matrix shape");
        Self { data, rows, mode }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn channels(&self) -> usize {
        self.mode.channels()
    }

    pub fn mode(&self) -> FeatureMode {
        self.mode
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.channels();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i)[j]).collect()
    }

    /// Rows reordered (or repeated) by `order`.
    pub fn select_rows(&self, order: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(order.len() * self.channels());
        for &i in order {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix::from_rows(data, order.len(), self.mode)
    }
}

pub fn assemble_features(cloud: &GaussianCloud, mode: FeatureMode) -> FeatureMatrix {
    assemble_features_with(cloud, mode, FeatureOptions::default())
}

pub fn assemble_features_with(
    cloud: &GaussianCloud,
    mode: FeatureMode,
    options: FeatureOptions,
) -> FeatureMatrix {
    let n = cloud.len();
    let mut data = Vec::with_capacity(n * mode.channels());
    for i in 0..n {
        data.extend_from_slice(&cloud.positions()[i]);
        if mode.has_opacity() {
            data.push(cloud.opacity()[i]);
        }
        if mode.has_shape() {
            let s = cloud.scale()[i];
            if options.log_scale {
                data.extend(s.iter().map(|c| c.ln()));
            } else {
                data.extend_from_slice(&s);
            }
            data.extend_from_slice(&cloud.rotation()[i].components());
        }
    }
    FeatureMatrix::from_rows(data, n, mode)
}

pub const HISTOGRAM_BINS: usize = 32;
/// Upper edge of the log-spaced histogram range `[1, HISTOGRAM_MAX]`.
/// Ratios beyond it land in the last bin.
pub const HISTOGRAM_MAX: f64 = 100.0;

/// Per-ellipsoid shape ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceDescriptor {
    /// `s_max / s_mid`; large for slender, wire-like splats.
    pub elongation: Vec<f64>,
    /// `s_mid / s_min`; large for flat, surface-like splats.
    pub flatness: Vec<f64>,
    pub elongation_histogram: Vec<u64>,
    pub flatness_histogram: Vec<u64>,
}

impl SurfaceDescriptor {
    pub fn median_elongation(&self) -> f64 {
        median(&self.elongation)
    }

    pub fn median_flatness(&self) -> f64 {
        median(&self.flatness)
    }

    /// Lower edges of the histogram bins.
    pub fn bin_edges() -> Vec<f64> {
        (0..=HISTOGRAM_BINS)
            .map(|i| HISTOGRAM_MAX.powf(i as f64 / HISTOGRAM_BINS as f64))
            .collect()
    }
}

pub(crate) fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

fn log_bin(ratio: f64) -> usize {
    let t = ratio.ln() / HISTOGRAM_MAX.ln() * HISTOGRAM_BINS as f64;
    if t.is_nan() || t < 0.0 {
        0
    } else {
        (t as usize).min(HISTOGRAM_BINS - 1)
    }
}

pub fn anisotropy_stats(cloud: &GaussianCloud) -> SurfaceDescriptor {
    let mut elongation = Vec::with_capacity(cloud.len());
    let mut flatness = Vec::with_capacity(cloud.len());
    let mut elongation_histogram = vec![0u64; HISTOGRAM_BINS];
    let mut flatness_histogram = vec![0u64; HISTOGRAM_BINS];
    for s in cloud.scale() {
        let mut sorted = *s;
        sorted.sort_by(|a, b| b.total_cmp(a));
        let [s_max, s_mid, s_min] = sorted;
        let e = s_max / s_mid;
        let f = s_mid / s_min;
        elongation_histogram[log_bin(e)] += 1;
        flatness_histogram[log_bin(f)] += 1;
        elongation.push(e);
        flatness.push(f);
    }
    SurfaceDescriptor {
        elongation,
        flatness,
        elongation_histogram,
        flatness_histogram,
    }
}

/// Rotates `v` by the unit quaternion `q`.
pub fn quat_rotate(q: Quat, v: [f64; 3]) -> Result<[f64; 3], GeometryError> {
    const UNIT_TOLERANCE: f64 = 1e-6;
    let n = q.norm();
    if (n - 1.0).abs() > UNIT_TOLERANCE || !n.is_finite() {
        return Err(GeometryError::NonUnitQuaternion(n));
    }
    Ok(q.rotate(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gs_ply::ColorPayload;

    fn cloud(points: &[[f64; 3]], scale: [f64; 3]) -> GaussianCloud {
        let n = points.len();
        GaussianCloud::new(
            points.to_vec(),
            vec![0.5; n],
            vec![scale; n],
            vec![Quat::IDENTITY; n],
            ColorPayload::zeros(n),
        )
        .unwrap()
    }

    #[test]
    fn normalization_examples() {
        let c = cloud(&[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]], [0.1; 3]);
        let (n, rec) = normalize_cloud(&c).unwrap();
        assert_eq!(n.positions(), c.positions());
        assert_eq!(rec.centroid, [0.0; 3]);
        assert_eq!(rec.radius, 1.0);

        let c = cloud(&[[2.0, 2.0, 2.0], [4.0, 2.0, 2.0]], [0.2; 3]);
        let (n, rec) = normalize_cloud(&c).unwrap();
        assert_eq!(rec.centroid, [3.0, 2.0, 2.0]);
        assert_eq!(rec.radius, 1.0);
        assert_eq!(n.scale()[0], [0.2; 3]);
        assert_eq!(n.positions(), &[[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    }

    #[test]
    fn coincident_points_have_zero_radius() {
        let c = cloud(&[[1.0, 1.0, 1.0]; 4], [0.1; 3]);
        assert_eq!(normalize_cloud(&c).unwrap_err(), GeometryError::ZeroRadius);
    }

    #[test]
    fn channel_counts() {
        assert_eq!(FeatureMode::P.channels(), 3);
        assert_eq!(FeatureMode::Po.channels(), 4);
        assert_eq!(FeatureMode::Psq.channels(), 10);
        assert_eq!(FeatureMode::Posq.channels(), 11);
        assert_eq!("psq".parse::<FeatureMode>().unwrap(), FeatureMode::Psq);
        assert!("xyz".parse::<FeatureMode>().is_err());
    }

    #[test]
    fn single_point_posq_row() {
        let c = cloud(&[[0.0; 3]], [1.0; 3]);
        let f = assemble_features(&c, FeatureMode::Posq);
        assert_eq!(f.row(0), &[0.0, 0.0, 0.0, 0.5, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        let f = assemble_features_with(&c, FeatureMode::Psq, FeatureOptions { log_scale: true });
        assert_eq!(&f.row(0)[3..6], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn anisotropy_examples() {
        let sphere = anisotropy_stats(&cloud(&[[0.0; 3]], [0.1, 0.1, 0.1]));
        assert_eq!((sphere.elongation[0], sphere.flatness[0]), (1.0, 1.0));
        let slender = anisotropy_stats(&cloud(&[[0.0; 3]], [0.12, 0.008, 0.008]));
        assert!((slender.elongation[0] - 15.0).abs() < 1e-12);
        assert_eq!(slender.flatness[0], 1.0);
        let flat = anisotropy_stats(&cloud(&[[0.0; 3]], [0.15, 0.15, 0.01]));
        assert_eq!(flat.elongation[0], 1.0);
        assert!((flat.flatness[0] - 15.0).abs() < 1e-12);
        assert_eq!(flat.flatness_histogram.iter().sum::<u64>(), 1);
        assert_eq!(flat.flatness_histogram[log_bin(15.0)], 1);
        assert_eq!(flat.elongation_histogram[0], 1);
    }

    #[test]
    fn quat_rotate_examples() {
        assert_eq!(quat_rotate(Quat::IDENTITY, [1.0, 2.0, 3.0]).unwrap(), [1.0, 2.0, 3.0]);
        let r = quat_rotate(Quat::new(0.0, 0.0, 0.0, 1.0), [1.0, 0.0, 0.0]).unwrap();
        assert!((r[0] + 1.0).abs() < 1e-15 && r[1].abs() < 1e-15 && r[2].abs() < 1e-15);
        assert!(matches!(
            quat_rotate(Quat::new(2.0, 0.0, 0.0, 0.0), [1.0, 0.0, 0.0]),
            Err(GeometryError::NonUnitQuaternion(_))
        ));
    }
}
