//! Turning activated clouds into fixed-size feature matrices.
//!
//! Each object is normalized once, then farthest-point sampled to the point
//! budget whenever its features are requested. Training draws a fresh FPS
//! start per epoch; evaluation seeds FPS from the object key alone, so every
//! feature mode sees the same points of a given object.

use crate::classifier::{ClassifierError, SampleSource};
use crate::geometry::{assemble_features_with, normalize_cloud, FeatureMatrix, FeatureMode, FeatureOptions, GeometryError};
use crate::gs_ply::GaussianCloud;
use crate::rng::{stable_hash, SeedStream};
use crate::sampling::{farthest_point_sample, gather};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingPolicy {
    /// A new FPS start for every epoch, derived from the run seed.
    PerEpoch { seed: u64 },
    /// The same points every time, derived from the object key.
    ObjectId,
}

#[derive(Debug, Clone)]
pub struct PreparedObject {
    /// Seeds point sampling. Objects with the same key get the same
    /// evaluation points when their positions agree.
    pub key: String,
    pub label: usize,
    /// Normalized into the unit ball.
    pub cloud: GaussianCloud,
}

/// Normalized objects plus the settings that turn them into features.
#[derive(Debug, Clone)]
pub struct CloudSet {
    pub objects: Vec<PreparedObject>,
    pub mode: FeatureMode,
    pub points: usize,
    pub options: FeatureOptions,
    pub policy: SamplingPolicy,
}

/// FPS seed used for evaluation and embedding.
pub fn object_seed(id: &str) -> u64 {
    stable_hash(&[b"eval", id.as_bytes()])
}

pub fn epoch_seed(seed: u64, epoch: usize, id: &str) -> u64 {
    SeedStream::new(seed)
        .derive("sample")
        .derive_index(epoch as u64)
        .derive(id)
        .seed()
}

/// Samples `points` anchors from an already normalized cloud and assembles
/// the requested channels.
pub fn sample_features(
    cloud: &GaussianCloud,
    mode: FeatureMode,
    points: usize,
    seed: u64,
    options: FeatureOptions,
) -> Result<FeatureMatrix, ClassifierError> {
    let idx = farthest_point_sample(cloud.positions(), points, seed)
        .map_err(|e| ClassifierError::Sample(e.to_string()))?;
    let sub = gather(cloud, &idx).map_err(|e| ClassifierError::Sample(e.to_string()))?;
    Ok(assemble_features_with(&sub, mode, options))
}

impl CloudSet {
    pub fn new(
        objects: impl IntoIterator<Item = (String, usize, GaussianCloud)>,
        mode: FeatureMode,
        points: usize,
        options: FeatureOptions,
        policy: SamplingPolicy,
    ) -> Result<Self, GeometryError> {
        let objects = objects
            .into_iter()
            .map(|(key, label, cloud)| {
                let (cloud, _) = normalize_cloud(&cloud)?;
                Ok(PreparedObject { key, label, cloud })
            })
            .collect::<Result<_, GeometryError>>()?;
        Ok(Self {
            objects,
            mode,
            points,
            options,
            policy,
        })
    }

    /// Same objects, different channels or sampling.
    pub fn with(&self, mode: FeatureMode, policy: SamplingPolicy) -> Self {
        Self {
            mode,
            policy,
            ..self.clone()
        }
    }

    pub fn labels(&self) -> Vec<usize> {
        self.objects.iter().map(|o| o.label).collect()
    }
}

impl SampleSource for CloudSet {
    fn len(&self) -> usize {
        self.objects.len()
    }

    fn label(&self, index: usize) -> usize {
        self.objects[index].label
    }

    fn id(&self, index: usize) -> String {
        self.objects[index].key.clone()
    }

    fn features(&self, index: usize, epoch: usize) -> Result<FeatureMatrix, ClassifierError> {
        let o = &self.objects[index];
        let seed = match self.policy {
            SamplingPolicy::PerEpoch { seed } => epoch_seed(seed, epoch, &o.key),
            SamplingPolicy::ObjectId => object_seed(&o.key),
        };
        sample_features(&o.cloud, self.mode, self.points, seed, self.options)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{synth_generate, SynthSpec};

    fn set(policy: SamplingPolicy, mode: FeatureMode) -> CloudSet {
        let data = synth_generate(&SynthSpec {
            anchors_per_object: 80,
            objects_per_class: 1,
            seed: 2,
            ..SynthSpec::default()
        })
        .unwrap();
        CloudSet::new(
            data.objects.into_iter().map(|o| (o.group(), o.class, o.cloud)),
            mode,
            32,
            FeatureOptions::default(),
            policy,
        )
        .unwrap()
    }

    #[test]
    fn evaluation_points_agree_across_modes() {
        let p = set(SamplingPolicy::ObjectId, FeatureMode::P);
        let posq = p.with(FeatureMode::Posq, SamplingPolicy::ObjectId);
        for i in 0..p.len() {
            let a = p.features(i, 0).unwrap();
            let b = posq.features(i, 5).unwrap();
            assert_eq!(a.rows(), 32);
            for r in 0..32 {
                assert_eq!(a.row(r), &b.row(r)[..3]);
            }
        }
    }

    #[test]
    fn training_resamples_per_epoch() {
        let s = set(SamplingPolicy::PerEpoch { seed: 1 }, FeatureMode::P);
        assert_eq!(s.features(0, 1).unwrap(), s.features(0, 1).unwrap());
        assert_ne!(s.features(0, 1).unwrap(), s.features(0, 2).unwrap());
    }

    #[test]
    fn positions_are_in_unit_ball() {
        let s = set(SamplingPolicy::ObjectId, FeatureMode::P);
        let f = s.features(3, 0).unwrap();
        for r in 0..f.rows() {
            let row = f.row(r);
            assert!(row.iter().map(|v| v * v).sum::<f64>() <= 1.0 + 1e-12);
        }
    }
}
