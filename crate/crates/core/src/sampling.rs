//! Fixed-size point subsets via farthest point sampling.

use rand::Rng as _;
use thiserror::Error;

use crate::gs_ply::GaussianCloud;
use crate::rng::SeedStream;

/// Points per object unless configured otherwise.
pub const DEFAULT_POINTS: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SamplingError {
    #[error("cannot sample from an empty point set")]
    EmptyInput,
    #[error("sample count must be at least one")]
    ZeroCount,
    #[error("index {index} out of range for a cloud of {len} points")]
    IndexOutOfRange { index: usize, len: usize },
}

impl SamplingError {
    pub fn code(&self) -> &'static str {
        match self {
            SamplingError::EmptyInput => "EmptyInput",
            SamplingError::ZeroCount => "ZeroCount",
            SamplingError::IndexOutOfRange { .. } => "IndexOutOfRange",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleIndices {
    indices: Vec<usize>,
    source_size: usize,
}

impl SampleIndices {
    pub fn new(indices: Vec<usize>, source_size: usize) -> Result<Self, SamplingError> {
        if let Some(&index) = indices.iter().find(|&&i| i >= source_size) {
            return Err(SamplingError::IndexOutOfRange {
                index,
                len: source_size,
            });
        }
        Ok(Self {
            indices,
            source_size,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn source_size(&self) -> usize {
        self.source_size
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Greedy farthest point sampling from a given first index. Requires
/// `1 <= m <= positions.len()` and `start < positions.len()`.
pub fn farthest_point_sample_from(positions: &[[f64; 3]], m: usize, start: usize) -> Vec<usize> {
    let n = positions.len();
    debug_assert!(m >= 1 && m <= n && start < n);
    let mut chosen = Vec::with_capacity(m);
    let mut min_d = vec![f64::INFINITY; n];
    let mut current = start;
    chosen.push(current);
    min_d[current] = f64::NEG_INFINITY;
    while chosen.len() < m {
        let anchor = positions[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in positions.iter().enumerate() {
            if min_d[i] == f64::NEG_INFINITY {
                continue;
            }
            let d = dist2(p, &anchor);
            if d < min_d[i] {
                min_d[i] = d;
            }
            // Strict comparison keeps the lowest index on ties.
            if min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        current = best;
        min_d[current] = f64::NEG_INFINITY;
        chosen.push(current);
    }
    chosen
}

/// FPS with a seeded random first point. For `m > N` every point is taken
/// once (in FPS order) and the remainder is drawn uniformly with
/// replacement.
pub fn farthest_point_sample(
    positions: &[[f64; 3]],
    m: usize,
    seed: u64,
) -> Result<SampleIndices, SamplingError> {
    let n = positions.len();
    if n == 0 {
        return Err(SamplingError::EmptyInput);
    }
    if m == 0 {
        return Err(SamplingError::ZeroCount);
    }
    let stream = SeedStream::new(seed);
    let start = stream.derive("fps-start").rng().random_range(0..n);
    let mut indices = farthest_point_sample_from(positions, m.min(n), start);
    if m > n {
        let mut rng = stream.derive("fps-pad").rng();
        indices.extend((n..m).map(|_| rng.random_range(0..n)));
    }
    SampleIndices::new(indices, n)
}

pub fn gather(cloud: &GaussianCloud, idx: &SampleIndices) -> Result<GaussianCloud, SamplingError> {
    if idx.source_size() != cloud.len() {
        if let Some(&index) = idx.indices().iter().find(|&&i| i >= cloud.len()) {
            return Err(SamplingError::IndexOutOfRange {
                index,
                len: cloud.len(),
            });
        }
    }
    if idx.is_empty() {
        return Err(SamplingError::ZeroCount);
    }
    Ok(cloud.gather_unchecked(idx.indices()))
}
