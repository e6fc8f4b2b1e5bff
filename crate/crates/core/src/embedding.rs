//! PCA and exact t-SNE for visualizing global features, plus the
//! silhouette score used to quantify class separation in an embedding.

use std::io;

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SeedStream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("data has zero variance")]
    DegenerateData,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("t-SNE needs at least 10 points, got {0}")]
    TooFewPoints(usize),
    #[error("perplexity {perplexity} must be below (n - 1) / 3 = {max}")]
    PerplexityTooLarge { perplexity: f64, max: f64 },
    #[error("no bandwidth for row {row} reaches perplexity {target} (closest {reached})")]
    PerplexityInfeasible { row: usize, target: f64, reached: f64 },
    #[error("malformed embedding CSV: {0}")]
    MalformedCsv(String),
}

impl EmbeddingError {
    pub fn code(&self) -> &'static str {
        match self {
            EmbeddingError::DegenerateData => "DegenerateData",
            EmbeddingError::InvalidInput(_) => "InvalidInput",
            EmbeddingError::TooFewPoints(_) => "TooFewPoints",
            EmbeddingError::PerplexityTooLarge { .. } => "PerplexityTooLarge",
            EmbeddingError::PerplexityInfeasible { .. } => "PerplexityInfeasible",
            EmbeddingError::MalformedCsv(_) => "MalformedCsv",
        }
    }
}

fn check_rows(x: &[Vec<f64>]) -> Result<usize, EmbeddingError> {
    let d = x.first().map_or(0, Vec::len);
    if d == 0 {
        return Err(EmbeddingError::InvalidInput("no rows or no columns".into()));
    }
    if x.iter().any(|r| r.len() != d) {
        return Err(EmbeddingError::InvalidInput("rows differ in length".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(EmbeddingError::InvalidInput("non-finite value".into()));
    }
    Ok(d)
}

/// Principal axes of a data set, largest variance first.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `out_dims` unit vectors of length `d`. Each is signed so its
    /// largest-magnitude entry is positive (first such entry on ties).
    pub components: Vec<Vec<f64>>,
    /// Variance along each component (population normalization).
    pub explained_variance: Vec<f64>,
    /// Eigenvalues of the full covariance, descending.
    pub spectrum: Vec<f64>,
}

impl Pca {
    pub fn fit(x: &[Vec<f64>], out_dims: usize) -> Result<Self, EmbeddingError> {
        let d = check_rows(x)?;
        let n = x.len();
        if out_dims == 0 || out_dims > d || n <= out_dims {
            return Err(EmbeddingError::InvalidInput(format!(
                "cannot take {out_dims} components of {n} points in {d} dimensions"
            )));
        }
        let mut mean = vec![0.0; d];
        for row in x {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let centered = DMatrix::from_fn(n, d, |i, j| x[i][j] - mean[j]);
        let cov = (centered.transpose() * &centered) / n as f64;
        if cov.trace() <= 0.0 {
            return Err(EmbeddingError::DegenerateData);
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let spectrum: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        let components = order[..out_dims]
            .iter()
            .map(|&i| {
                let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
                let mut pivot = 0;
                for (j, c) in v.iter().enumerate() {
                    if c.abs() > v[pivot].abs() {
                        pivot = j;
                    }
                }
                if v[pivot] < 0.0 {
                    v.iter_mut().for_each(|c| *c = -*c);
                }
                v
            })
            .collect();
        Ok(Self {
            mean,
            components,
            explained_variance: spectrum[..out_dims].to_vec(),
            spectrum,
        })
    }

    pub fn transform(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        x.iter()
            .map(|row| {
                self.components
                    .iter()
                    .map(|c| c.iter().zip(row).zip(&self.mean).map(|((a, v), m)| a * (v - m)).sum())
                    .collect()
            })
            .collect()
    }

    pub fn inverse_transform(&self, y: &[Vec<f64>]) -> Vec<Vec<f64>> {
        y.iter()
            .map(|coords| {
                let mut row = self.mean.clone();
                for (c, &t) in self.components.iter().zip(coords) {
                    for (r, a) in row.iter_mut().zip(c) {
                        *r += t * a;
                    }
                }
                row
            })
            .collect()
    }
}

/// Projects onto the top `out_dims` principal components.
pub fn pca(x: &[Vec<f64>], out_dims: usize) -> Result<Vec<Vec<f64>>, EmbeddingError> {
    Ok(Pca::fit(x, out_dims)?.transform(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    /// Seeds a random start when the PCA start is degenerate.
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            learning_rate: 200.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    pub embedding: Vec<[f64; 2]>,
    /// KL(P‖Q) before each iteration and after the last (length
    /// `iterations + 1`), always against the unexaggerated P.
    pub kl_trace: Vec<f64>,
    /// Realized perplexity of every conditional row.
    pub row_perplexity: Vec<f64>,
}

pub const BETA_MIN: f64 = 1e-20;
pub const BETA_MAX: f64 = 1e20;
pub const MAX_BISECTIONS: usize = 64;
pub const PERPLEXITY_TOLERANCE: f64 = 1e-3;

pub fn squared_distances(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    d.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
        for (j, out) in row.iter_mut().enumerate() {
            if i != j {
                *out = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            }
        }
    });
    d
}

/// Gaussian row kernel at precision `beta`; returns (probabilities,
/// perplexity). Distances are shifted by the row minimum before
/// exponentiating, which cancels in the normalization.
fn row_kernel(dist: &[f64], skip: usize, beta: f64) -> (Vec<f64>, f64) {
    let dmin = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != skip)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = dist
        .iter()
        .enumerate()
        .map(|(j, &v)| if j == skip { 0.0 } else { (-beta * (v - dmin)).exp() })
        .collect();
    let sum: f64 = p.iter().sum();
    let mut weighted = 0.0;
    for (j, v) in p.iter_mut().enumerate() {
        *v /= sum;
        if j != skip {
            weighted += *v * (dist[j] - dmin);
        }
    }
    let entropy = sum.ln() + beta * weighted;
    (p, entropy.exp())
}

/// Row-conditional affinities `p_{j|i}` (row-major `n × n`) with each
/// row's bandwidth bisected in log space to match `perplexity`.
pub fn conditional_affinities(
    dist2: &[f64],
    n: usize,
    perplexity: f64,
) -> Result<(Vec<f64>, Vec<f64>), EmbeddingError> {
    if n < 2 || dist2.len() != n * n {
        return Err(EmbeddingError::InvalidInput("distance matrix must be n × n with n ≥ 2".into()));
    }
    if !(perplexity >= 1.0 && perplexity.is_finite()) {
        return Err(EmbeddingError::InvalidInput(format!("perplexity {perplexity}")));
    }
    let rows: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let dist = &dist2[i * n..(i + 1) * n];
            let (mut lo, mut hi) = (BETA_MIN.ln(), BETA_MAX.ln());
            let mut best: Option<(Vec<f64>, f64)> = None;
            for _ in 0..MAX_BISECTIONS {
                let mid = 0.5 * (lo + hi);
                let (p, perp) = row_kernel(dist, i, mid.exp());
                let closer = best
                    .as_ref()
                    .map_or(true, |(_, b)| (perp - perplexity).abs() < (b - perplexity).abs());
                if closer {
                    best = Some((p, perp));
                }
                let (_, b) = best.as_ref().expect("set above");
                if (b - perplexity).abs() < 1e-6 {
                    break;
                }
                // Perplexity falls as the precision rises.
                if perp > perplexity {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let (p, perp) = best.expect("at least one bisection step");
            if (perp - perplexity).abs() >= PERPLEXITY_TOLERANCE {
                return Err(EmbeddingError::PerplexityInfeasible {
                    row: i,
                    target: perplexity,
                    reached: perp,
                });
            }
            Ok((p, perp))
        })
        .collect::<Result<_, _>>()?;
    let mut p = Vec::with_capacity(n * n);
    let mut perps = Vec::with_capacity(n);
    for (row, perp) in rows {
        p.extend(row);
        perps.push(perp);
    }
    Ok((p, perps))
}

/// `P = (P_cond + P_condᵀ) / 2n`: symmetric, zero diagonal, sums to one.
pub fn joint_affinities(conditional: &[f64], n: usize) -> Vec<f64> {
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (conditional[i * n + j] + conditional[j * n + i]) / (2.0 * n as f64);
        }
    }
    p
}

/// Student-t kernel numerators `1 / (1 + |y_i − y_j|²)` and their sum.
fn student_kernel(y: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = v;
                total += v;
            }
        }
    }
    (num, total)
}

const KL_FLOOR: f64 = 1e-12;

fn kl_divergence(p: &[f64], num: &[f64], total: f64) -> f64 {
    p.iter()
        .zip(num)
        .filter(|(&pv, _)| pv > 0.0)
        .map(|(&pv, &qv)| pv * (pv / (qv / total).max(KL_FLOOR)).ln())
        .sum()
}

fn recenter(y: &mut [[f64; 2]]) {
    let n = y.len() as f64;
    for k in 0..2 {
        let mean = y.iter().map(|p| p[k]).sum::<f64>() / n;
        y.iter_mut().for_each(|p| p[k] -= mean);
    }
}

/// Exact t-SNE to two dimensions.
pub fn tsne(x: &[Vec<f64>], config: &TsneConfig) -> Result<TsneResult, EmbeddingError> {
    check_rows(x)?;
    let n = x.len();
    if n < 10 {
        return Err(EmbeddingError::TooFewPoints(n));
    }
    let max = (n as f64 - 1.0) / 3.0;
    if !(config.perplexity < max) {
        return Err(EmbeddingError::PerplexityTooLarge {
            perplexity: config.perplexity,
            max,
        });
    }
    if config.iterations < config.exaggeration_iterations || config.exaggeration_iterations == 0 {
        return Err(EmbeddingError::InvalidInput(
            "iterations must cover the exaggeration phase".into(),
        ));
    }
    let (cond, row_perplexity) = conditional_affinities(&squared_distances(x), n, config.perplexity)?;
    let p = joint_affinities(&cond, n);

    let mut y = initial_layout(x, config.seed)?;
    let mut update = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut kl_trace = Vec::with_capacity(config.iterations + 1);
    for iter in 0..config.iterations {
        let (num, total) = student_kernel(&y);
        kl_trace.push(kl_divergence(&p, &num, total));
        let (exaggeration, momentum) = if iter < config.exaggeration_iterations {
            (config.early_exaggeration, config.initial_momentum)
        } else {
            (1.0, config.final_momentum)
        };
        let grads: Vec<[f64; 2]> = (0..n)
            .map(|i| {
                let mut g = [0.0; 2];
                for j in 0..n {
                    let w = (exaggeration * p[i * n + j] - num[i * n + j] / total) * num[i * n + j];
                    g[0] += w * (y[i][0] - y[j][0]);
                    g[1] += w * (y[i][1] - y[j][1]);
                }
                [4.0 * g[0], 4.0 * g[1]]
            })
            .collect();
        for i in 0..n {
            for k in 0..2 {
                let same_sign = (grads[i][k] > 0.0) == (update[i][k] > 0.0);
                gains[i][k] = if same_sign { gains[i][k] * 0.8 } else { gains[i][k] + 0.2 };
                gains[i][k] = gains[i][k].max(0.01);
                update[i][k] = momentum * update[i][k] - config.learning_rate * gains[i][k] * grads[i][k];
                y[i][k] += update[i][k];
            }
        }
        recenter(&mut y);
    }
    let (num, total) = student_kernel(&y);
    kl_trace.push(kl_divergence(&p, &num, total));
    Ok(TsneResult {
        embedding: y,
        kl_trace,
        row_perplexity,
    })
}

const INIT_STD: f64 = 1e-4;

/// First two principal components, scaled so the first has standard
/// deviation 1e-4. Falls back to a seeded Gaussian start when the data has
/// fewer than two directions of variance.
fn initial_layout(x: &[Vec<f64>], seed: u64) -> Result<Vec<[f64; 2]>, EmbeddingError> {
    let n = x.len();
    let projected = if x[0].len() >= 2 {
        Pca::fit(x, 2).ok().filter(|p| p.explained_variance[1] > 0.0).map(|p| p.transform(x))
    } else {
        None
    };
    let mut y: Vec<[f64; 2]> = match projected {
        Some(rows) => {
            let std = (rows.iter().map(|r| r[0] * r[0]).sum::<f64>() / n as f64).sqrt();
            rows.iter().map(|r| [r[0] / std * INIT_STD, r[1] / std * INIT_STD]).collect()
        }
        None => {
            let normal = Normal::new(0.0, INIT_STD).expect("positive std");
            let mut rng = SeedStream::new(seed).derive("tsne-init").rng();
            (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect()
        }
    };
    if y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(EmbeddingError::DegenerateData);
    }
    recenter(&mut y);
    Ok(y)
}

/// Mean silhouette over all points (Euclidean). Points alone in their
/// cluster score 0.
pub fn silhouette_score(points: &[Vec<f64>], labels: &[usize]) -> Result<f64, EmbeddingError> {
    check_rows(points)?;
    if labels.len() != points.len() {
        return Err(EmbeddingError::InvalidInput("one label per point required".into()));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let sizes = {
        let mut s = vec![0usize; k];
        labels.iter().for_each(|&l| s[l] += 1);
        s
    };
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(EmbeddingError::InvalidInput("at least two clusters required".into()));
    }
    let n = points.len();
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            if sizes[labels[i]] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for j in 0..n {
                if j != i {
                    let d: f64 = points[i]
                        .iter()
                        .zip(&points[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    sums[labels[j]] += d;
                }
            }
            let own = labels[i];
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m == 0.0 {
                0.0
            } else {
                (b - a) / m
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / n as f64)
}

/// One embedded point as written to and read from CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub x: f64,
    pub y: f64,
    pub label: usize,
    pub class: String,
}

/// CSV with header `x,y,label,class`.
pub fn write_embedding_csv(rows: &[EmbeddingRow]) -> Result<String, EmbeddingError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        if !(r.x.is_finite() && r.y.is_finite()) {
            return Err(EmbeddingError::InvalidInput("non-finite coordinate".into()));
        }
        w.serialize(r).map_err(|e| EmbeddingError::MalformedCsv(e.to_string()))?;
    }
    if rows.is_empty() {
        w.write_record(["x", "y", "label", "class"])
            .map_err(|e| EmbeddingError::MalformedCsv(e.to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| EmbeddingError::MalformedCsv(io::Error::from(e.into_error()).to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits UTF-8"))
}

pub fn read_embedding_csv(text: &str) -> Result<Vec<EmbeddingRow>, EmbeddingError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| EmbeddingError::MalformedCsv(e.to_string()))?;
    if headers != vec!["x", "y", "label", "class"] {
        return Err(EmbeddingError::MalformedCsv("expected header x,y,label,class".into()));
    }
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        let row: EmbeddingRow = rec.map_err(|e| EmbeddingError::MalformedCsv(e.to_string()))?;
        if !(row.x.is_finite() && row.y.is_finite()) {
            return Err(EmbeddingError::MalformedCsv("non-finite coordinate".into()));
        }
        rows.push(row);
    }
    Ok(rows)
}
