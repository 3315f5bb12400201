//! Diagonalized two-covariance PLDA for probabilistic embeddings.
//!
//! After joint diagonalization the speaker variable is `y ~ N(0, I)` and the
//! hidden embedding is `x | y ~ N(y, diag(1/w))`. A segment contributes the
//! Gaussian likelihood `exp(-½ xᵀBx + xᵀB xhat)` with diagonal `B = prec`.
//! Integrating out `x` leaves, per dimension, a weight
//! `e = w b / (w + b)` on the evidence `xhat`, and a cluster is scored from
//! the pooled sums of `e·xhat` and `e`.

use std::ops::{Add, AddAssign};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::partitions::PartitionTables;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbEmbedding {
    xhat: Vec<f64>,
    prec: Vec<f64>,
}

impl ProbEmbedding {
    pub fn new(xhat: Vec<f64>, prec: Vec<f64>) -> Result<Self> {
        if xhat.len() != prec.len() {
            return Err(Error::Shape(format!(
                "xhat has {} dims, prec has {}",
                xhat.len(),
                prec.len()
            )));
        }
        if xhat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("xhat must be finite".into()));
        }
        if prec.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Domain("precisions must be finite and >= 0".into()));
        }
        Ok(ProbEmbedding { xhat, prec })
    }

    /// An embedding whose precisions are all `prec`.
    pub fn with_uniform_precision(xhat: Vec<f64>, prec: f64) -> Result<Self> {
        let p = vec![prec; xhat.len()];
        Self::new(xhat, p)
    }

    pub fn xhat(&self) -> &[f64] {
        &self.xhat
    }

    pub fn prec(&self) -> &[f64] {
        &self.prec
    }

    pub fn dim(&self) -> usize {
        self.xhat.len()
    }
}

/// Within-speaker diagonal precision of the diagonalized model.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagPlda {
    w: Vec<f64>,
}

impl DiagPlda {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::Shape("PLDA needs at least one dimension".into()));
        }
        if w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Domain(
                "within-speaker precisions must be finite and > 0".into(),
            ));
        }
        Ok(DiagPlda { w })
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.w.len() {
            return Err(Error::Shape(format!(
                "embedding has {d} dims, PLDA has {}",
                self.w.len()
            )));
        }
        Ok(())
    }
}

/// Between- and within-speaker covariances of an untransformed
/// two-covariance model.
#[derive(Debug, Clone, PartialEq)]
pub struct FullPlda {
    between_cov: DMatrix<f64>,
    within_cov: DMatrix<f64>,
}

fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Shape(format!("{what} is not square")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("{what} has non-finite entries")));
    }
    let asym = (m - m.transpose()).amax();
    if asym > 1e-12 * m.amax().max(1.0) {
        return Err(Error::Domain(format!(
            "{what} is not symmetric (max asymmetry {asym:e})"
        )));
    }
    Ok(())
}

impl FullPlda {
    pub fn new(between_cov: DMatrix<f64>, within_cov: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&between_cov, "between-speaker covariance")?;
        check_symmetric(&within_cov, "within-speaker covariance")?;
        if between_cov.shape() != within_cov.shape() {
            return Err(Error::Shape("covariances differ in size".into()));
        }
        if within_cov.clone().cholesky().is_none() {
            return Err(Error::Domain(
                "within-speaker covariance is not positive definite".into(),
            ));
        }
        Ok(FullPlda {
            between_cov,
            within_cov,
        })
    }

    pub fn between_cov(&self) -> &DMatrix<f64> {
        &self.between_cov
    }

    pub fn within_cov(&self) -> &DMatrix<f64> {
        &self.within_cov
    }

    pub fn dim(&self) -> usize {
        self.between_cov.nrows()
    }
}

/// Finds `T` with `T Σ_b Tᵀ = I` and `T Σ_w Tᵀ` diagonal.
///
/// Rows are ordered by decreasing `w` (largest speaker-to-channel variance
/// ratio first) and each row's largest-magnitude entry is positive.
pub fn joint_diagonalize(model: &FullPlda) -> Result<(DMatrix<f64>, DiagPlda)> {
    let dim = model.dim();
    let chol = model.between_cov.clone().cholesky().ok_or_else(|| {
        Error::Decomposition("between-speaker covariance is not full rank".into())
    })?;
    let l = chol.l();
    let diag_min = l.diagonal().min();
    let diag_max = l.diagonal().max();
    if diag_min <= 1e-10 * diag_max {
        return Err(Error::Decomposition(
            "between-speaker covariance is numerically rank deficient".into(),
        ));
    }
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Decomposition("Cholesky factor not invertible".into()))?;
    let mut m = &l_inv * &model.within_cov * l_inv.transpose();
    m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let mut transform = DMatrix::zeros(dim, dim);
    let mut w = Vec::with_capacity(dim);
    for (row, &k) in order.iter().enumerate() {
        let lambda = eig.eigenvalues[k];
        if !(lambda > 0.0) {
            return Err(Error::Decomposition(
                "within-speaker covariance not positive in the whitened space".into(),
            ));
        }
        let u = eig.eigenvectors.column(k);
        let mut r = u.transpose() * &l_inv;
        let (imax, _) = r
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
        if r[imax] < 0.0 {
            r = -r;
        }
        transform.set_row(row, &r);
        w.push(1.0 / lambda);
    }
    Ok((transform, DiagPlda::new(w)?))
}

/// Keeps the first `k` rows of a diagonalizing transform (the dimensions with
/// the largest `w`).
pub fn keep_top(transform: &DMatrix<f64>, plda: &DiagPlda, k: usize) -> Result<(DMatrix<f64>, DiagPlda)> {
    if k == 0 || k > plda.dim() {
        return Err(Error::Size(format!(
            "keep_top needs 1 <= k <= {}, got {k}",
            plda.dim()
        )));
    }
    Ok((
        transform.rows(0, k).into_owned(),
        DiagPlda::new(plda.w[..k].to_vec())?,
    ))
}

/// `w b / (w + b)`: 0 at `b = 0`, saturating at `w` as `b` grows.
#[inline]
pub fn weight(w: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        w / (1.0 + w / b)
    }
}

/// Per-dimension evidence weights of one segment.
pub fn segment_weight(plda: &DiagPlda, prec: &[f64]) -> Vec<f64> {
    plda.w.iter().zip(prec).map(|(&w, &b)| weight(w, b)).collect()
}

/// Pooled statistics of a cluster: `a_bar = Σ e·xhat`, `b_bar = Σ e`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterStats {
    pub a_bar: Vec<f64>,
    pub b_bar: Vec<f64>,
    pub count: usize,
}

impl ClusterStats {
    pub fn zeros(dim: usize) -> Self {
        ClusterStats {
            a_bar: vec![0.0; dim],
            b_bar: vec![0.0; dim],
            count: 0,
        }
    }

    /// Statistics of one segment, multiplied by `scale`.
    pub fn segment(emb: &ProbEmbedding, plda: &DiagPlda, scale: f64) -> Result<Self> {
        plda.check_dim(emb.dim())?;
        let e = segment_weight(plda, &emb.prec);
        Ok(ClusterStats {
            a_bar: e.iter().zip(&emb.xhat).map(|(e, x)| scale * e * x).collect(),
            b_bar: e.iter().map(|e| scale * e).collect(),
            count: 1,
        })
    }

    /// Statistics of a fixed embedding plugged into PLDA (`e = w`).
    pub fn plugin(xhat: &[f64], plda: &DiagPlda, scale: f64) -> Result<Self> {
        plda.check_dim(xhat.len())?;
        Ok(ClusterStats {
            a_bar: plda.w.iter().zip(xhat).map(|(w, x)| scale * w * x).collect(),
            b_bar: plda.w.iter().map(|w| scale * w).collect(),
            count: 1,
        })
    }

    pub fn dim(&self) -> usize {
        self.a_bar.len()
    }

    pub fn merge(&mut self, other: &ClusterStats) {
        debug_assert_eq!(self.dim(), other.dim());
        for (a, o) in self.a_bar.iter_mut().zip(&other.a_bar) {
            *a += o;
        }
        for (b, o) in self.b_bar.iter_mut().zip(&other.b_bar) {
            *b += o;
        }
        self.count += other.count;
    }
}

impl AddAssign<&ClusterStats> for ClusterStats {
    fn add_assign(&mut self, rhs: &ClusterStats) {
        self.merge(rhs);
    }
}

impl Add<&ClusterStats> for &ClusterStats {
    type Output = ClusterStats;

    fn add(self, rhs: &ClusterStats) -> ClusterStats {
        let mut out = self.clone();
        out.merge(rhs);
        out
    }
}

pub fn accumulate(embeddings: &[ProbEmbedding], plda: &DiagPlda) -> Result<ClusterStats> {
    accumulate_scaled(embeddings, plda, 1.0)
}

/// [`accumulate`] with every segment's contribution multiplied by `scale`.
pub fn accumulate_scaled(
    embeddings: &[ProbEmbedding],
    plda: &DiagPlda,
    scale: f64,
) -> Result<ClusterStats> {
    let mut stats = ClusterStats::zeros(plda.dim());
    for emb in embeddings {
        stats.merge(&ClusterStats::segment(emb, plda, scale)?);
    }
    Ok(stats)
}

/// Cluster log-likelihood up to an additive constant that does not depend on
/// the clustering (taken as 0): `½ Σ_j (a_j²/(1+b_j) - log(1+b_j))`.
pub fn cluster_loglik(stats: &ClusterStats) -> f64 {
    loglik_terms(&stats.a_bar, &stats.b_bar)
}

#[inline]
fn loglik_terms(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a
        .iter()
        .zip(b)
        .map(|(a, b)| a * a / (1.0 + b) - b.ln_1p())
        .sum::<f64>()
}

/// In-place log-softmax; returns the log normalizer.
pub fn log_softmax_in_place(v: &mut [f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    for x in v.iter_mut() {
        *x -= lse;
    }
    lse
}

/// Intermediate results of scoring one tuple through the subset tables.
#[derive(Debug, Clone)]
pub struct TupleScores {
    /// Row-major `(2^n - 1) × D` pooled `a_bar` of every subset.
    pub subset_a: Vec<f64>,
    /// Row-major `(2^n - 1) × D` pooled `b_bar` of every subset.
    pub subset_b: Vec<f64>,
    pub subset_loglik: Vec<f64>,
    /// `log P(L | S)` for every row of the tables.
    pub log_posterior: Vec<f64>,
}

/// Scores all hypotheses of a tuple from its per-segment statistics.
///
/// `weighted_means` and `weights` are row-major `n × dim` holding `e·xhat`
/// and `e`. Subset sums go through the segment/subset table, cluster
/// log-likelihoods are accumulated per hypothesis through the
/// partition/subset table, the prior is added and a log-softmax over the
/// `B_n` hypotheses normalizes.
pub fn score_tuple(
    weighted_means: &[f64],
    weights: &[f64],
    dim: usize,
    tables: &PartitionTables,
) -> Result<TupleScores> {
    let n = tables.n();
    if weighted_means.len() != n * dim || weights.len() != n * dim {
        return Err(Error::Shape(format!(
            "expected {n} segments of dim {dim} for these tables"
        )));
    }
    let seg = tables.seg_subset();
    let subset_a = seg.transpose_mul_mat(weighted_means, dim);
    let subset_b = seg.transpose_mul_mat(weights, dim);
    let subset_loglik: Vec<f64> = subset_a
        .chunks_exact(dim)
        .zip(subset_b.chunks_exact(dim))
        .map(|(a, b)| loglik_terms(a, b))
        .collect();
    let mut log_posterior = tables.part_subset().mul_vec(&subset_loglik);
    for (s, p) in log_posterior.iter_mut().zip(tables.log_prior()) {
        *s += p;
    }
    // with no evidence the prior table is already normalized; renormalizing
    // would only add rounding
    if subset_loglik.iter().any(|&l| l != 0.0) {
        log_softmax_in_place(&mut log_posterior);
    }
    Ok(TupleScores {
        subset_a,
        subset_b,
        subset_loglik,
        log_posterior,
    })
}

/// Row-major `(e·xhat, e)` matrices of a tuple.
pub fn tuple_statistics(tuple: &[ProbEmbedding], plda: &DiagPlda) -> Result<(Vec<f64>, Vec<f64>)> {
    let dim = plda.dim();
    let mut wm = Vec::with_capacity(tuple.len() * dim);
    let mut we = Vec::with_capacity(tuple.len() * dim);
    for emb in tuple {
        plda.check_dim(emb.dim())?;
        for j in 0..dim {
            let e = weight(plda.w[j], emb.prec[j]);
            wm.push(e * emb.xhat[j]);
            we.push(e);
        }
    }
    Ok((wm, we))
}

/// `log P(L | S)` for every clustering `L` of the tuple, in table order.
pub fn clustering_log_posterior(
    tuple: &[ProbEmbedding],
    plda: &DiagPlda,
    tables: &PartitionTables,
) -> Result<Vec<f64>> {
    if tuple.len() != tables.n() {
        return Err(Error::Shape(format!(
            "tuple has {} segments, tables are for n = {}",
            tuple.len(),
            tables.n()
        )));
    }
    let (wm, we) = tuple_statistics(tuple, plda)?;
    Ok(score_tuple(&wm, &we, plda.dim(), tables)?.log_posterior)
}

/// Same-speaker log-likelihood ratio of two segments.
pub fn pairwise_llr(e1: &ProbEmbedding, e2: &ProbEmbedding, plda: &DiagPlda) -> Result<f64> {
    let s1 = ClusterStats::segment(e1, plda, 1.0)?;
    let s2 = ClusterStats::segment(e2, plda, 1.0)?;
    Ok(cluster_loglik(&(&s1 + &s2)) - (cluster_loglik(&s1) + cluster_loglik(&s2)))
}
