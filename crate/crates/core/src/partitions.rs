//! Set partitions of small tuples and the Chinese-restaurant prior over them.
//!
//! A clustering of `n` items is represented by its restricted growth string
//! (RGS): the first item is in block 0 and every later item is in one of the
//! blocks already opened or in the next new one. Every partition has exactly
//! one RGS, so the `B_n` strings index the hypotheses of the clustering
//! posterior.
//!
//! Subsets of the tuple are encoded as bit masks (bit `t` set when item `t`
//! belongs to the subset); column `c` of both sparse tables is the subset with
//! mask `c + 1`.

use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Largest `n` for which [`bell_number`] is defined.
pub const MAX_BELL_N: usize = 16;

/// Largest tuple size for which label strings and tables are materialized.
pub const MAX_TABLE_N: usize = 12;

/// A canonical clustering of `n` items, stored as 0-based block indices.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelString(Vec<u32>);

impl LabelString {
    /// Validates a 0-based block sequence against the restricted growth
    /// condition.
    pub fn from_blocks(blocks: Vec<u32>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Domain("empty label string".into()));
        }
        let mut next = 0u32;
        for (t, &b) in blocks.iter().enumerate() {
            if b > next {
                return Err(Error::Domain(format!(
                    "label {} at position {} violates restricted growth (max allowed {})",
                    b + 1,
                    t,
                    next + 1
                )));
            }
            if b == next {
                next += 1;
            }
        }
        Ok(LabelString(blocks))
    }

    /// Validates 1-based labels, as written in annotations (`[1, 1, 2]`).
    pub fn from_one_based(labels: &[usize]) -> Result<Self> {
        let blocks = labels
            .iter()
            .map(|&l| {
                if l == 0 {
                    Err(Error::Domain("1-based labels must be >= 1".into()))
                } else {
                    u32::try_from(l - 1).map_err(|_| Error::Domain("label too large".into()))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_blocks(blocks)
    }

    pub fn blocks(&self) -> &[u32] {
        &self.0
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.0.iter().map(|&b| b as usize + 1).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn n_clusters(&self) -> usize {
        self.0.iter().max().map_or(0, |&m| m as usize + 1)
    }

    /// Member indices of every block, in block order.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_clusters()];
        for (t, &b) in self.0.iter().enumerate() {
            out[b as usize].push(t);
        }
        out
    }

    /// Subset masks of the blocks. Only meaningful for `n <= 32`.
    pub fn cluster_masks(&self) -> Vec<u32> {
        debug_assert!(self.len() <= 32);
        let mut out = vec![0u32; self.n_clusters()];
        for (t, &b) in self.0.iter().enumerate() {
            out[b as usize] |= 1 << t;
        }
        out
    }
}

impl fmt::Display for LabelString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let wide = self.n_clusters() > 9;
        for (t, b) in self.0.iter().enumerate() {
            if wide && t > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}", b + 1)?;
        }
        Ok(())
    }
}

impl fmt::Debug for LabelString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LabelString({self})")
    }
}

/// Bell number `B_n` via the Bell triangle.
pub fn bell_number(n: usize) -> Result<u64> {
    if n == 0 || n > MAX_BELL_N {
        return Err(Error::Size(format!(
            "bell_number needs 1 <= n <= {MAX_BELL_N}, got {n}"
        )));
    }
    let mut row = vec![1u64];
    for _ in 1..n {
        let mut next = Vec::with_capacity(row.len() + 1);
        next.push(*row.last().unwrap());
        for &v in &row {
            let prev = *next.last().unwrap();
            next.push(prev + v);
        }
        row = next;
    }
    Ok(*row.last().unwrap())
}

fn check_table_n(n: usize) -> Result<()> {
    if n == 0 || n > MAX_TABLE_N {
        return Err(Error::Size(format!(
            "tuple size must satisfy 1 <= n <= {MAX_TABLE_N}, got {n}"
        )));
    }
    Ok(())
}

/// Visits every RGS of length `n` in lexicographic order.
fn for_each_rgs(n: usize, mut visit: impl FnMut(&[u32])) {
    let mut labels = vec![0u32; n];
    // running_max[t] = max(labels[0..=t])
    let mut running_max = vec![0u32; n];
    loop {
        visit(&labels);
        // find rightmost position that can still be incremented
        let mut t = n - 1;
        loop {
            if t == 0 {
                return;
            }
            if labels[t] <= running_max[t - 1] {
                break;
            }
            t -= 1;
        }
        labels[t] += 1;
        running_max[t] = running_max[t - 1].max(labels[t]);
        for s in t + 1..n {
            labels[s] = 0;
            running_max[s] = running_max[t];
        }
    }
}

/// All restricted growth strings of length `n`, lexicographically ordered.
pub fn enumerate_rgs(n: usize) -> Result<Vec<LabelString>> {
    check_table_n(n)?;
    let mut out = Vec::with_capacity(bell_number(n)? as usize);
    for_each_rgs(n, |l| out.push(LabelString(l.to_vec())));
    Ok(out)
}

/// Relabels by order of first appearance. The result describes the same
/// partition (same co-membership relation) as `labels`.
pub fn canonicalize<T: PartialEq>(labels: &[T]) -> LabelString {
    let mut seen: Vec<&T> = Vec::new();
    let blocks = labels
        .iter()
        .map(|l| match seen.iter().position(|s| *s == l) {
            Some(k) => k as u32,
            None => {
                seen.push(l);
                (seen.len() - 1) as u32
            }
        })
        .collect();
    LabelString(blocks)
}

/// Concentration and discount of a Pitman-Yor (generalized Chinese
/// restaurant) process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrpParams {
    concentration: f64,
    discount: f64,
}

impl CrpParams {
    pub fn new(concentration: f64, discount: f64) -> Result<Self> {
        if !(concentration.is_finite() && concentration >= 0.0) {
            return Err(Error::Domain(format!(
                "concentration must be finite and >= 0, got {concentration}"
            )));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::Domain(format!(
                "discount must lie in [0, 1), got {discount}"
            )));
        }
        if concentration + discount <= 0.0 {
            return Err(Error::Domain(
                "concentration + discount must be > 0".into(),
            ));
        }
        Ok(CrpParams {
            concentration,
            discount,
        })
    }

    pub fn concentration(&self) -> f64 {
        self.concentration
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }
}

impl Default for CrpParams {
    fn default() -> Self {
        CrpParams {
            concentration: 1.0,
            discount: 0.0,
        }
    }
}

/// Log-probability of a partition under the exchangeable Pitman-Yor prior.
///
/// Customers are seated in order. With `t` customers already seated in `K`
/// tables, a new table opens with probability `(alpha + K d) / (alpha + t)`
/// and table `k` is joined with probability `(n_k - d) / (alpha + t)`.
pub fn crp_log_prob(labels: &LabelString, params: CrpParams) -> f64 {
    let alpha = params.concentration;
    let d = params.discount;
    let mut counts: Vec<f64> = Vec::new();
    let mut logp = 0.0;
    for (t, &b) in labels.blocks().iter().enumerate() {
        let b = b as usize;
        if t > 0 {
            let denom = alpha + t as f64;
            let num = if b == counts.len() {
                alpha + counts.len() as f64 * d
            } else {
                counts[b] - d
            };
            logp += (num / denom).ln();
        }
        if b == counts.len() {
            counts.push(1.0);
        } else {
            counts[b] += 1.0;
        }
    }
    logp
}

/// Mean and variance of the number of tables after `n` customers.
///
/// The probability of opening a table is linear in the current table count,
/// so the first two moments obey closed recurrences.
pub fn crp_cluster_count_moments(n: usize, params: CrpParams) -> (f64, f64) {
    moments(n, params.concentration, params.discount)
}

fn moments(n: usize, alpha: f64, d: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 0.0);
    }
    let (mut m1, mut m2) = (1.0f64, 1.0f64);
    for t in 1..n {
        let denom = alpha + t as f64;
        let new_m2 = m2 + (2.0 * d * m2 + 2.0 * alpha * m1 + alpha + d * m1) / denom;
        m1 += (alpha + d * m1) / denom;
        m2 = new_m2;
    }
    (m1, (m2 - m1 * m1).max(0.0))
}

/// Discount values searched by [`fit_crp`].
pub fn fit_crp_discount_grid() -> Vec<f64> {
    (0..20).map(|i| i as f64 * 0.05).collect()
}

/// Lower clamp on the concentration when the discount is zero.
pub const FIT_ALPHA_MIN: f64 = 1e-9;
/// Upper clamp on the concentration; targets beyond its reach are clipped.
pub const FIT_ALPHA_MAX: f64 = 1e8;
/// Relative tolerance on the expected cluster count.
pub const FIT_REL_TOL: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrpFit {
    pub params: CrpParams,
    pub expected: f64,
    pub variance: f64,
    /// The target needed `alpha` beyond [`FIT_ALPHA_MAX`].
    pub clipped: bool,
}

/// Chooses `(alpha, d)` so that `E[K_n_total] = expected_speakers` and, among
/// the discounts on [`fit_crp_discount_grid`] that can reach the target, the
/// variance of `K` is largest. `alpha` is found per discount by bisection on
/// the exact mean recurrence (in `log alpha`).
pub fn fit_crp(n_total: usize, expected_speakers: f64) -> Result<CrpFit> {
    if n_total == 0 {
        return Err(Error::Domain("fit_crp needs n_total >= 1".into()));
    }
    if !(expected_speakers >= 1.0 && expected_speakers <= n_total as f64) {
        return Err(Error::Domain(format!(
            "expected speakers {expected_speakers} not in [1, {n_total}]"
        )));
    }
    let target = expected_speakers;
    let close = |e: f64| (e - target).abs() <= FIT_REL_TOL * target;

    let mut best: Option<CrpFit> = None;
    for d in fit_crp_discount_grid() {
        let alpha_lo = if d == 0.0 { FIT_ALPHA_MIN } else { 0.0 };
        let (e_lo, _) = moments(n_total, alpha_lo, d);
        let (e_hi, _) = moments(n_total, FIT_ALPHA_MAX, d);
        let (alpha, clipped) = if e_lo >= target {
            if !close(e_lo) {
                continue;
            }
            (alpha_lo, false)
        } else if e_hi <= target {
            (FIT_ALPHA_MAX, true)
        } else {
            let mut lo = FIT_ALPHA_MIN.max(alpha_lo).ln();
            let mut hi = FIT_ALPHA_MAX.ln();
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if moments(n_total, mid.exp(), d).0 < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-13 {
                    break;
                }
            }
            ((0.5 * (lo + hi)).exp(), false)
        };
        let (expected, variance) = moments(n_total, alpha, d);
        if !close(expected) && !clipped {
            continue;
        }
        let params = CrpParams::new(alpha, d)?;
        let cand = CrpFit {
            params,
            expected,
            variance,
            clipped,
        };
        // prefer unclipped fits; then larger variance
        let better = match &best {
            None => true,
            Some(b) => match (b.clipped, cand.clipped) {
                (true, false) => true,
                (false, true) => false,
                _ => cand.variance > b.variance,
            },
        };
        if better {
            best = Some(cand);
        }
    }
    let fit = best.ok_or_else(|| {
        Error::Domain(format!(
            "no (concentration, discount) reaches {target} expected clusters for {n_total} items"
        ))
    })?;
    if fit.clipped {
        log::warn!(
            "fit_crp: target {target} of {n_total} needs concentration beyond {FIT_ALPHA_MAX:e}; clipped (E[K] = {:.4})",
            fit.expected
        );
    }
    Ok(fit)
}

/// A 0/1 matrix stored as sorted column-index lists per row (CSR without
/// values).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseBinary {
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
}

impl SparseBinary {
    pub fn from_rows(n_cols: usize, rows: impl IntoIterator<Item = Vec<u32>>) -> Self {
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        for mut row in rows {
            row.sort_unstable();
            debug_assert!(row.iter().all(|&c| (c as usize) < n_cols));
            indices.extend_from_slice(&row);
            indptr.push(indices.len());
        }
        SparseBinary {
            n_cols,
            indptr,
            indices,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.indices[self.indptr[r]..self.indptr[r + 1]]
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.row(r).binary_search(&(c as u32)).is_ok()
    }

    /// `M x`, for a vector over columns.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols);
        (0..self.n_rows())
            .map(|r| self.row(r).iter().map(|&c| x[c as usize]).sum())
            .collect()
    }

    /// `Mᵀ v`, for a vector over rows.
    pub fn transpose_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n_rows());
        let mut out = vec![0.0; self.n_cols];
        for (r, &vr) in v.iter().enumerate() {
            if vr != 0.0 {
                for &c in self.row(r) {
                    out[c as usize] += vr;
                }
            }
        }
        out
    }

    /// `Mᵀ X` where `X` is row-major `n_rows × width`; result is row-major
    /// `n_cols × width`.
    pub fn transpose_mul_mat(&self, x: &[f64], width: usize) -> Vec<f64> {
        assert_eq!(x.len(), self.n_rows() * width);
        let mut out = vec![0.0; self.n_cols * width];
        for r in 0..self.n_rows() {
            let xr = &x[r * width..(r + 1) * width];
            for &c in self.row(r) {
                let o = &mut out[c as usize * width..(c as usize + 1) * width];
                for (oj, xj) in o.iter_mut().zip(xr) {
                    *oj += xj;
                }
            }
        }
        out
    }

    /// `M Y` where `Y` is row-major `n_cols × width`; result is row-major
    /// `n_rows × width`.
    pub fn mul_mat(&self, y: &[f64], width: usize) -> Vec<f64> {
        assert_eq!(y.len(), self.n_cols * width);
        let mut out = vec![0.0; self.n_rows() * width];
        for r in 0..self.n_rows() {
            let o = &mut out[r * width..(r + 1) * width];
            for &c in self.row(r) {
                let yc = &y[c as usize * width..(c as usize + 1) * width];
                for (oj, yj) in o.iter_mut().zip(yc) {
                    *oj += yj;
                }
            }
        }
        out
    }
}

/// Everything needed to score all `B_n` clusterings of an `n`-tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionTables {
    n: usize,
    prior: CrpParams,
    /// `B_n × n` block indices, row-major, lexicographic order.
    rgs: Vec<u8>,
    log_prior: Vec<f64>,
    seg_subset: SparseBinary,
    part_subset: SparseBinary,
}

impl PartitionTables {
    pub fn build(n: usize, prior: CrpParams) -> Result<Self> {
        check_table_n(n)?;
        let mut rgs = Vec::with_capacity(bell_number(n)? as usize * n);
        for_each_rgs(n, |l| rgs.extend(l.iter().map(|&b| b as u8)));
        Ok(Self::from_rgs(n, prior, rgs, None))
    }

    fn from_rgs(n: usize, prior: CrpParams, rgs: Vec<u8>, log_prior: Option<Vec<f64>>) -> Self {
        let n_sub = (1usize << n) - 1;
        let seg_subset = SparseBinary::from_rows(
            n_sub,
            (0..n).map(|t| {
                (1..=n_sub)
                    .filter(|mask| mask & (1 << t) != 0)
                    .map(|mask| (mask - 1) as u32)
                    .collect()
            }),
        );
        let b_n = rgs.len() / n;
        let part_subset = SparseBinary::from_rows(
            n_sub,
            (0..b_n).map(|r| {
                let row = &rgs[r * n..(r + 1) * n];
                let k = *row.iter().max().unwrap() as usize + 1;
                let mut masks = vec![0usize; k];
                for (t, &b) in row.iter().enumerate() {
                    masks[b as usize] |= 1 << t;
                }
                masks.into_iter().map(|m| (m - 1) as u32).collect()
            }),
        );
        let log_prior = log_prior.unwrap_or_else(|| {
            (0..b_n)
                .map(|r| {
                    let l = LabelString(rgs[r * n..(r + 1) * n].iter().map(|&b| b as u32).collect());
                    crp_log_prob(&l, prior)
                })
                .collect()
        });
        PartitionTables {
            n,
            prior,
            rgs,
            log_prior,
            seg_subset,
            part_subset,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn prior(&self) -> CrpParams {
        self.prior
    }

    /// Number of hypotheses, `B_n`.
    pub fn len(&self) -> usize {
        self.log_prior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_prior.is_empty()
    }

    /// Number of nonempty subsets, `2^n - 1`.
    pub fn n_subsets(&self) -> usize {
        self.seg_subset.n_cols()
    }

    /// Block indices of hypothesis `r`.
    pub fn rgs_blocks(&self, r: usize) -> &[u8] {
        &self.rgs[r * self.n..(r + 1) * self.n]
    }

    pub fn label_string(&self, r: usize) -> LabelString {
        LabelString(self.rgs_blocks(r).iter().map(|&b| b as u32).collect())
    }

    pub fn log_prior(&self) -> &[f64] {
        &self.log_prior
    }

    /// `n × (2^n - 1)`: entry `(t, c)` is 1 when item `t` is in subset `c`.
    pub fn seg_subset(&self) -> &SparseBinary {
        &self.seg_subset
    }

    /// `B_n × (2^n - 1)`: row `r` selects the blocks of hypothesis `r`.
    pub fn part_subset(&self) -> &SparseBinary {
        &self.part_subset
    }

    /// Row index of a label string, by binary search in the lexicographic list.
    pub fn index_of(&self, labels: &LabelString) -> Option<usize> {
        if labels.len() != self.n || labels.blocks().iter().any(|&b| b > u8::MAX as u32) {
            return None;
        }
        let key: Vec<u8> = labels.blocks().iter().map(|&b| b as u8).collect();
        let (mut lo, mut hi) = (0usize, self.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            match self.rgs_blocks(mid).cmp(&key[..]) {
                std::cmp::Ordering::Less => lo = mid + 1,
                std::cmp::Ordering::Greater => hi = mid,
                std::cmp::Ordering::Equal => return Some(mid),
            }
        }
        None
    }

    /// Builds the table, going through a cache file in `dir` keyed by
    /// `(n, alpha, d)`. The cached and freshly built tables are identical.
    pub fn cached(dir: &Path, n: usize, prior: CrpParams) -> Result<Self> {
        let path = dir.join(format!(
            "ptab-n{}-a{:016x}-d{:016x}.bin",
            n,
            prior.concentration.to_bits(),
            prior.discount.to_bits()
        ));
        if path.exists() {
            match Self::read_cache(&path) {
                Ok(t) if t.n == n && t.prior == prior => return Ok(t),
                Ok(_) => log::warn!("{}: cache key mismatch, rebuilding", path.display()),
                Err(e) => log::warn!("{e}; rebuilding"),
            }
        }
        let t = Self::build(n, prior)?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        t.write_cache(&path)?;
        Ok(t)
    }

    const CACHE_MAGIC: &'static [u8; 4] = b"PTAB";
    const CACHE_VERSION: u32 = 1;

    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
        put(Self::CACHE_MAGIC)?;
        put(&Self::CACHE_VERSION.to_le_bytes())?;
        put(&(self.n as u32).to_le_bytes())?;
        put(&self.prior.concentration.to_le_bytes())?;
        put(&self.prior.discount.to_le_bytes())?;
        put(&(self.len() as u64).to_le_bytes())?;
        for v in &self.log_prior {
            put(&v.to_le_bytes())?;
        }
        put(&self.rgs)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_cache(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut buf = Vec::new();
        BufReader::new(f)
            .read_to_end(&mut buf)
            .map_err(|e| Error::io(path, e))?;
        let bad = |msg: &str| Error::parse(path, 0, msg.to_string());
        let mut pos = 0usize;
        let mut take = |k: usize| -> Result<&[u8]> {
            let s = buf
                .get(pos..pos + k)
                .ok_or_else(|| Error::parse(path, 0, "truncated table cache"))?;
            pos += k;
            Ok(s)
        };
        if take(4)? != Self::CACHE_MAGIC {
            return Err(bad("not a partition table cache"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != Self::CACHE_VERSION {
            return Err(bad("unsupported table cache version"));
        }
        let n = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        check_table_n(n)?;
        let alpha = f64::from_le_bytes(take(8)?.try_into().unwrap());
        let d = f64::from_le_bytes(take(8)?.try_into().unwrap());
        let prior = CrpParams::new(alpha, d)?;
        let b_n = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        if b_n as u64 != bell_number(n)? {
            return Err(bad("row count is not the Bell number"));
        }
        let log_prior = take(8 * b_n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let rgs = take(b_n * n)?.to_vec();
        Ok(Self::from_rgs(n, prior, rgs, Some(log_prior)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ls(one_based: &[usize]) -> LabelString {
        LabelString::from_one_based(one_based).unwrap()
    }

    fn logsumexp(v: &[f64]) -> f64 {
        let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
    }

    /// Every string in {1..n}^n that satisfies the growth condition.
    fn brute_rgs(n: usize) -> Vec<Vec<usize>> {
        let total = n.pow(n as u32);
        let mut out = Vec::new();
        for code in 0..total {
            let mut c = code;
            let mut s = vec![0usize; n];
            for t in (0..n).rev() {
                s[t] = c % n + 1;
                c /= n;
            }
            let mut ok = s[0] == 1;
            let mut mx = 1;
            for &l in &s[1..] {
                ok &= l <= mx + 1;
                mx = mx.max(l);
            }
            if ok {
                out.push(s);
            }
        }
        out
    }

    #[test]
    fn bell_numbers() {
        assert_eq!(bell_number(1).unwrap(), 1);
        assert_eq!(bell_number(3).unwrap(), brute_rgs(3).len() as u64);
        assert_eq!(bell_number(3).unwrap(), 5);
        assert_eq!(bell_number(8).unwrap(), 4140);
        assert_eq!(bell_number(16).unwrap(), 10_480_142_147);
        assert!(matches!(bell_number(0), Err(Error::Size(_))));
        assert!(matches!(bell_number(17), Err(Error::Size(_))));
    }

    #[test]
    fn rgs_enumeration_matches_brute_force() {
        for n in 1..=6 {
            let got: Vec<Vec<usize>> = enumerate_rgs(n)
                .unwrap()
                .iter()
                .map(|l| l.one_based())
                .collect();
            assert_eq!(got, brute_rgs(n), "n = {n}");
        }
        let three: Vec<String> = enumerate_rgs(3)
            .unwrap()
            .iter()
            .map(|l| l.to_string())
            .collect();
        assert_eq!(three, ["111", "112", "121", "122", "123"]);
        assert_eq!(enumerate_rgs(1).unwrap(), vec![ls(&[1])]);
        assert_eq!(enumerate_rgs(8).unwrap().len(), 4140);
        assert!(enumerate_rgs(13).is_err());
        assert!(enumerate_rgs(0).is_err());
    }

    #[test]
    fn rgs_counts_are_bell_numbers() {
        for n in 1..=10 {
            let mut count = 0u64;
            for_each_rgs(n, |_| count += 1);
            assert_eq!(count, bell_number(n).unwrap());
        }
    }

    #[test]
    fn label_string_validation() {
        assert!(LabelString::from_one_based(&[2, 1]).is_err());
        assert!(LabelString::from_one_based(&[1, 3]).is_err());
        assert!(LabelString::from_one_based(&[]).is_err());
        assert!(LabelString::from_one_based(&[0]).is_err());
        assert_eq!(ls(&[1, 2, 1, 3]).n_clusters(), 3);
        assert_eq!(ls(&[1, 2, 1, 3]).cluster_masks(), vec![0b0101, 0b0010, 0b1000]);
    }

    #[test]
    fn canonicalize_examples() {
        assert_eq!(canonicalize(&[7, 7, 2]).one_based(), vec![1, 1, 2]);
        assert_eq!(canonicalize(&[1, 2, 3]).one_based(), vec![1, 2, 3]);
        assert_eq!(canonicalize(&[2, 1, 2, 1]).one_based(), vec![1, 2, 1, 2]);
        assert_eq!(canonicalize(&["b", "a", "b"]).one_based(), vec![1, 2, 1]);
    }

    fn comembership<T: PartialEq>(l: &[T]) -> Vec<bool> {
        let n = l.len();
        (0..n * n).map(|i| l[i / n] == l[i % n]).collect()
    }

    proptest! {
        #[test]
        fn canonicalize_is_idempotent_and_partition_preserving(
            labels in prop::collection::vec(0u8..5, 1..12)
        ) {
            let c = canonicalize(&labels);
            prop_assert!(LabelString::from_blocks(c.blocks().to_vec()).is_ok());
            prop_assert_eq!(canonicalize(c.blocks()), c.clone());
            prop_assert_eq!(comembership(c.blocks()), comembership(&labels));
        }
    }

    #[test]
    fn crp_examples() {
        let p = CrpParams::new(1.0, 0.0).unwrap();
        assert!((crp_log_prob(&ls(&[1, 1]), p) - 0.5f64.ln()).abs() < 1e-15);
        assert!((crp_log_prob(&ls(&[1, 2]), p) - 0.5f64.ln()).abs() < 1e-15);
        let p = CrpParams::new(0.7, 0.3).unwrap();
        let total: f64 = enumerate_rgs(4)
            .unwrap()
            .iter()
            .map(|l| crp_log_prob(l, p).exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn crp_params_validation() {
        assert!(CrpParams::new(-0.1, 0.0).is_err());
        assert!(CrpParams::new(1.0, 1.0).is_err());
        assert!(CrpParams::new(1.0, -0.1).is_err());
        assert!(CrpParams::new(0.0, 0.0).is_err());
        assert!(CrpParams::new(0.0, 0.5).is_ok());
        assert!(CrpParams::new(f64::NAN, 0.5).is_err());
    }

    fn apply_perm(labels: &LabelString, perm: &[usize]) -> LabelString {
        let permuted: Vec<u32> = perm.iter().map(|&i| labels.blocks()[i]).collect();
        canonicalize(&permuted)
    }

    fn all_perms(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in all_perms(n - 1) {
            for pos in 0..n {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn crp_is_exchangeable() {
        let p = CrpParams::new(0.8, 0.25).unwrap();
        for n in 1..=6 {
            let perms = all_perms(n);
            for l in enumerate_rgs(n).unwrap() {
                let base = crp_log_prob(&l, p);
                assert_eq!(crp_log_prob(&canonicalize(l.blocks()), p), base);
                for perm in perms.iter().step_by(7) {
                    let q = apply_perm(&l, perm);
                    assert!((crp_log_prob(&q, p) - base).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn cluster_count_moments_match_enumeration() {
        let p = CrpParams::new(0.6, 0.4).unwrap();
        for n in 1..=7 {
            let (mut m1, mut m2) = (0.0, 0.0);
            for l in enumerate_rgs(n).unwrap() {
                let pr = crp_log_prob(&l, p).exp();
                let k = l.n_clusters() as f64;
                m1 += pr * k;
                m2 += pr * k * k;
            }
            let (e, v) = crp_cluster_count_moments(n, p);
            assert!((e - m1).abs() < 1e-12, "n={n}");
            assert!((v - (m2 - m1 * m1)).abs() < 1e-11, "n={n}");
        }
    }

    #[test]
    fn fit_crp_edge_cases() {
        let f = fit_crp(100, 1.0).unwrap();
        assert_eq!(f.params.discount(), 0.0);
        assert!(f.params.concentration() <= 1e-6);
        assert!((f.expected - 1.0).abs() < 1e-6);

        let f = fit_crp(8, 8.0).unwrap();
        assert!(f.clipped);
        assert_eq!(f.params.concentration(), FIT_ALPHA_MAX);
        assert!((f.expected - 8.0).abs() <= 0.04);

        assert!(fit_crp(8, 0.5).is_err());
        assert!(fit_crp(8, 9.0).is_err());
        assert!(fit_crp(0, 1.0).is_err());
    }

    #[test]
    fn fit_crp_maximizes_variance_over_grid() {
        let f = fit_crp(500, 20.0).unwrap();
        assert!((f.expected - 20.0).abs() <= 0.1);
        // every other feasible discount gives a smaller variance
        for d in fit_crp_discount_grid() {
            if d == f.params.discount() {
                continue;
            }
            let (e0, _) = moments(500, if d == 0.0 { FIT_ALPHA_MIN } else { 0.0 }, d);
            if e0 > 20.0 {
                continue;
            }
            let (mut lo, mut hi) = (0.0f64, 1e4f64);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if moments(500, mid, d).0 < 20.0 {
                    lo = mid
                } else {
                    hi = mid
                }
            }
            let (_, v) = moments(500, lo, d);
            assert!(v <= f.variance + 1e-9, "d = {d}");
        }
    }

    #[test]
    fn tables_small() {
        let t = PartitionTables::build(2, CrpParams::default()).unwrap();
        assert_eq!(t.seg_subset().n_rows(), 2);
        assert_eq!(t.seg_subset().n_cols(), 3);
        // columns {1}, {2}, {1,2}
        let dense: Vec<Vec<bool>> = (0..2)
            .map(|r| (0..3).map(|c| t.seg_subset().get(r, c)).collect())
            .collect();
        assert_eq!(dense, vec![vec![true, false, true], vec![false, true, true]]);
        assert_eq!(t.part_subset().row(0), &[2]);
        assert_eq!(t.part_subset().row(1), &[0, 1]);

        let t = PartitionTables::build(3, CrpParams::new(1.0, 0.0).unwrap()).unwrap();
        let s: f64 = t.log_prior().iter().map(|v| v.exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tables_octets() {
        let t = PartitionTables::build(8, CrpParams::new(2.0, 0.3).unwrap()).unwrap();
        assert_eq!(t.part_subset().n_rows(), 4140);
        assert_eq!(t.len(), 4140);
        assert!(logsumexp(t.log_prior()).abs() < 1e-10);
        for r in (0..t.len()).step_by(37) {
            let l = t.label_string(r);
            assert_eq!(t.index_of(&l), Some(r));
            assert_eq!(t.log_prior()[r], crp_log_prob(&l, t.prior()));
            // each selected column is that cluster's membership indicator
            let masks = l.cluster_masks();
            let mut cols: Vec<u32> = masks.iter().map(|m| m - 1).collect();
            cols.sort_unstable();
            assert_eq!(t.part_subset().row(r), &cols[..]);
            for m in masks {
                for seg in 0..8 {
                    assert_eq!(t.seg_subset().get(seg, m as usize - 1), m & (1 << seg) != 0);
                }
            }
        }
        assert!(PartitionTables::build(13, CrpParams::default()).is_err());
    }

    #[test]
    fn seg_subset_product_is_subset_sum() {
        let t = PartitionTables::build(5, CrpParams::default()).unwrap();
        let v = [0.3, -1.2, 2.5, 0.7, 4.0];
        let sums = t.seg_subset().transpose_mul_vec(&v);
        for mask in 1usize..32 {
            let direct: f64 = (0..5).filter(|t| mask & (1 << t) != 0).map(|t| v[t]).sum();
            assert!((sums[mask - 1] - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn cache_round_trip_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = CrpParams::new(1.3, 0.2).unwrap();
        let fresh = PartitionTables::build(6, p).unwrap();
        let first = PartitionTables::cached(dir.path(), 6, p).unwrap();
        let second = PartitionTables::cached(dir.path(), 6, p).unwrap();
        assert_eq!(fresh, first);
        assert_eq!(fresh, second);
        let bits = |t: &PartitionTables| t.log_prior().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&fresh), bits(&second));
    }
}
