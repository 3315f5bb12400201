//! Agglomerative clustering of a full recording.
//!
//! Two variants are provided. The baseline is average-linkage AHC on plug-in
//! PLDA scores, stopped at a threshold found by unsupervised calibration. The
//! by-the-book variant greedily merges the pair of clusters whose merge most
//! increases the total cluster log-likelihood, using pooled statistics of
//! probabilistic embeddings.

use crate::error::{Error, Result};
use crate::partitions::{canonicalize, LabelString};
use crate::plda::{cluster_loglik, ClusterStats, DiagPlda, ProbEmbedding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AhcMode {
    Baseline,
    #[default]
    ByTheBook,
}

impl std::str::FromStr for AhcMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(AhcMode::Baseline),
            "book" | "by_the_book" | "by-the-book" => Ok(AhcMode::ByTheBook),
            _ => Err(Error::Domain(format!("unknown AHC mode {s:?} (expected baseline or book)"))),
        }
    }
}

impl std::fmt::Display for AhcMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AhcMode::Baseline => "baseline",
            AhcMode::ByTheBook => "book",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AhcConfig {
    pub mode: AhcMode,
    /// Stopping offset. By-the-book merges while `Δ > sigma`; the baseline
    /// adds it to the calibrated threshold.
    pub sigma: f64,
    /// Multiplies every segment's statistics before accumulation.
    pub likelihood_scale: f64,
}

impl Default for AhcConfig {
    fn default() -> Self {
        AhcConfig {
            mode: AhcMode::ByTheBook,
            sigma: 0.0,
            likelihood_scale: 1.0,
        }
    }
}

impl AhcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.likelihood_scale > 0.0 && self.likelihood_scale.is_finite()) {
            return Err(Error::Domain(format!(
                "likelihood_scale must be finite and > 0, got {}",
                self.likelihood_scale
            )));
        }
        if self.sigma.is_nan() {
            return Err(Error::Domain("sigma is NaN".into()));
        }
        Ok(())
    }
}

/// Log-likelihood gain of merging two clusters.
pub fn merge_delta(i: &ClusterStats, j: &ClusterStats) -> Result<f64> {
    if i.dim() != j.dim() {
        return Err(Error::Shape(format!("cluster dims {} and {}", i.dim(), j.dim())));
    }
    Ok(delta(i, j))
}

fn delta(i: &ClusterStats, j: &ClusterStats) -> f64 {
    let mut acc = 0.0;
    for k in 0..i.dim() {
        let (ai, bi, aj, bj) = (i.a_bar[k], i.b_bar[k], j.a_bar[k], j.b_bar[k]);
        let (a, b) = (ai + aj, bi + bj);
        acc += a * a / (1.0 + b) - b.ln_1p() - (ai * ai / (1.0 + bi) - bi.ln_1p())
            - (aj * aj / (1.0 + bj) - bj.ln_1p());
    }
    0.5 * acc
}

/// Active clusters of an agglomeration, each with its pooled statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    stats: Vec<ClusterStats>,
    members: Vec<Vec<usize>>,
    active: Vec<bool>,
}

impl ClusterState {
    pub fn singletons(stats: Vec<ClusterStats>) -> Self {
        let n = stats.len();
        ClusterState {
            stats,
            members: (0..n).map(|i| vec![i]).collect(),
            active: vec![true; n],
        }
    }

    pub fn n_segments(&self) -> usize {
        self.members.len()
    }

    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }

    pub fn active_ids(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.active.len()).filter(|&i| self.active[i])
    }

    pub fn stats(&self, id: usize) -> &ClusterStats {
        &self.stats[id]
    }

    pub fn members(&self, id: usize) -> &[usize] {
        &self.members[id]
    }

    /// Folds cluster `j` into cluster `i`.
    pub fn merge(&mut self, i: usize, j: usize) {
        assert!(i != j && self.active[i] && self.active[j]);
        let sj = std::mem::replace(&mut self.stats[j], ClusterStats::zeros(0));
        self.stats[i].merge(&sj);
        let mj = std::mem::take(&mut self.members[j]);
        self.members[i].extend(mj);
        self.members[i].sort_unstable();
        self.active[j] = false;
    }

    pub fn total_loglik(&self) -> f64 {
        self.active_ids().map(|i| cluster_loglik(&self.stats[i])).sum()
    }

    pub fn labels(&self) -> LabelString {
        let mut owner = vec![0usize; self.n_segments()];
        for i in self.active_ids() {
            for &m in &self.members[i] {
                owner[m] = i;
            }
        }
        canonicalize(&owner)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeStep {
    pub kept: usize,
    pub absorbed: usize,
    pub delta: f64,
    /// Total log-likelihood of the clustering after this merge.
    pub total_loglik: f64,
}

/// Segment statistics with `scale` applied, as used by by-the-book AHC.
pub fn segment_stats(embeddings: &[ProbEmbedding], plda: &DiagPlda, scale: f64) -> Result<Vec<ClusterStats>> {
    embeddings
        .iter()
        .map(|e| ClusterStats::segment(e, plda, scale))
        .collect()
}

/// Greedy maximum-likelihood AHC; see [`ahc_by_the_book_traced`].
pub fn ahc_by_the_book(embeddings: &[ProbEmbedding], plda: &DiagPlda, cfg: &AhcConfig) -> Result<LabelString> {
    Ok(ahc_by_the_book_traced(embeddings, plda, cfg)?.0)
}

/// Starts from singletons and repeatedly merges the pair with the largest
/// log-likelihood gain while that gain exceeds `cfg.sigma`. Equal gains go to
/// the lexicographically smallest pair of cluster ids. Returns the labels and
/// the sequence of merges.
pub fn ahc_by_the_book_traced(
    embeddings: &[ProbEmbedding],
    plda: &DiagPlda,
    cfg: &AhcConfig,
) -> Result<(LabelString, Vec<MergeStep>)> {
    cfg.validate()?;
    let stats = segment_stats(embeddings, plda, cfg.likelihood_scale)?;
    let (state, steps) = agglomerate(ClusterState::singletons(stats), cfg.sigma);
    Ok((state.labels(), steps))
}

/// The greedy loop on precomputed segment statistics.
pub fn agglomerate(mut state: ClusterState, sigma: f64) -> (ClusterState, Vec<MergeStep>) {
    let n = state.n_segments();
    // upper triangle, pair (i, j) with i < j at i * n + j
    let mut gain = vec![f64::NEG_INFINITY; n * n];
    for i in 0..n {
        for j in i + 1..n {
            gain[i * n + j] = delta(&state.stats[i], &state.stats[j]);
        }
    }
    let mut steps = Vec::new();
    let mut total = state.total_loglik();
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            if !state.active[i] {
                continue;
            }
            for j in i + 1..n {
                if !state.active[j] {
                    continue;
                }
                let g = gain[i * n + j];
                if best.is_none_or(|(_, _, b)| g > b) {
                    best = Some((i, j, g));
                }
            }
        }
        let Some((i, j, g)) = best else { break };
        if !(g > sigma) {
            break;
        }
        state.merge(i, j);
        total += g;
        steps.push(MergeStep {
            kept: i,
            absorbed: j,
            delta: g,
            total_loglik: total,
        });
        #[cfg(debug_assertions)]
        debug_check_stats(&state, i);
        // only pairs touching the merged cluster change
        for k in 0..n {
            if k == i || !state.active[k] {
                continue;
            }
            let (lo, hi) = if k < i { (k, i) } else { (i, k) };
            gain[lo * n + hi] = delta(&state.stats[lo], &state.stats[hi]);
        }
    }
    (state, steps)
}

#[cfg(debug_assertions)]
fn debug_check_stats(state: &ClusterState, id: usize) {
    // members' counts must add up; sums are checked against the singletons'
    // count since the raw segments are not retained here
    debug_assert_eq!(state.stats[id].count, state.members[id].len());
}

/// Result of fitting the two-component score mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    /// Lower and upper component means.
    pub means: (f64, f64),
    pub variance: f64,
    pub weights: (f64, f64),
    pub iterations: usize,
    pub threshold: f64,
}

pub const CALIBRATION_MAX_ITER: usize = 100;
pub const CALIBRATION_TOL: f64 = 1e-9;

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Threshold at which the two mixture components are equally probable.
pub fn unsupervised_calibration(scores: &[f64]) -> Result<f64> {
    Ok(fit_calibration(scores)?.threshold)
}

/// EM fit of a two-component, shared-variance Gaussian mixture to scores.
pub fn fit_calibration(scores: &[f64]) -> Result<Calibration> {
    if scores.len() < 2 {
        return Err(Error::Calibration(format!("need at least 2 scores, got {}", scores.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Calibration("non-finite score".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let range = sorted[sorted.len() - 1] - sorted[0];
    if !(range > 0.0) {
        return Err(Error::Calibration("all scores are equal".into()));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let total_var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let floor = 1e-12 * range * range;

    let mut mu = [percentile(&sorted, 0.1), percentile(&sorted, 0.9)];
    if mu[0] == mu[1] {
        mu = [sorted[0], sorted[sorted.len() - 1]];
    }
    let mut var = total_var.max(floor);
    let mut pi = [0.5f64, 0.5];
    let mut iterations = 0;
    for it in 1..=CALIBRATION_MAX_ITER {
        iterations = it;
        let mut r_sum = [0.0; 2];
        let mut x_sum = [0.0; 2];
        let mut resp = Vec::with_capacity(scores.len());
        for &s in scores {
            let l0 = pi[0].ln() - (s - mu[0]).powi(2) / (2.0 * var);
            let l1 = pi[1].ln() - (s - mu[1]).powi(2) / (2.0 * var);
            let m = l0.max(l1);
            let (e0, e1) = ((l0 - m).exp(), (l1 - m).exp());
            let r1 = e1 / (e0 + e1);
            resp.push(r1);
            r_sum[0] += 1.0 - r1;
            r_sum[1] += r1;
            x_sum[0] += (1.0 - r1) * s;
            x_sum[1] += r1 * s;
        }
        if r_sum[0] <= 0.0 || r_sum[1] <= 0.0 {
            return Err(Error::Calibration("a mixture component collapsed to zero weight".into()));
        }
        let new_mu = [x_sum[0] / r_sum[0], x_sum[1] / r_sum[1]];
        let new_var = scores
            .iter()
            .zip(&resp)
            .map(|(s, r1)| (1.0 - r1) * (s - new_mu[0]).powi(2) + r1 * (s - new_mu[1]).powi(2))
            .sum::<f64>()
            / n;
        let new_var = new_var.max(floor);
        let new_pi = [r_sum[0] / n, r_sum[1] / n];
        let change = (new_mu[0] - mu[0])
            .abs()
            .max((new_mu[1] - mu[1]).abs())
            .max((new_var - var).abs())
            .max((new_pi[0] - pi[0]).abs());
        mu = new_mu;
        var = new_var;
        pi = new_pi;
        if change < CALIBRATION_TOL {
            break;
        }
    }
    if !(mu[0] < mu[1]) {
        return Err(Error::Calibration("mixture means coincide".into()));
    }
    let threshold = 0.5 * (mu[0] + mu[1]) + var * (pi[1] / pi[0]).ln() / (mu[0] - mu[1]);
    Ok(Calibration {
        means: (mu[0], mu[1]),
        variance: var,
        weights: (pi[0], pi[1]),
        iterations,
        threshold,
    })
}

/// Plug-in PLDA log-likelihood ratios between all segment pairs, row-major.
pub fn plugin_scores(embeddings: &[ProbEmbedding], plda: &DiagPlda) -> Result<Vec<f64>> {
    let n = embeddings.len();
    let stats: Vec<_> = embeddings
        .iter()
        .map(|e| ClusterStats::plugin(e.xhat(), plda, 1.0))
        .collect::<Result<_>>()?;
    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s = delta(&stats[i], &stats[j]);
            sim[i * n + j] = s;
            sim[j * n + i] = s;
        }
    }
    Ok(sim)
}

/// Stopping threshold for the baseline: calibrated on the upper-triangle
/// scores, with 0 as the fallback when there are too few or degenerate scores.
pub fn baseline_threshold(sim: &[f64], n: usize) -> f64 {
    let mut scores = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            scores.push(sim[i * n + j]);
        }
    }
    match unsupervised_calibration(&scores) {
        Ok(t) => t,
        Err(e) => {
            log::warn!("calibration unavailable ({e}); using threshold 0");
            0.0
        }
    }
}

/// Average-linkage AHC on a symmetric similarity matrix. Merges while the
/// best similarity is at least `threshold`. A merged cluster's row is the
/// size-weighted mean of its parents' rows, i.e. the mean similarity over all
/// member pairs.
pub fn average_linkage(sim: &[f64], n: usize, threshold: f64) -> Result<LabelString> {
    if sim.len() != n * n {
        return Err(Error::Shape(format!("similarity matrix has {} entries, want {}", sim.len(), n * n)));
    }
    let mut sim = sim.to_vec();
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut owner: Vec<usize> = (0..n).collect();
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if active[j] && best.is_none_or(|(_, _, b)| sim[i * n + j] > b) {
                    best = Some((i, j, sim[i * n + j]));
                }
            }
        }
        let Some((i, j, s)) = best else { break };
        if !(s >= threshold) {
            break;
        }
        let (si, sj) = (size[i] as f64, size[j] as f64);
        for k in 0..n {
            if active[k] && k != i && k != j {
                let v = (si * sim[i * n + k] + sj * sim[j * n + k]) / (si + sj);
                sim[i * n + k] = v;
                sim[k * n + i] = v;
            }
        }
        size[i] += size[j];
        active[j] = false;
        for o in owner.iter_mut() {
            if *o == j {
                *o = i;
            }
        }
    }
    Ok(canonicalize(&owner))
}

/// Baseline diarization: plug-in scores, calibrated threshold plus
/// `cfg.sigma`.
pub fn ahc_baseline(embeddings: &[ProbEmbedding], plda: &DiagPlda, cfg: &AhcConfig) -> Result<LabelString> {
    cfg.validate()?;
    let n = embeddings.len();
    if n < 2 {
        return Ok(canonicalize(&vec![0; n]));
    }
    let sim = plugin_scores(embeddings, plda)?;
    let threshold = baseline_threshold(&sim, n) + cfg.sigma;
    average_linkage(&sim, n, threshold)
}

/// Dispatches on `cfg.mode`.
pub fn diarize(embeddings: &[ProbEmbedding], plda: &DiagPlda, cfg: &AhcConfig) -> Result<LabelString> {
    match cfg.mode {
        AhcMode::Baseline => ahc_baseline(embeddings, plda, cfg),
        AhcMode::ByTheBook => ahc_by_the_book(embeddings, plda, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partitions::enumerate_rgs;
    use crate::plda::accumulate_scaled;
    use crate::seeding::{self, Stream};
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn random_embeddings(rng: &mut impl Rng, n: usize, dim: usize) -> Vec<ProbEmbedding> {
        (0..n)
            .map(|_| {
                ProbEmbedding::new(
                    (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
                    (0..dim).map(|_| rng.random_range(0.0..3.0)).collect(),
                )
                .unwrap()
            })
            .collect()
    }

    fn random_plda(rng: &mut impl Rng, dim: usize) -> DiagPlda {
        DiagPlda::new((0..dim).map(|_| rng.random_range(0.2..3.0)).collect()).unwrap()
    }

    // log N(x | 0, I + B^-1 ...) ratio straight from the raw embeddings
    fn raw_loglik(members: &[&ProbEmbedding], plda: &DiagPlda) -> f64 {
        let mut ll = 0.0;
        for j in 0..plda.dim() {
            let w = plda.w()[j];
            let (mut a, mut b) = (0.0, 0.0);
            for e in members {
                let p = e.prec()[j];
                let wt = if p == 0.0 { 0.0 } else { w * p / (w + p) };
                a += wt * e.xhat()[j];
                b += wt;
            }
            ll += 0.5 * (a * a / (1.0 + b) - (1.0 + b).ln());
        }
        ll
    }

    #[test]
    fn delta_zero_stats() {
        let z = ClusterStats::zeros(3);
        assert_eq!(merge_delta(&z, &z).unwrap(), 0.0);
        assert!(merge_delta(&z, &ClusterStats::zeros(2)).is_err());
    }

    #[test]
    fn delta_hand_value() {
        let s = ClusterStats {
            a_bar: vec![1.0],
            b_bar: vec![0.5],
            count: 1,
        };
        let want = 0.5 * (4.0 / 2.0 - 2f64.ln()) - (1.0 / 1.5 - 1.5f64.ln());
        let got = merge_delta(&s, &s).unwrap();
        assert!((got - want).abs() < 1e-14);
        assert!((got - 0.3920).abs() < 5e-4, "{got}");
    }

    #[test]
    fn delta_matches_raw_recomputation() {
        let mut rng = seeding::rng(11, Stream::Check);
        for _ in 0..50 {
            let plda = random_plda(&mut rng, 4);
            let embs = random_embeddings(&mut rng, 7, 4);
            let (left, right) = embs.split_at(3);
            let si = accumulate_scaled(left, &plda, 1.0).unwrap();
            let sj = accumulate_scaled(right, &plda, 1.0).unwrap();
            let all: Vec<_> = embs.iter().collect();
            let want = raw_loglik(&all, &plda)
                - raw_loglik(&left.iter().collect::<Vec<_>>(), &plda)
                - raw_loglik(&right.iter().collect::<Vec<_>>(), &plda);
            assert!((merge_delta(&si, &sj).unwrap() - want).abs() < 1e-10);
        }
    }

    #[test]
    fn book_trivial_cases() {
        let plda = DiagPlda::new(vec![1.0, 2.0]).unwrap();
        let one = vec![ProbEmbedding::new(vec![0.3, 0.1], vec![1.0, 1.0]).unwrap()];
        let cfg = AhcConfig::default();
        assert_eq!(ahc_by_the_book(&one, &plda, &cfg).unwrap().to_string(), "1");
        let blind = vec![
            ProbEmbedding::new(vec![0.3, 0.1], vec![0.0, 0.0]).unwrap(),
            ProbEmbedding::new(vec![0.3, 0.1], vec![0.0, 0.0]).unwrap(),
        ];
        assert_eq!(ahc_by_the_book(&blind, &plda, &cfg).unwrap().to_string(), "12");
        assert_eq!(ahc_by_the_book(&[], &plda, &cfg).unwrap().len(), 0);
    }

    #[test]
    fn book_recovers_two_separated_speakers() {
        let mut rng = seeding::rng(3, Stream::Check);
        let dim = 6;
        let plda = DiagPlda::new(vec![20.0; dim]).unwrap();
        let spk: Vec<Vec<f64>> = (0..2)
            .map(|s| (0..dim).map(|k| if k % 2 == s { 2.5 } else { -2.5 }).collect())
            .collect();
        let noise = Normal::new(0.0, 0.2).unwrap();
        let truth: Vec<usize> = (0..30).map(|t| (t / 5) % 2).collect();
        let embs: Vec<_> = truth
            .iter()
            .map(|&s| {
                ProbEmbedding::new(
                    spk[s].iter().map(|m| m + noise.sample(&mut rng)).collect(),
                    vec![25.0; dim],
                )
                .unwrap()
            })
            .collect();
        let got = ahc_by_the_book(&embs, &plda, &AhcConfig::default()).unwrap();
        assert_eq!(got, canonicalize(&truth));
    }

    #[test]
    fn book_merges_increase_loglik_and_match_recomputation() {
        let mut rng = seeding::rng(5, Stream::Check);
        for _ in 0..30 {
            let plda = random_plda(&mut rng, 3);
            let embs = random_embeddings(&mut rng, 12, 3);
            let cfg = AhcConfig::default();
            let stats = segment_stats(&embs, &plda, 1.0).unwrap();
            let mut state = ClusterState::singletons(stats);
            let (_, steps) = ahc_by_the_book_traced(&embs, &plda, &cfg).unwrap();
            let mut prev = state.total_loglik();
            for st in &steps {
                state.merge(st.kept, st.absorbed);
                let members: Vec<Vec<&ProbEmbedding>> = state
                    .active_ids()
                    .map(|c| state.members(c).iter().map(|&m| &embs[m]).collect())
                    .collect();
                let scratch: f64 = members.iter().map(|m| raw_loglik(m, &plda)).sum();
                assert!(st.delta > 0.0 && st.total_loglik > prev);
                assert!((st.total_loglik - scratch).abs() < 1e-9);
                prev = st.total_loglik;
            }
        }
    }

    #[test]
    fn book_never_beats_exhaustive_optimum() {
        let mut rng = seeding::rng(6, Stream::Check);
        for n in 1..=6 {
            let rgs = enumerate_rgs(n).unwrap();
            for _ in 0..20 {
                let plda = random_plda(&mut rng, 2);
                let embs = random_embeddings(&mut rng, n, 2);
                let score = |l: &LabelString| -> f64 {
                    l.clusters().iter().map(|c| raw_loglik(&c.iter().map(|&m| &embs[m]).collect::<Vec<_>>(), &plda)).sum()
                };
                let best = rgs.iter().map(score).fold(f64::NEG_INFINITY, f64::max);
                let got = ahc_by_the_book(&embs, &plda, &AhcConfig::default()).unwrap();
                assert!(score(&got) <= best + 1e-12);
            }
        }
    }

    #[test]
    fn unit_scale_is_noop_and_small_scale_shrinks_gains() {
        let mut rng = seeding::rng(7, Stream::Check);
        let plda = random_plda(&mut rng, 3);
        let embs = random_embeddings(&mut rng, 6, 3);
        let a = segment_stats(&embs, &plda, 1.0).unwrap();
        let b: Vec<_> = embs.iter().map(|e| ClusterStats::segment(e, &plda, 1.0).unwrap()).collect();
        assert_eq!(a, b);
        // gains vanish quadratically in the scale
        let d = |s: f64| {
            let st = segment_stats(&embs, &plda, s).unwrap();
            delta(&st[0], &st[1])
        };
        let r = d(1e-3) / d(1e-4);
        assert!((r - 100.0).abs() < 1.0, "{r}");
    }

    #[test]
    fn labels_are_canonical() {
        let mut rng = seeding::rng(8, Stream::Check);
        let plda = random_plda(&mut rng, 3);
        let embs = random_embeddings(&mut rng, 15, 3);
        for mode in [AhcMode::Baseline, AhcMode::ByTheBook] {
            let cfg = AhcConfig { mode, ..AhcConfig::default() };
            let l = diarize(&embs, &plda, &cfg).unwrap();
            assert_eq!(LabelString::from_blocks(l.blocks().to_vec()).unwrap(), l);
        }
    }

    #[test]
    fn calibration_symmetric_mixture() {
        let mut rng = seeding::rng(9, Stream::Check);
        let lo = Normal::new(-5.0, 1.0).unwrap();
        let hi = Normal::new(5.0, 1.0).unwrap();
        let scores: Vec<f64> = (0..10_000)
            .map(|i| if i % 2 == 0 { lo.sample(&mut rng) } else { hi.sample(&mut rng) })
            .collect();
        let t = unsupervised_calibration(&scores).unwrap();
        assert!(t.abs() < 0.1, "{t}");
        let shifted: Vec<f64> = scores.iter().map(|s| s + 3.25).collect();
        let t2 = unsupervised_calibration(&shifted).unwrap();
        assert!((t2 - t - 3.25).abs() < 1e-6);
    }

    #[test]
    fn calibration_two_points_and_degenerate() {
        let t = unsupervised_calibration(&[0.0, 10.0]).unwrap();
        assert!((t - 5.0).abs() < 1e-6, "{t}");
        assert!(matches!(unsupervised_calibration(&[1.0, 1.0, 1.0]), Err(Error::Calibration(_))));
        assert!(matches!(unsupervised_calibration(&[1.0]), Err(Error::Calibration(_))));
    }

    #[test]
    fn baseline_examples() {
        let plda = DiagPlda::new(vec![5.0, 5.0]).unwrap();
        let e = ProbEmbedding::new(vec![1.5, -0.5], vec![1e12, 1e12]).unwrap();
        let got = ahc_baseline(&[e.clone(), e], &plda, &AhcConfig { mode: AhcMode::Baseline, ..AhcConfig::default() }).unwrap();
        assert_eq!(got.to_string(), "11");

        let mut rng = seeding::rng(10, Stream::Check);
        let embs = random_embeddings(&mut rng, 9, 2);
        let sim = plugin_scores(&embs, &plda).unwrap();
        assert_eq!(average_linkage(&sim, 9, f64::INFINITY).unwrap().n_clusters(), 9);
    }

    #[test]
    fn average_linkage_row_is_mean() {
        // 0 and 1 merge first; then the {0,1} row against 2 is the plain mean
        let sim = vec![
            0.0, 9.0, 1.0, -4.0, //
            9.0, 0.0, 3.0, -5.0, //
            1.0, 3.0, 0.0, -6.0, //
            -4.0, -5.0, -6.0, 0.0,
        ];
        // threshold 2.0: after the first merge the best is mean(1, 3) = 2.0
        let l = average_linkage(&sim, 4, 2.0).unwrap();
        assert_eq!(l.to_string(), "1112");
        let l = average_linkage(&sim, 4, 2.0 + 1e-12).unwrap();
        assert_eq!(l.to_string(), "1123");
    }

    #[test]
    fn ties_go_to_smallest_pair() {
        let plda = DiagPlda::new(vec![1.0]).unwrap();
        let e = ProbEmbedding::new(vec![1.0], vec![1.0]).unwrap();
        let stats = segment_stats(&[e.clone(), e.clone(), e], &plda, 1.0).unwrap();
        let (_, steps) = agglomerate(ClusterState::singletons(stats), 0.0);
        assert_eq!((steps[0].kept, steps[0].absorbed), (0, 1));
    }
}
