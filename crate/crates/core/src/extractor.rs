//! Probabilistic embedding extraction and a synthetic front end.
//!
//! The extractor maps a segment record to `xhat = A·raw` and
//! `prec = softplus(W2·softplus(W1·quality + b1) + b2)`.
//! [`generate_corpus`] stands in for the speech front end: speakers,
//! recordings and noisy embeddings are drawn from a two-covariance law with a
//! per-segment noise level that the quality features reveal only indirectly.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::plda::{joint_diagonalize, keep_top, DiagPlda, FullPlda, ProbEmbedding};
use crate::seeding::{self, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRecord {
    pub raw: Vec<f64>,
    pub quality: Vec<f64>,
    pub duration: f64,
}

impl SegmentRecord {
    pub fn new(raw: Vec<f64>, quality: Vec<f64>, duration: f64) -> Result<Self> {
        if raw.iter().chain(&quality).any(|v| !v.is_finite()) {
            return Err(Error::Domain("segment features must be finite".into()));
        }
        if !(duration.is_finite() && duration > 0.0) {
            return Err(Error::Domain(format!("duration must be > 0, got {duration}")));
        }
        Ok(SegmentRecord {
            raw,
            quality,
            duration,
        })
    }
}

#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

/// Linear-softplus-linear-softplus network producing diagonal precisions.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionNet {
    /// `H × Q`
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    /// `D × H`
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

/// Hidden activations kept for backpropagation.
#[derive(Debug, Clone)]
pub struct NetTrace {
    pub z1: DVector<f64>,
    pub h: DVector<f64>,
    pub z2: DVector<f64>,
}

impl PrecisionNet {
    pub fn zeros(quality_dim: usize, hidden: usize, dim: usize) -> Self {
        PrecisionNet {
            w1: DMatrix::zeros(hidden, quality_dim),
            b1: DVector::zeros(hidden),
            w2: DMatrix::zeros(dim, hidden),
            b2: DVector::zeros(dim),
        }
    }

    pub fn quality_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w2.nrows()
    }

    pub fn forward(&self, quality: &[f64]) -> (Vec<f64>, NetTrace) {
        let q = DVector::from_column_slice(quality);
        let z1 = &self.w1 * q + &self.b1;
        let h = z1.map(softplus);
        let z2 = &self.w2 * &h + &self.b2;
        let prec = z2.iter().map(|&z| softplus(z)).collect();
        (prec, NetTrace { z1, h, z2 })
    }

    fn check(&self) -> Result<()> {
        if self.b1.len() != self.hidden() || self.w2.ncols() != self.hidden() || self.b2.len() != self.dim() {
            return Err(Error::Shape("precision net layer sizes disagree".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorModel {
    /// `D × R` mean transform.
    pub transform: DMatrix<f64>,
    pub net: PrecisionNet,
}

impl ExtractorModel {
    pub fn new(transform: DMatrix<f64>, net: PrecisionNet) -> Result<Self> {
        net.check()?;
        if transform.nrows() != net.dim() {
            return Err(Error::Shape(format!(
                "transform outputs {} dims, precision net {}",
                transform.nrows(),
                net.dim()
            )));
        }
        let m = ExtractorModel { transform, net };
        if m.params_iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("extractor parameters must be finite".into()));
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.transform.nrows()
    }

    pub fn raw_dim(&self) -> usize {
        self.transform.ncols()
    }

    pub fn quality_dim(&self) -> usize {
        self.net.quality_dim()
    }

    fn params_iter(&self) -> impl Iterator<Item = &f64> {
        self.transform
            .iter()
            .chain(self.net.w1.iter())
            .chain(self.net.b1.iter())
            .chain(self.net.w2.iter())
            .chain(self.net.b2.iter())
    }

    fn check_record(&self, rec: &SegmentRecord) -> Result<()> {
        if rec.raw.len() != self.raw_dim() {
            return Err(Error::Shape(format!(
                "raw vector has {} dims, model expects {}",
                rec.raw.len(),
                self.raw_dim()
            )));
        }
        if rec.quality.len() != self.quality_dim() {
            return Err(Error::Shape(format!(
                "quality vector has {} dims, model expects {}",
                rec.quality.len(),
                self.quality_dim()
            )));
        }
        Ok(())
    }

    pub fn extract(&self, rec: &SegmentRecord) -> Result<ProbEmbedding> {
        Ok(self.extract_traced(rec)?.0)
    }

    pub fn extract_traced(&self, rec: &SegmentRecord) -> Result<(ProbEmbedding, NetTrace)> {
        self.check_record(rec)?;
        let xhat = (&self.transform * DVector::from_column_slice(&rec.raw))
            .iter()
            .copied()
            .collect();
        let (prec, trace) = self.net.forward(&rec.quality);
        Ok((ProbEmbedding::new(xhat, prec)?, trace))
    }

    /// Means only, for plug-in scoring.
    pub fn extract_mean(&self, rec: &SegmentRecord) -> Result<Vec<f64>> {
        self.check_record(rec)?;
        Ok((&self.transform * DVector::from_column_slice(&rec.raw))
            .iter()
            .copied()
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitConfig {
    pub seed: u64,
    /// Initial precisions satisfy `prec_j >= margin · w_j`.
    pub margin: f64,
    /// Hidden width; `None` means `2·D`.
    pub hidden: Option<usize>,
    /// Keep only the `k` diagonalized dimensions with the largest `w`.
    pub keep: Option<usize>,
    /// Standard deviation of the random weights, divided by `sqrt(fan_in)`.
    pub weight_scale: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            seed: 0,
            margin: 100.0,
            hidden: None,
            keep: None,
            weight_scale: 0.1,
        }
    }
}

/// Initializes the extractor so that it reproduces plug-in scoring with the
/// given PLDA: the mean transform diagonalizes it and the precision net
/// outputs precisions far above the within-speaker precisions.
pub fn init_extractor(
    full: &FullPlda,
    quality_dim: usize,
    cfg: &InitConfig,
) -> Result<(ExtractorModel, DiagPlda)> {
    if !(cfg.margin.is_finite() && cfg.margin > 0.0) {
        return Err(Error::Domain(format!("margin must be > 0, got {}", cfg.margin)));
    }
    if quality_dim == 0 {
        return Err(Error::Shape("quality vector must have at least one dim".into()));
    }
    let (transform, plda) = joint_diagonalize(full)?;
    let (transform, plda) = match cfg.keep {
        Some(k) => keep_top(&transform, &plda, k)?,
        None => (transform, plda),
    };
    let dim = plda.dim();
    let hidden = cfg.hidden.unwrap_or(2 * dim);
    if hidden == 0 {
        return Err(Error::Shape("hidden width must be > 0".into()));
    }
    let mut rng = seeding::rng(cfg.seed, Stream::Init);
    let mut gauss = |scale: f64| -> f64 {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * scale
    };
    let s1 = cfg.weight_scale / (quality_dim as f64).sqrt();
    let s2 = cfg.weight_scale / (hidden as f64).sqrt();
    let w1 = DMatrix::from_fn(hidden, quality_dim, |_, _| gauss(s1));
    let b1 = DVector::zeros(hidden);
    let w2 = DMatrix::from_fn(dim, hidden, |_, _| gauss(s2));
    // softplus(b2_j) = 1.5 · margin · w_j leaves room for the small W2·h term
    let b2 = DVector::from_iterator(dim, plda.w().iter().map(|w| softplus_inv(1.5 * cfg.margin * w)));
    let model = ExtractorModel::new(transform, PrecisionNet { w1, b1, w2, b2 })?;
    Ok((model, plda))
}

/// Per-segment noise law of the synthetic front end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseLaw {
    /// No segment noise: raw embeddings are clean.
    Clean,
    /// `log σ²` uniform on `[lo, hi]`.
    LogUniform { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    /// Dimension of the speaker/embedding space (`R`; equal to `D` unless
    /// dimensions are dropped at initialization).
    pub raw_dim: usize,
    /// Quality features: `quality_dim - 1` noisy noise-level readings plus
    /// the duration.
    pub quality_dim: usize,
    pub n_speakers: usize,
    pub n_recordings: usize,
    pub segments_per_recording: usize,
    pub speakers_per_recording: (usize, usize),
    /// Probability that the next segment keeps the current speaker.
    pub stay_prob: f64,
    /// Within-speaker precision range of the clean law (geometric spacing).
    pub within_precision: (f64, f64),
    pub noise: NoiseLaw,
    /// Log-normal jitter of the noise readings in the quality features.
    pub reading_jitter: f64,
    /// Emit inverted readings (`1/σ`) instead of `σ`.
    pub reciprocal_quality: bool,
    /// Share of speakers (and of recordings) used for the held-out pool.
    pub heldout_fraction: f64,
    pub id_prefix: String,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            raw_dim: 8,
            quality_dim: 4,
            n_speakers: 200,
            n_recordings: 400,
            segments_per_recording: 48,
            speakers_per_recording: (2, 4),
            stay_prob: 0.7,
            within_precision: (0.5, 4.0),
            noise: NoiseLaw::LogUniform { lo: -3.0, hi: 1.0 },
            reading_jitter: 0.15,
            reciprocal_quality: true,
            heldout_fraction: 0.25,
            id_prefix: "rec".into(),
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Domain(m.to_string()));
        if self.raw_dim == 0 || self.quality_dim < 2 {
            return bad("raw_dim must be >= 1 and quality_dim >= 2");
        }
        if self.n_speakers < 2 || self.n_recordings == 0 || self.segments_per_recording == 0 {
            return bad("need >= 2 speakers and >= 1 recording with >= 1 segment");
        }
        let (lo, hi) = self.speakers_per_recording;
        if lo == 0 || lo > hi {
            return bad("speakers_per_recording must satisfy 1 <= lo <= hi");
        }
        if !(0.0..=1.0).contains(&self.stay_prob) {
            return bad("stay_prob must be in [0, 1]");
        }
        let (wl, wh) = self.within_precision;
        if !(wl > 0.0 && wl <= wh && wh.is_finite()) {
            return bad("within_precision must satisfy 0 < lo <= hi");
        }
        if let NoiseLaw::LogUniform { lo, hi } = self.noise {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad("noise log-variance range must satisfy lo <= hi");
            }
        }
        if !(self.reading_jitter >= 0.0) {
            return bad("reading_jitter must be >= 0");
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return bad("heldout_fraction must be in [0, 1)");
        }
        let heldout_spk = (self.n_speakers as f64 * self.heldout_fraction).round() as usize;
        if heldout_spk > 0 && heldout_spk < hi || self.n_speakers - heldout_spk < hi {
            return bad("speaker pools too small for speakers_per_recording");
        }
        Ok(())
    }

    /// Within-speaker precisions of the clean law, decreasing.
    pub fn true_within_precision(&self) -> Vec<f64> {
        let (lo, hi) = self.within_precision;
        let r = self.raw_dim;
        (0..r)
            .map(|j| {
                let f = if r == 1 { 0.0 } else { j as f64 / (r - 1) as f64 };
                hi * (lo / hi).powf(f)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: String,
    pub start: f64,
    pub speaker: String,
    pub record: SegmentRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub id: String,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub raw_dim: usize,
    pub quality_dim: usize,
    pub recordings: Vec<Recording>,
}

impl Corpus {
    pub fn n_segments(&self) -> usize {
        self.recordings.iter().map(|r| r.segments.len()).sum()
    }

    pub fn speakers(&self) -> Vec<String> {
        let mut s: Vec<String> = self
            .recordings
            .iter()
            .flat_map(|r| r.segments.iter().map(|s| s.speaker.clone()))
            .collect();
        s.sort();
        s.dedup();
        s
    }

    /// Splits recordings into two corpora with disjoint speakers.
    ///
    /// Recordings that share a speaker are grouped; groups are moved to the
    /// held-out side, latest recordings first, while it stays within
    /// `heldout_fraction` of the speakers. Groups that would overshoot are
    /// skipped. If none fits, the smallest group short of everything is held
    /// out.
    pub fn split_by_speaker(&self, heldout_fraction: f64) -> (Corpus, Corpus) {
        let n_rec = self.recordings.len();
        // union-find over recordings, joined through shared speakers
        let mut parent: Vec<usize> = (0..n_rec).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        let mut owner: std::collections::HashMap<&str, usize> = Default::default();
        for (i, rec) in self.recordings.iter().enumerate() {
            for s in &rec.segments {
                if let Some(&j) = owner.get(s.speaker.as_str()) {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a.max(b)] = a.min(b);
                } else {
                    owner.insert(&s.speaker, i);
                }
            }
        }
        let n_spk = owner.len();
        let target = (n_spk as f64 * heldout_fraction).round() as usize;
        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for i in 0..n_rec {
            let root = find(&mut parent, i);
            groups.entry(root).or_default().push(i);
        }
        let mut held = vec![false; n_rec];
        let mut held_spk = 0usize;
        let mut order: Vec<(&Vec<usize>, usize)> = groups
            .values()
            .map(|g| {
                let mut spk: Vec<&str> = g
                    .iter()
                    .flat_map(|&i| self.recordings[i].segments.iter().map(|s| s.speaker.as_str()))
                    .collect();
                spk.sort_unstable();
                spk.dedup();
                (g, spk.len())
            })
            .collect();
        order.sort_by_key(|(g, _)| std::cmp::Reverse(*g.last().unwrap()));
        let mut chosen: Vec<&Vec<usize>> = Vec::new();
        for &(g, k) in &order {
            if held_spk + k <= target {
                held_spk += k;
                chosen.push(g);
            }
        }
        // nothing fits: hold out the smallest group that leaves training data
        if chosen.is_empty() && target > 0 {
            if let Some(&(g, _)) = order.iter().filter(|(_, k)| *k < n_spk).min_by_key(|(_, k)| *k) {
                chosen.push(g);
            }
        }
        for &i in chosen.into_iter().flatten() {
            held[i] = true;
        }
        let empty = Corpus {
            raw_dim: self.raw_dim,
            quality_dim: self.quality_dim,
            recordings: Vec::new(),
        };
        let (mut train, mut heldout) = (empty.clone(), empty);
        for (rec, h) in self.recordings.iter().zip(held) {
            if h {
                heldout.recordings.push(rec.clone());
            } else {
                train.recordings.push(rec.clone());
            }
        }
        (train, heldout)
    }
}

/// A synthetic corpus with the quantities the generator knows but a real
/// front end would not.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    /// Per recording, per segment: the precision of the segment noise in the
    /// speaker space (`1/σ²`, infinite for clean segments).
    pub oracle_precisions: Vec<Vec<f64>>,
    /// The clean two-covariance law in raw coordinates.
    pub reference: FullPlda,
    /// Speaker identity vectors, in speaker-index order.
    pub speaker_vectors: Vec<Vec<f64>>,
}

fn random_orthogonal(rng: &mut impl Rng, r: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(r, r, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z
    });
    let qr = g.qr();
    let mut q = qr.q();
    let rr = qr.r();
    for j in 0..r {
        if rr[(j, j)] < 0.0 {
            let mut col = q.column_mut(j);
            col.neg_mut();
        }
    }
    q
}

/// Draws a corpus from the synthetic law:
/// `y_k ~ N(0, I)`, clean `x = y_k + N(0, diag(1/w))`, observed
/// `raw = M (x + N(0, σ² I))` with a fixed random mixing matrix `M` and a
/// per-segment noise level `σ²`.
pub fn generate_corpus(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = seeding::rng(cfg.seed, Stream::Corpus);
    let r = cfg.raw_dim;
    let w_true = cfg.true_within_precision();

    let rot = random_orthogonal(&mut rng, r);
    let scales = DVector::from_fn(r, |_, _| rng.random_range(0.5..2.0));
    let mix = &rot * DMatrix::from_diagonal(&scales);
    let between = &mix * mix.transpose();
    let within = &mix
        * DMatrix::from_diagonal(&DVector::from_iterator(r, w_true.iter().map(|w| 1.0 / w)))
        * mix.transpose();
    let sym = |m: DMatrix<f64>| (&m + m.transpose()) * 0.5;
    let reference = FullPlda::new(sym(between), sym(within))?;

    let normal = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let speaker_vectors: Vec<Vec<f64>> = (0..cfg.n_speakers)
        .map(|_| (0..r).map(|_| normal(&mut rng)).collect())
        .collect();

    let n_held_spk = (cfg.n_speakers as f64 * cfg.heldout_fraction).round() as usize;
    let n_train_spk = cfg.n_speakers - n_held_spk;
    let n_held_rec = (cfg.n_recordings as f64 * cfg.heldout_fraction).round() as usize;
    let n_train_rec = cfg.n_recordings - n_held_rec;

    let mut recordings = Vec::with_capacity(cfg.n_recordings);
    let mut oracle_precisions = Vec::with_capacity(cfg.n_recordings);
    for rec_idx in 0..cfg.n_recordings {
        let pool: Vec<usize> = if rec_idx < n_train_rec || n_held_spk == 0 {
            (0..n_train_spk).collect()
        } else {
            (n_train_spk..cfg.n_speakers).collect()
        };
        let (klo, khi) = cfg.speakers_per_recording;
        let k = rng.random_range(klo..=khi).min(pool.len());
        let chosen: Vec<usize> = rand::seq::index::sample(&mut rng, pool.len(), k)
            .into_iter()
            .map(|i| pool[i])
            .collect();

        let mut segments = Vec::with_capacity(cfg.segments_per_recording);
        let mut oracle = Vec::with_capacity(cfg.segments_per_recording);
        let mut current = rng.random_range(0..k);
        let mut start = 0.0f64;
        for seg_idx in 0..cfg.segments_per_recording {
            if seg_idx > 0 && k > 1 && !rng.random_bool(cfg.stay_prob) {
                let step = rng.random_range(1..k);
                current = (current + step) % k;
            }
            let spk = chosen[current];
            let (log_var, frac_clean) = match cfg.noise {
                NoiseLaw::Clean => (f64::NEG_INFINITY, 1.0),
                NoiseLaw::LogUniform { lo, hi } => {
                    let q = if hi > lo { rng.random_range(lo..hi) } else { lo };
                    let f = if hi > lo { (hi - q) / (hi - lo) } else { 0.5 };
                    (q, f)
                }
            };
            let sigma2 = log_var.exp();
            let sigma = sigma2.sqrt();
            let latent: DVector<f64> = DVector::from_fn(r, |j, _| {
                speaker_vectors[spk][j]
                    + normal(&mut rng) / w_true[j].sqrt()
                    + sigma * normal(&mut rng)
            });
            let raw: Vec<f64> = (&mix * latent).iter().copied().collect();
            let duration = 0.5 + frac_clean + rng.random_range(0.0..0.1);
            let mut quality = Vec::with_capacity(cfg.quality_dim);
            for _ in 0..cfg.quality_dim - 1 {
                // clean segments read a small floor rather than zero
                let reading = (sigma + 1e-3) * (cfg.reading_jitter * normal(&mut rng)).exp();
                quality.push(if cfg.reciprocal_quality { 1.0 / reading } else { reading });
            }
            quality.push(duration);
            segments.push(Segment {
                id: format!("seg{seg_idx:04}"),
                start,
                speaker: format!("spk{spk:04}"),
                record: SegmentRecord::new(raw, quality, duration)?,
            });
            oracle.push(1.0 / sigma2);
            start += duration;
        }
        recordings.push(Recording {
            id: format!("{}{rec_idx:04}", cfg.id_prefix),
            segments,
        });
        oracle_precisions.push(oracle);
    }

    Ok(SyntheticCorpus {
        corpus: Corpus {
            raw_dim: r,
            quality_dim: cfg.quality_dim,
            recordings,
        },
        oracle_precisions,
        reference,
        speaker_vectors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(raw: &[f64], q: &[f64]) -> SegmentRecord {
        SegmentRecord::new(raw.to_vec(), q.to_vec(), 1.0).unwrap()
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((softplus_inv(softplus(3.7)) - 3.7).abs() < 1e-12);
        assert!((softplus_inv(softplus(150.0)) - 150.0).abs() < 1e-12);
        assert!((sigmoid(-800.0)).abs() < 1e-300);
        assert_eq!(sigmoid(800.0), 1.0);
    }

    #[test]
    fn extract_examples() {
        let net = PrecisionNet::zeros(2, 4, 3);
        let m = ExtractorModel::new(DMatrix::identity(3, 3), net).unwrap();
        let e = m.extract(&record(&[1.0, -2.0, 0.5], &[3.0, 4.0])).unwrap();
        assert_eq!(e.xhat(), &[1.0, -2.0, 0.5]);
        for p in e.prec() {
            assert!((p - 2f64.ln()).abs() < 1e-15);
        }
        assert!(matches!(
            m.extract(&record(&[1.0, 2.0], &[3.0, 4.0])),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            m.extract(&record(&[1.0, 2.0, 3.0], &[3.0])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn mean_path_is_homogeneous() {
        let mut rng = seeding::rng(4, Stream::Check);
        let t = DMatrix::from_fn(3, 5, |_, _| rng.random_range(-1.0..1.0));
        let m = ExtractorModel::new(t.clone(), PrecisionNet::zeros(2, 2, 3)).unwrap();
        let m2 = ExtractorModel::new(t * 2.5, PrecisionNet::zeros(2, 2, 3)).unwrap();
        let rec = record(&[0.1, 0.2, -0.3, 0.4, 0.9], &[1.0, 1.0]);
        let a = m.extract(&rec).unwrap();
        let b = m2.extract(&rec).unwrap();
        for (x, y) in a.xhat().iter().zip(b.xhat()) {
            assert!((2.5 * x - y).abs() < 1e-14);
        }
    }

    fn spd(rng: &mut impl Rng, r: usize) -> DMatrix<f64> {
        let g = DMatrix::from_fn(r, r, |_, _| rng.random_range(-1.0..1.0));
        &g * g.transpose() + DMatrix::identity(r, r) * 0.2
    }

    #[test]
    fn init_satisfies_margin() {
        let mut rng = seeding::rng(2, Stream::Check);
        let full = FullPlda::new(spd(&mut rng, 6), spd(&mut rng, 6)).unwrap();
        let (model, plda) = init_extractor(&full, 4, &InitConfig::default()).unwrap();
        assert_eq!(model.net.hidden(), 12);
        for _ in 0..200 {
            let q: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            let raw: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let e = model.extract(&record(&raw, &q)).unwrap();
            for (p, w) in e.prec().iter().zip(plda.w()) {
                assert!(p / w >= 100.0);
            }
        }
        let bad = InitConfig {
            margin: 0.0,
            ..InitConfig::default()
        };
        assert!(matches!(init_extractor(&full, 4, &bad), Err(Error::Domain(_))));
        let keep = InitConfig {
            keep: Some(4),
            ..InitConfig::default()
        };
        let (m, p) = init_extractor(&full, 4, &keep).unwrap();
        assert_eq!((m.dim(), m.raw_dim(), p.dim()), (4, 6, 4));
    }

    #[test]
    fn corpus_is_deterministic() {
        let cfg = SyntheticConfig {
            n_recordings: 4,
            n_speakers: 20,
            ..SyntheticConfig::default()
        };
        let a = generate_corpus(&cfg).unwrap();
        let b = generate_corpus(&cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(&SyntheticConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.corpus, c.corpus);
    }

    #[test]
    fn clean_corpus_has_infinite_oracle_precision() {
        let cfg = SyntheticConfig {
            n_recordings: 2,
            n_speakers: 20,
            noise: NoiseLaw::Clean,
            ..SyntheticConfig::default()
        };
        let s = generate_corpus(&cfg).unwrap();
        assert!(s.oracle_precisions.iter().flatten().all(|p| p.is_infinite()));
    }

    #[test]
    fn heldout_recordings_use_heldout_speakers() {
        let cfg = SyntheticConfig {
            n_recordings: 12,
            n_speakers: 40,
            ..SyntheticConfig::default()
        };
        let s = generate_corpus(&cfg).unwrap();
        let (train, held) = s.corpus.split_by_speaker(cfg.heldout_fraction);
        assert_eq!(train.recordings.len() + held.recordings.len(), 12);
        assert!(held.recordings.len() >= 3);
        let held_ids: Vec<&str> = held.recordings.iter().map(|r| r.id.as_str()).collect();
        for id in ["rec0009", "rec0010", "rec0011"] {
            assert!(held_ids.contains(&id));
        }
        let ts = train.speakers();
        assert!(held.speakers().iter().all(|s| !ts.contains(s)));
    }

    #[test]
    fn split_skips_groups_larger_than_the_target() {
        // the latest recordings all share one speaker and form a group too
        // big to hold out; the two early recordings must be taken instead
        let rec = |i: usize, speakers: &[String]| Recording {
            id: format!("rec{i}"),
            segments: speakers
                .iter()
                .enumerate()
                .map(|(k, spk)| Segment {
                    id: format!("s{k}"),
                    start: k as f64,
                    speaker: spk.clone(),
                    record: record(&[0.0], &[0.0]),
                })
                .collect(),
        };
        let mut recordings = Vec::new();
        for i in 0..10 {
            let speakers = if i < 2 {
                vec![format!("a{i}"), format!("b{i}")]
            } else {
                vec!["common".to_string(), format!("u{i}")]
            };
            recordings.push(rec(i, &speakers));
        }
        let corpus = Corpus {
            raw_dim: 1,
            quality_dim: 1,
            recordings,
        };
        let (train, held) = corpus.split_by_speaker(0.3);
        let ids: Vec<&str> = held.recordings.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["rec0", "rec1"]);
        assert_eq!(train.recordings.len(), 8);
    }

    #[test]
    fn speaker_vectors_are_standard_normal() {
        let cfg = SyntheticConfig {
            raw_dim: 3,
            n_speakers: 100_000,
            n_recordings: 1,
            segments_per_recording: 1,
            ..SyntheticConfig::default()
        };
        let s = generate_corpus(&cfg).unwrap();
        let n = s.speaker_vectors.len() as f64;
        let mut cov = [[0.0; 3]; 3];
        for y in &s.speaker_vectors {
            for i in 0..3 {
                for j in 0..3 {
                    cov[i][j] += y[i] * y[j] / n;
                }
            }
        }
        for (i, row) in cov.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 0.02, "cov[{i}][{j}] = {v}");
            }
        }
    }
}
