//! Discriminative training with the `B_n`-way clustering cross-entropy.
//!
//! A trial is an `n`-tuple of segments drawn from one recording together with
//! its true clustering. The loss is `-log P(L_true | S)` under the exact
//! clustering posterior, averaged over a mini-batch. Gradients are
//! backpropagated by hand through the softmax over hypotheses, the subset
//! tables, the pooled statistics, the evidence weights, the mean transform and
//! the precision network. The within-speaker precisions are trained as
//! `log w`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::extractor::{sigmoid, Corpus, ExtractorModel, NetTrace, SegmentRecord};
use crate::partitions::{canonicalize, fit_crp, CrpParams, LabelString, PartitionTables};
use crate::plda::{score_tuple, weight, DiagPlda};
use crate::seeding::{self, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct OctetTrial {
    pub records: Vec<SegmentRecord>,
    pub truth: LabelString,
}

/// Draws trials from a corpus: pick an eligible recording uniformly, then `n`
/// of its segments uniformly without replacement, in random order.
pub struct OctetSampler<'a> {
    corpus: &'a Corpus,
    eligible: Vec<usize>,
    n: usize,
}

impl<'a> OctetSampler<'a> {
    pub fn new(corpus: &'a Corpus, n: usize) -> Result<Self> {
        if corpus.recordings.is_empty() {
            return Err(Error::Data("cannot sample trials from an empty corpus".into()));
        }
        let mut eligible = Vec::new();
        for (i, rec) in corpus.recordings.iter().enumerate() {
            if rec.segments.len() >= n {
                eligible.push(i);
            } else {
                log::warn!(
                    "recording {} has {} segments (< {n}); skipped for trial sampling",
                    rec.id,
                    rec.segments.len()
                );
            }
        }
        if eligible.is_empty() {
            return Err(Error::Data(format!("no recording has at least {n} segments")));
        }
        Ok(OctetSampler { corpus, eligible, n })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> OctetTrial {
        let rec = &self.corpus.recordings[self.eligible[rng.random_range(0..self.eligible.len())]];
        let idx = rand::seq::index::sample(rng, rec.segments.len(), self.n);
        let segs: Vec<_> = idx.iter().map(|i| &rec.segments[i]).collect();
        OctetTrial {
            records: segs.iter().map(|s| s.record.clone()).collect(),
            truth: canonicalize(&segs.iter().map(|s| s.speaker.as_str()).collect::<Vec<_>>()),
        }
    }

    /// One epoch's worth of trials: `Σ_rec floor(len / n)` over eligible
    /// recordings.
    pub fn epoch_len(&self) -> usize {
        self.eligible
            .iter()
            .map(|&i| self.corpus.recordings[i].segments.len() / self.n)
            .sum()
    }
}

/// An endless stream of trials from `corpus`.
pub fn sample_octets<'a, R: Rng + 'a>(
    corpus: &'a Corpus,
    n: usize,
    mut rng: R,
) -> Result<impl Iterator<Item = OctetTrial> + 'a> {
    let sampler = OctetSampler::new(corpus, n)?;
    Ok(std::iter::repeat_with(move || sampler.sample(&mut rng)))
}

/// Gradient of the loss with respect to every trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub log_w: DVector<f64>,
    pub transform: DMatrix<f64>,
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

impl GradientSet {
    pub fn zeros_like(model: &ExtractorModel) -> Self {
        GradientSet {
            log_w: DVector::zeros(model.dim()),
            transform: DMatrix::zeros(model.dim(), model.raw_dim()),
            w1: DMatrix::zeros(model.net.w1.nrows(), model.net.w1.ncols()),
            b1: DVector::zeros(model.net.b1.len()),
            w2: DMatrix::zeros(model.net.w2.nrows(), model.net.w2.ncols()),
            b2: DVector::zeros(model.net.b2.len()),
        }
    }

    pub fn add_assign(&mut self, o: &GradientSet) {
        self.log_w += &o.log_w;
        self.transform += &o.transform;
        self.w1 += &o.w1;
        self.b1 += &o.b1;
        self.w2 += &o.w2;
        self.b2 += &o.b2;
    }

    pub fn scale(&mut self, s: f64) {
        self.log_w *= s;
        self.transform *= s;
        self.w1 *= s;
        self.b1 *= s;
        self.w2 *= s;
        self.b2 *= s;
    }

    /// `(name, values)` of every group, in a fixed order.
    pub fn groups(&self) -> [(&'static str, &[f64]); 6] {
        [
            ("log_w", self.log_w.as_slice()),
            ("transform", self.transform.as_slice()),
            ("w1", self.w1.as_slice()),
            ("b1", self.b1.as_slice()),
            ("w2", self.w2.as_slice()),
            ("b2", self.b2.as_slice()),
        ]
    }

    pub fn groups_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.log_w.as_mut_slice(),
            self.transform.as_mut_slice(),
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
        ]
    }

    pub fn norm(&self) -> f64 {
        self.groups()
            .iter()
            .flat_map(|(_, v)| v.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.groups().iter().all(|(_, v)| v.iter().all(|x| x.is_finite()))
    }
}

/// Model state being trained.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: ExtractorModel,
    pub log_w: DVector<f64>,
}

impl TrainState {
    pub fn new(model: ExtractorModel, plda: &DiagPlda) -> Result<Self> {
        if model.dim() != plda.dim() {
            return Err(Error::Shape(format!(
                "extractor outputs {} dims, PLDA has {}",
                model.dim(),
                plda.dim()
            )));
        }
        Ok(TrainState {
            model,
            log_w: DVector::from_iterator(plda.dim(), plda.w().iter().map(|w| w.ln())),
        })
    }

    pub fn plda(&self) -> Result<DiagPlda> {
        DiagPlda::new(self.log_w.iter().map(|v| v.exp()).collect())
    }

    /// Mutable views of every parameter group, in [`GradientSet::groups`]
    /// order.
    pub fn groups_mut(&mut self) -> [&mut [f64]; 6] {
        let net = &mut self.model.net;
        [
            self.log_w.as_mut_slice(),
            self.model.transform.as_mut_slice(),
            net.w1.as_mut_slice(),
            net.b1.as_mut_slice(),
            net.w2.as_mut_slice(),
            net.b2.as_mut_slice(),
        ]
    }
}

fn check_trial(trial: &OctetTrial, tables: &PartitionTables) -> Result<usize> {
    if trial.records.len() != tables.n() || trial.truth.len() != tables.n() {
        return Err(Error::Shape(format!(
            "trial has {} segments, tables are for n = {}",
            trial.records.len(),
            tables.n()
        )));
    }
    tables.index_of(&trial.truth).ok_or_else(|| {
        Error::Internal(format!("truth {} is not a canonical label string", trial.truth))
    })
}

/// Loss of one trial and, when requested, its gradient.
fn trial_objective(
    trial: &OctetTrial,
    state: &TrainState,
    w: &[f64],
    tables: &PartitionTables,
    want_grad: bool,
) -> Result<(f64, Option<GradientSet>)> {
    let truth = check_trial(trial, tables)?;
    let model = &state.model;
    let n = tables.n();
    let dim = w.len();

    let mut xhat = Vec::with_capacity(n * dim);
    let mut prec = Vec::with_capacity(n * dim);
    let mut traces: Vec<NetTrace> = Vec::with_capacity(n);
    for rec in &trial.records {
        let (emb, trace) = model.extract_traced(rec)?;
        xhat.extend_from_slice(emb.xhat());
        prec.extend_from_slice(emb.prec());
        traces.push(trace);
    }
    let e: Vec<f64> = prec
        .iter()
        .enumerate()
        .map(|(i, &b)| weight(w[i % dim], b))
        .collect();
    let wm: Vec<f64> = e.iter().zip(&xhat).map(|(e, x)| e * x).collect();
    let scores = score_tuple(&wm, &e, dim, tables)?;
    let loss = -scores.log_posterior[truth];
    if !want_grad {
        return Ok((loss, None));
    }

    // d loss / d score_r = p_r - [r == truth]
    let mut g: Vec<f64> = scores.log_posterior.iter().map(|lp| lp.exp()).collect();
    g[truth] -= 1.0;
    let g_subset = tables.part_subset().transpose_mul_vec(&g);

    let n_sub = tables.n_subsets();
    let mut d_a = vec![0.0; n_sub * dim];
    let mut d_b = vec![0.0; n_sub * dim];
    for c in 0..n_sub {
        let gc = g_subset[c];
        if gc == 0.0 {
            continue;
        }
        for j in 0..dim {
            let a = scores.subset_a[c * dim + j];
            let inv = 1.0 / (1.0 + scores.subset_b[c * dim + j]);
            d_a[c * dim + j] = gc * a * inv;
            d_b[c * dim + j] = -0.5 * gc * (a * a * inv * inv + inv);
        }
    }
    let d_wm = tables.seg_subset().mul_mat(&d_a, dim);
    let d_we = tables.seg_subset().mul_mat(&d_b, dim);

    let mut grad = GradientSet::zeros_like(model);
    for (t, rec) in trial.records.iter().enumerate() {
        let mut d_xhat = DVector::zeros(dim);
        let mut d_prec = DVector::zeros(dim);
        for j in 0..dim {
            let i = t * dim + j;
            let (wj, bj) = (w[j], prec[i]);
            let de = d_wm[i] * xhat[i] + d_we[i];
            d_xhat[j] = d_wm[i] * e[i];
            let denom = wj + bj;
            let r = bj / denom;
            let s = wj / denom;
            // de/dw = (b/(w+b))², de/db = (w/(w+b))²; d/dlog w = w·d/dw
            grad.log_w[j] += de * r * r * wj;
            d_prec[j] = de * s * s;
        }
        let raw = DVector::from_column_slice(&rec.raw);
        grad.transform += &d_xhat * raw.transpose();

        let tr = &traces[t];
        let dz2 = d_prec.component_mul(&tr.z2.map(sigmoid));
        grad.w2 += &dz2 * tr.h.transpose();
        grad.b2 += &dz2;
        let dh = model.net.w2.transpose() * &dz2;
        let dz1 = dh.component_mul(&tr.z1.map(sigmoid));
        let q = DVector::from_column_slice(&rec.quality);
        grad.w1 += &dz1 * q.transpose();
        grad.b1 += &dz1;
    }
    Ok((loss, Some(grad)))
}

fn batch_objective(
    batch: &[OctetTrial],
    state: &TrainState,
    tables: &PartitionTables,
    want_grad: bool,
) -> Result<(f64, Option<GradientSet>)> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let w: Vec<f64> = state.log_w.iter().map(|v| v.exp()).collect();
    let parts: Vec<(f64, Option<GradientSet>)> = batch
        .par_iter()
        .map(|t| trial_objective(t, state, &w, tables, want_grad))
        .collect::<Result<_>>()?;
    // ordered reduction, independent of scheduling
    let inv = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = want_grad.then(|| GradientSet::zeros_like(&state.model));
    for (l, g) in &parts {
        loss += l;
        if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
            acc.add_assign(g);
        }
    }
    if let Some(g) = grad.as_mut() {
        g.scale(inv);
    }
    Ok((loss * inv, grad))
}

/// Mean of `-log P(L_true | S)` over the batch.
pub fn cross_entropy(
    batch: &[OctetTrial],
    model: &ExtractorModel,
    plda: &DiagPlda,
    tables: &PartitionTables,
) -> Result<f64> {
    let state = TrainState::new(model.clone(), plda)?;
    Ok(batch_objective(batch, &state, tables, false)?.0)
}

/// Exact gradient of [`cross_entropy`]; `w` enters through `log w`.
pub fn gradients(
    batch: &[OctetTrial],
    model: &ExtractorModel,
    plda: &DiagPlda,
    tables: &PartitionTables,
) -> Result<GradientSet> {
    let state = TrainState::new(model.clone(), plda)?;
    Ok(batch_objective(batch, &state, tables, true)?.1.unwrap())
}

/// Loss and gradient together, on a training state.
pub fn loss_and_gradients(
    batch: &[OctetTrial],
    state: &TrainState,
    tables: &PartitionTables,
) -> Result<(f64, GradientSet)> {
    let (l, g) = batch_objective(batch, state, tables, true)?;
    Ok((l, g.unwrap()))
}

/// Finite-difference step used by [`gradient_check`].
pub const FD_STEP: f64 = 1e-5;
/// Tolerance on [`relative_error`].
pub const FD_TOL: f64 = 1e-5;
/// Magnitude floor in the relative-error denominator.
pub const FD_FLOOR: f64 = 1e-4;

/// `|a - b| / max(|a|, |b|, FD_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error per parameter group.
    pub max_rel_err: Vec<(&'static str, f64)>,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_err.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.worst() < FD_TOL
    }
}

/// Compares analytic gradients with central differences of the loss in every
/// parameter.
pub fn gradient_check(
    batch: &[OctetTrial],
    state: &TrainState,
    tables: &PartitionTables,
) -> Result<GradCheckReport> {
    let (_, analytic) = loss_and_gradients(batch, state, tables)?;
    let names: Vec<&'static str> = analytic.groups().iter().map(|(n, _)| *n).collect();
    let values: Vec<Vec<f64>> = analytic.groups().iter().map(|(_, v)| v.to_vec()).collect();
    let mut probe = state.clone();
    let mut out = Vec::new();
    for (gi, name) in names.iter().enumerate() {
        let mut worst = 0.0f64;
        for k in 0..values[gi].len() {
            let orig = probe.groups_mut()[gi][k];
            probe.groups_mut()[gi][k] = orig + FD_STEP;
            let up = batch_objective(batch, &probe, tables, false)?.0;
            probe.groups_mut()[gi][k] = orig - FD_STEP;
            let down = batch_objective(batch, &probe, tables, false)?.0;
            probe.groups_mut()[gi][k] = orig;
            let fd = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(values[gi][k], fd));
        }
        out.push((*name, worst));
    }
    Ok(GradCheckReport { max_rel_err: out })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Tuple size.
    pub n: usize,
    pub batch_size: usize,
    /// Learning rate of the precision network.
    pub lr_net: f64,
    /// PLDA and mean-transform rate as a fraction of `lr_net`.
    pub lr_ratio: f64,
    pub momentum: f64,
    /// Rescale the PLDA-side and network-side gradients so each has at most
    /// this norm before the momentum update.
    pub clip_norm: Option<f64>,
    pub epochs: usize,
    pub seed: u64,
    /// Partition prior; fitted to the training set when `None`.
    pub crp: Option<CrpParams>,
    pub train_net: bool,
    pub train_plda: bool,
    /// Run [`gradient_check`] on 10 random batches before training.
    pub gradient_check: bool,
    pub heldout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n: 8,
            batch_size: 100,
            lr_net: 1.0,
            lr_ratio: 1e-4,
            momentum: 0.0,
            clip_norm: None,
            epochs: 30,
            seed: 0,
            crp: None,
            train_net: true,
            train_plda: true,
            gradient_check: false,
            heldout_fraction: 0.25,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Domain(m));
        if self.n < 2 || self.n > crate::partitions::MAX_TABLE_N {
            return bad(format!("tuple size n = {} out of range", self.n));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be > 0".into());
        }
        if !(self.lr_net >= 0.0 && self.lr_net.is_finite()) {
            return bad("lr_net must be finite and >= 0".into());
        }
        if !(self.lr_ratio > 0.0 && self.lr_ratio <= 1.0) {
            return bad("lr_ratio must lie in (0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)".into());
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return bad("clip_norm must be finite and > 0".into());
            }
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return bad("heldout_fraction must lie in [0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub heldout: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ExtractorModel,
    pub plda: DiagPlda,
    pub crp: CrpParams,
    /// Row 0 is the initial model.
    pub history: Vec<EpochLoss>,
}

/// The last finite parameters before training diverged.
#[derive(Debug, Clone)]
pub struct Divergence {
    pub epoch: usize,
    pub last_good: TrainState,
}

/// Partition prior fitted so that `E[#speakers]` over the whole training set
/// matches its true speaker count.
pub fn fit_prior(corpus: &Corpus) -> Result<CrpParams> {
    let n_total = corpus.n_segments();
    let n_spk = corpus.speakers().len().max(1);
    Ok(fit_crp(n_total, n_spk as f64)?.params)
}

/// Fixed held-out trials: one epoch's worth from the held-out corpus.
pub fn heldout_trials(corpus: &Corpus, n: usize, seed: u64) -> Result<Vec<OctetTrial>> {
    let sampler = OctetSampler::new(corpus, n)?;
    let mut rng = seeding::rng(seed, Stream::Heldout);
    Ok((0..sampler.epoch_len().max(1)).map(|_| sampler.sample(&mut rng)).collect())
}

fn mean_loss(trials: &[OctetTrial], state: &TrainState, tables: &PartitionTables, bs: usize) -> Result<f64> {
    let mut total = 0.0;
    for chunk in trials.chunks(bs) {
        total += batch_objective(chunk, state, tables, false)?.0 * chunk.len() as f64;
    }
    Ok(total / trials.len() as f64)
}

/// Where [`train_with`] starts from.
#[derive(Debug, Clone)]
pub struct StartPoint {
    pub state: TrainState,
    /// Momentum buffers; zeros when `None`.
    pub velocity: Option<GradientSet>,
    /// Epochs already completed.
    pub epoch: usize,
}

/// Called after every epoch with the loss row, the parameters and the
/// momentum buffers.
pub type EpochHook<'a> = dyn FnMut(&EpochLoss, &TrainState, &GradientSet) -> Result<()> + 'a;

/// Plain mini-batch SGD with two learning-rate groups.
///
/// The corpus is split by speaker into training and held-out parts. Each
/// epoch draws `Σ_rec floor(len/n)` trials. Returns the trained model and the
/// per-epoch mean training and held-out cross-entropies.
pub fn train(
    cfg: &TrainConfig,
    corpus: &Corpus,
    model: ExtractorModel,
    plda: &DiagPlda,
) -> Result<TrainOutcome> {
    let start = StartPoint {
        state: TrainState::new(model, plda)?,
        velocity: None,
        epoch: 0,
    };
    train_with(cfg, corpus, None, start, &mut |_, _, _| Ok(()))
}

/// [`train`] from an arbitrary start point, with a per-epoch hook. Trials of
/// epoch `k` come from a stream that depends only on the seed and `k`, so a
/// resumed run matches an uninterrupted one.
///
/// With `heldout` given, all of `corpus` is used for training and the
/// held-out loss is measured on `heldout` instead of a speaker split.
pub fn train_with(
    cfg: &TrainConfig,
    corpus: &Corpus,
    heldout: Option<&Corpus>,
    start: StartPoint,
    hook: &mut EpochHook<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_set, held_set) = match heldout {
        Some(h) => (corpus.clone(), h.clone()),
        None => corpus.split_by_speaker(cfg.heldout_fraction),
    };
    if held_set.recordings.is_empty() {
        log::warn!("held-out split is empty; held-out loss is computed on the training set");
    }
    let held_source = if held_set.recordings.is_empty() { &train_set } else { &held_set };
    let crp = match cfg.crp {
        Some(c) => c,
        None => fit_prior(&train_set)?,
    };
    let tables = PartitionTables::build(cfg.n, crp)?;
    let sampler = OctetSampler::new(&train_set, cfg.n)?;
    let held = heldout_trials(held_source, cfg.n, cfg.seed)?;
    let mut state = start.state;
    if state.model.raw_dim() != corpus.raw_dim || state.model.quality_dim() != corpus.quality_dim {
        return Err(Error::Shape(format!(
            "model expects raw/quality dims {}/{}, corpus has {}/{}",
            state.model.raw_dim(),
            state.model.quality_dim(),
            corpus.raw_dim,
            corpus.quality_dim
        )));
    }

    if cfg.gradient_check {
        let mut rng = seeding::rng(cfg.seed, Stream::Check);
        for b in 0..10 {
            let batch: Vec<_> = (0..4).map(|_| sampler.sample(&mut rng)).collect();
            let report = gradient_check(&batch, &state, &tables)?;
            if !report.passed() {
                return Err(Error::Numeric(format!(
                    "gradient check failed on batch {b}: {:?}",
                    report.max_rel_err
                )));
            }
        }
        log::info!("gradient check passed on 10 batches");
    }

    let epoch_len = sampler.epoch_len().max(1);
    let lr_plda = cfg.lr_net * cfg.lr_ratio;
    let plda_rate = if cfg.train_plda { lr_plda } else { 0.0 };
    let net_rate = if cfg.train_net { cfg.lr_net } else { 0.0 };
    let rates = [plda_rate, plda_rate, net_rate, net_rate, net_rate, net_rate];
    let mut velocity = start
        .velocity
        .unwrap_or_else(|| GradientSet::zeros_like(&state.model));
    // the starting row is only measured on a fresh start; a resumed run
    // already has it
    let mut history = Vec::new();
    if start.epoch == 0 {
        let mut probe_rng = seeding::rng(cfg.seed, Stream::Check);
        let probe: Vec<_> = (0..epoch_len).map(|_| sampler.sample(&mut probe_rng)).collect();
        history.push(EpochLoss {
            epoch: 0,
            train: mean_loss(&probe, &state, &tables, cfg.batch_size)?,
            heldout: mean_loss(&held, &state, &tables, cfg.batch_size)?,
        });
    }

    for epoch in start.epoch + 1..=cfg.epochs {
        let last_good = state.clone();
        let mut rng = seeding::rng(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15), Stream::Sampler);
        let mut seen = 0usize;
        let mut total = 0.0;
        while seen < epoch_len {
            let bs = cfg.batch_size.min(epoch_len - seen);
            let batch: Vec<_> = (0..bs).map(|_| sampler.sample(&mut rng)).collect();
            let (loss, mut grad) = loss_and_gradients(&batch, &state, &tables)?;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::Diverged(Box::new(Divergence { epoch, last_good })));
            }
            if let Some(c) = cfg.clip_norm {
                clip_groups(&mut grad, c);
            }
            total += loss * bs as f64;
            seen += bs;
            let vgroups = velocity.groups_mut();
            for (gi, (_, g)) in grad.groups().iter().enumerate() {
                for (vk, gk) in vgroups[gi].iter_mut().zip(g.iter()) {
                    *vk = cfg.momentum * *vk + gk;
                }
            }
            let vg = velocity.groups();
            for (gi, p) in state.groups_mut().into_iter().enumerate() {
                if rates[gi] == 0.0 {
                    continue;
                }
                for (pk, vk) in p.iter_mut().zip(vg[gi].1) {
                    *pk -= rates[gi] * vk;
                }
            }
        }
        let heldout = mean_loss(&held, &state, &tables, cfg.batch_size)?;
        if !heldout.is_finite() || state.groups_mut().iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::Diverged(Box::new(Divergence { epoch, last_good })));
        }
        let row = EpochLoss {
            epoch,
            train: total / seen as f64,
            heldout,
        };
        log::info!("epoch {epoch}: train {:.5} held-out {:.5}", row.train, row.heldout);
        hook(&row, &state, &velocity)?;
        history.push(row);
    }
    let plda = state.plda()?;
    Ok(TrainOutcome {
        model: state.model,
        plda,
        crp,
        history,
    })
}

/// PLDA-side groups (log w, transform) and network groups are clipped
/// separately since their rates differ by orders of magnitude.
fn clip_groups(grad: &mut GradientSet, max_norm: f64) {
    let mut groups = grad.groups_mut();
    for range in [0..2, 2..6] {
        let sq: f64 = groups[range.clone()].iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum();
        let norm = sq.sqrt();
        if norm > max_norm {
            let k = max_norm / norm;
            for g in &mut groups[range] {
                g.iter_mut().for_each(|v| *v *= k);
            }
        }
    }
}

/// Loss history as a tab-separated table.
pub fn history_table(history: &[EpochLoss]) -> String {
    let mut s = String::from("epoch\ttrain_xent\theldout_xent\n");
    for r in history {
        s.push_str(&format!("{}\t{:.6}\t{:.6}\n", r.epoch, r.train, r.heldout));
    }
    s
}
