//! Corpus-level diarization, scoring, threshold sweeps and the four-system
//! comparison on synthetic data.

use rayon::prelude::*;

use crate::clustering::{diarize, AhcConfig, AhcMode};
use crate::corpus_io::{embed_corpus, EmbeddedRecording};
use crate::error::{Error, Result};
use crate::evalkit::{score_all, DerReport, ScoringOptions, Timeline};
use crate::extractor::{generate_corpus, init_extractor, Corpus, ExtractorModel, InitConfig, SyntheticConfig};
use crate::plda::{joint_diagonalize, DiagPlda};
use crate::training::{train_with, EpochLoss, StartPoint, TrainConfig, TrainState};

/// Diarizes every recording. Output order follows the input order.
pub fn diarize_recordings(recs: &[EmbeddedRecording], plda: &DiagPlda, cfg: &AhcConfig) -> Result<Vec<Timeline>> {
    recs.par_iter()
        .map(|r| {
            let labels = diarize(&r.embeddings(), plda, cfg)?;
            Timeline::from_labels(r.id.clone(), &r.spans(), &labels)
        })
        .collect()
}

/// Runs `f` on a pool of `jobs` threads (0 means the global pool).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if jobs == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn references(recs: &[EmbeddedRecording]) -> Result<Vec<Timeline>> {
    recs.iter()
        .map(|r| {
            r.reference()
                .ok_or_else(|| Error::Data(format!("recording {} has segments without a true speaker", r.id)))
        })
        .collect()
}

pub fn evaluate(recs: &[EmbeddedRecording], plda: &DiagPlda, cfg: &AhcConfig, opts: &ScoringOptions) -> Result<DerReport> {
    let hyp = diarize_recordings(recs, plda, cfg)?;
    score_all(&references(recs)?, &hyp, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Sigma,
    Scale,
}

impl SweepParam {
    /// The untuned setting, preferred when dev scores tie.
    pub fn neutral(self) -> f64 {
        match self {
            SweepParam::Sigma => 0.0,
            SweepParam::Scale => 1.0,
        }
    }

    pub fn default_grid(self) -> Vec<f64> {
        match self {
            SweepParam::Sigma => {
                let pos = [0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 12.5, 15.0, 20.0, 25.0, 30.0, 40.0];
                let mut g: Vec<f64> = pos.iter().rev().map(|v| -v).collect();
                g.push(0.0);
                g.extend(pos);
                g
            }
            SweepParam::Scale => (1..=20).map(|k| k as f64 * 0.05).collect(),
        }
    }

    fn apply(self, base: &AhcConfig, v: f64) -> AhcConfig {
        match self {
            SweepParam::Sigma => AhcConfig { sigma: v, ..*base },
            SweepParam::Scale => AhcConfig { likelihood_scale: v, ..*base },
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigma" => Ok(SweepParam::Sigma),
            "scale" => Ok(SweepParam::Scale),
            _ => Err(Error::Domain(format!("unknown sweep parameter {s:?} (expected sigma or scale)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub dev: f64,
    pub eval: f64,
}

/// DER on dev and eval for every grid value.
pub fn sweep(
    dev: &[EmbeddedRecording],
    eval: &[EmbeddedRecording],
    plda: &DiagPlda,
    base: &AhcConfig,
    param: SweepParam,
    grid: &[f64],
    opts: &ScoringOptions,
) -> Result<Vec<SweepRow>> {
    grid.iter()
        .map(|&v| {
            let cfg = param.apply(base, v);
            Ok(SweepRow {
                value: v,
                dev: evaluate(dev, plda, &cfg, opts)?.der(),
                eval: evaluate(eval, plda, &cfg, opts)?.der(),
            })
        })
        .collect()
}

/// Row with the lowest dev DER; ties go to the value nearest the neutral
/// setting, then to the smaller value.
pub fn best_on_dev(rows: &[SweepRow], param: SweepParam) -> Option<SweepRow> {
    let n = param.neutral();
    rows.iter().copied().min_by(|a, b| {
        a.dev
            .total_cmp(&b.dev)
            .then((a.value - n).abs().total_cmp(&(b.value - n).abs()))
            .then(a.value.total_cmp(&b.value))
    })
}

pub fn sweep_table(param: SweepParam, rows: &[SweepRow]) -> String {
    let name = match param {
        SweepParam::Sigma => "sigma",
        SweepParam::Scale => "scale",
    };
    let mut s = format!("{name}\tdev_der\teval_der\n");
    for r in rows {
        s.push_str(&format!("{}\t{:.4}\t{:.4}\n", r.value, 100.0 * r.dev, 100.0 * r.eval));
    }
    s
}

/// Dev and eval DER at one setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub value: f64,
    pub dev: f64,
    pub eval: f64,
}

impl From<SweepRow> for Cell {
    fn from(r: SweepRow) -> Self {
        Cell {
            value: r.value,
            dev: r.dev,
            eval: r.eval,
        }
    }
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemResult {
    pub name: String,
    /// At sigma = 0 and scale = 1; `None` for the baseline.
    pub untuned: Option<Cell>,
    pub sigma_tuned: Cell,
    /// `None` for the baseline.
    pub scale_tuned: Option<Cell>,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub synthetic: SyntheticConfig,
    pub init: InitConfig,
    pub train: TrainConfig,
    /// Training config of the PLDA-only system; `train_net` is forced off.
    pub train_plda_only: TrainConfig,
    pub sigma_grid: Vec<f64>,
    pub scale_grid: Vec<f64>,
    pub scoring: ScoringOptions,
}

impl Default for ExperimentConfig {
    /// Rates and the initial margin are chosen by held-out cross-entropy.
    /// A margin of 1 keeps the precision net out of the flat region of
    /// softplus where plain SGD barely moves it.
    fn default() -> Self {
        ExperimentConfig {
            synthetic: SyntheticConfig::default(),
            init: InitConfig {
                margin: 1.0,
                ..InitConfig::default()
            },
            train: TrainConfig {
                lr_net: 1.0,
                epochs: 30,
                ..TrainConfig::default()
            },
            train_plda_only: TrainConfig {
                lr_net: 0.03,
                lr_ratio: 1.0,
                epochs: 30,
                ..TrainConfig::default()
            },
            sigma_grid: SweepParam::Sigma.default_grid(),
            scale_grid: SweepParam::Scale.default_grid(),
            scoring: ScoringOptions::default(),
        }
    }
}

impl ExperimentConfig {
    /// Same experiment with every random stream derived from `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.synthetic.seed = seed;
        c.init.seed = seed;
        c.train.seed = seed;
        c.train_plda_only.seed = seed;
        c
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    /// Baseline, untrained by-the-book, PLDA-only trained, fully trained.
    pub systems: Vec<SystemResult>,
    pub plda_only_history: Vec<EpochLoss>,
    pub full_history: Vec<EpochLoss>,
}

pub const SYSTEM_NAMES: [&str; 4] = ["baseline", "book-untrained", "book-plda-trained", "book-full-trained"];

/// Splits the held-out recordings alternately into dev and eval.
pub fn dev_eval_split(test: &Corpus) -> (Corpus, Corpus) {
    let mut dev = Corpus {
        recordings: Vec::new(),
        ..test.clone()
    };
    let mut eval = dev.clone();
    for (i, r) in test.recordings.iter().enumerate() {
        if i % 2 == 0 {
            dev.recordings.push(r.clone());
        } else {
            eval.recordings.push(r.clone());
        }
    }
    (dev, eval)
}

fn book_system(
    name: &str,
    model: &ExtractorModel,
    plda: &DiagPlda,
    dev: &Corpus,
    eval: &Corpus,
    cfg: &ExperimentConfig,
) -> Result<SystemResult> {
    let d = embed_corpus(dev, model)?;
    let e = embed_corpus(eval, model)?;
    let base = AhcConfig::default();
    let sig = sweep(&d, &e, plda, &base, SweepParam::Sigma, &cfg.sigma_grid, &cfg.scoring)?;
    let sca = sweep(&d, &e, plda, &base, SweepParam::Scale, &cfg.scale_grid, &cfg.scoring)?;
    let untuned = Cell {
        value: 0.0,
        dev: evaluate(&d, plda, &base, &cfg.scoring)?.der(),
        eval: evaluate(&e, plda, &base, &cfg.scoring)?.der(),
    };
    Ok(SystemResult {
        name: name.into(),
        untuned: Some(untuned),
        sigma_tuned: best_on_dev(&sig, SweepParam::Sigma).unwrap().into(),
        scale_tuned: Some(best_on_dev(&sca, SweepParam::Scale).unwrap().into()),
    })
}

/// Trains and evaluates the four systems on one synthetic corpus.
///
/// The corpus is split by speaker into training and test recordings; test
/// recordings alternate between dev (for tuning) and eval.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let synth = generate_corpus(&cfg.synthetic)?;
    let (train_set, test_set) = synth.corpus.split_by_speaker(cfg.synthetic.heldout_fraction);
    let (dev, eval) = dev_eval_split(&test_set);
    if dev.recordings.is_empty() || eval.recordings.is_empty() {
        return Err(Error::Data("need at least two held-out recordings for dev and eval".into()));
    }
    let (model0, plda0) = init_extractor(&synth.reference, synth.corpus.quality_dim, &cfg.init)?;

    // plug-in baseline on the diagonalized reference law
    let (transform, plug) = joint_diagonalize(&synth.reference)?;
    let plug_model = ExtractorModel {
        transform,
        ..model0.clone()
    };
    let d = embed_corpus(&dev, &plug_model)?;
    let e = embed_corpus(&eval, &plug_model)?;
    let base = AhcConfig {
        mode: AhcMode::Baseline,
        ..AhcConfig::default()
    };
    let sig = sweep(&d, &e, &plug, &base, SweepParam::Sigma, &cfg.sigma_grid, &cfg.scoring)?;
    let baseline = SystemResult {
        name: SYSTEM_NAMES[0].into(),
        untuned: None,
        sigma_tuned: best_on_dev(&sig, SweepParam::Sigma).unwrap().into(),
        scale_tuned: None,
    };
    log::info!("baseline done");

    let untrained = book_system(SYSTEM_NAMES[1], &model0, &plda0, &dev, &eval, cfg)?;
    log::info!("untrained done");

    let plda_cfg = TrainConfig {
        train_net: false,
        ..cfg.train_plda_only.clone()
    };
    let monitored = |cfg: &TrainConfig, model: ExtractorModel| {
        let start = StartPoint {
            state: TrainState::new(model, &plda0)?,
            velocity: None,
            epoch: 0,
        };
        train_with(cfg, &train_set, Some(&dev), start, &mut |_, _, _| Ok(()))
    };
    let po = monitored(&plda_cfg, model0.clone())?;
    let plda_only = book_system(SYSTEM_NAMES[2], &po.model, &po.plda, &dev, &eval, cfg)?;
    log::info!("plda-only done");

    let full = monitored(&cfg.train, model0)?;
    let full_sys = book_system(SYSTEM_NAMES[3], &full.model, &full.plda, &dev, &eval, cfg)?;
    log::info!("full done");

    Ok(ExperimentResult {
        systems: vec![baseline, untrained, plda_only, full_sys],
        plda_only_history: po.history,
        full_history: full.history,
    })
}

/// Comparison table with dev/eval DER (%) per system and tuning column.
pub fn experiment_table(systems: &[SystemResult]) -> String {
    let pct = |c: Option<Cell>| match c {
        Some(c) => format!("{:>7.2} {:>7.2}", 100.0 * c.dev, 100.0 * c.eval),
        None => format!("{:>7} {:>7}", "-", "-"),
    };
    let val = |c: Option<Cell>| c.map_or("-".to_string(), |c| format!("{}", c.value));
    let mut s = format!(
        "{:<20} {:>15} {:>15} {:>7} {:>15} {:>6}\n",
        "system", "sigma=0 dev/eval", "sigma* dev/eval", "sigma*", "scale* dev/eval", "scale*"
    );
    for r in systems {
        s.push_str(&format!(
            "{:<20} {:>15} {:>15} {:>7} {:>15} {:>6}\n",
            r.name,
            pct(r.untuned),
            pct(Some(r.sigma_tuned)),
            val(Some(r.sigma_tuned)),
            pct(r.scale_tuned),
            val(r.scale_tuned)
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_and_tie_breaks() {
        let g = SweepParam::Sigma.default_grid();
        assert!(g.contains(&0.0) && g.windows(2).all(|w| w[0] < w[1]));
        let s = SweepParam::Scale.default_grid();
        assert_eq!(*s.last().unwrap(), 1.0);
        assert!(s[0] > 0.0);
        let rows = [
            SweepRow { value: -2.0, dev: 0.1, eval: 0.3 },
            SweepRow { value: 1.0, dev: 0.1, eval: 0.2 },
            SweepRow { value: 3.0, dev: 0.2, eval: 0.1 },
        ];
        assert_eq!(best_on_dev(&rows, SweepParam::Sigma).unwrap().value, 1.0);
        assert_eq!(best_on_dev(&rows, SweepParam::Scale).unwrap().value, 1.0);
    }

    #[test]
    fn sweep_rows_cover_grid() {
        let synth = generate_corpus(&SyntheticConfig {
            n_speakers: 20,
            n_recordings: 4,
            segments_per_recording: 12,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let (m, p) = init_extractor(&synth.reference, 4, &InitConfig::default()).unwrap();
        let (dev, eval) = dev_eval_split(&synth.corpus);
        let d = embed_corpus(&dev, &m).unwrap();
        let e = embed_corpus(&eval, &m).unwrap();
        let rows = sweep(&d, &e, &p, &AhcConfig::default(), SweepParam::Sigma, &[-1.0, 0.0, 1.0], &ScoringOptions::default()).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.dev)));
        let t = sweep_table(SweepParam::Sigma, &rows);
        assert!(t.starts_with("sigma\tdev_der\teval_der\n"));
    }
}
