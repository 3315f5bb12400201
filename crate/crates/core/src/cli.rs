//! Command-line front end: simulate, train, diarize, score, sweep, selftest.
//!
//! Every subcommand also reads a flat `key = value` config file given with
//! `--config`. Keys are the subcommand's long flag names without dashes
//! (`lr-net = 0.5`, `plda-only = true`). Flags given on the command line take
//! precedence over the file; the file takes precedence over built-in
//! defaults. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::clustering::{AhcConfig, AhcMode};
use crate::corpus_io::{
    embed_corpus, read_corpus, read_embeddings, reference_timelines, write_corpus, write_embeddings, EmbeddedRecording,
    CORPUS_FORMAT_VERSION,
};
use crate::error::{Error, Result};
use crate::evalkit::{format_rttm, read_rttm, score_all, write_rttm, Resolution, ScoringOptions, Timeline};
use crate::extractor::{generate_corpus, init_extractor, InitConfig, NoiseLaw, SyntheticConfig};
use crate::modelfile::{
    read_checkpoint, read_full_plda, read_model, write_checkpoint, write_full_plda, write_history, write_model,
    Checkpoint, MODEL_FORMAT_VERSION,
};
use crate::partitions::CrpParams;
use crate::pipeline::{best_on_dev, dev_eval_split, diarize_recordings, sweep, sweep_table, with_jobs, SweepParam};
use crate::training::{fit_prior, train_with, EpochLoss, StartPoint, TrainConfig, TrainState};

#[derive(Parser, Debug)]
#[command(name = "probdiar", about = "Probabilistic-embedding speaker diarization toolkit")]
struct Cli {
    /// Flat `key = value` file supplying defaults for the subcommand's flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// More log output (repeat for more).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus with train/dev/eval splits and references.
    #[command(args_override_self = true)]
    Simulate(SimulateArgs),
    /// Train the extractor and PLDA on octet cross-entropy.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Cluster the segments of every recording and write RTTM.
    #[command(args_override_self = true)]
    Diarize(DiarizeArgs),
    /// Diarization error rate of hypothesis RTTM against reference RTTM.
    #[command(args_override_self = true)]
    Score(ScoreArgs),
    /// Grid search of sigma or likelihood scale on dev, reported with eval.
    #[command(args_override_self = true)]
    Sweep(SweepArgs),
    /// Gradient check, posterior oracle and other built-in checks.
    #[command(args_override_self = true)]
    Selftest(SelftestArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = SyntheticConfig::default().n_recordings)]
    recordings: usize,
    #[arg(long, default_value_t = SyntheticConfig::default().n_speakers)]
    speakers: usize,
    /// Segments per recording.
    #[arg(long, default_value_t = SyntheticConfig::default().segments_per_recording)]
    segments: usize,
    #[arg(long, default_value_t = SyntheticConfig::default().raw_dim)]
    dim: usize,
    /// Lower end of the uniform law on log noise variance.
    #[arg(long, default_value_t = -3.0, allow_negative_numbers = true)]
    noise_lo: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    noise_hi: f64,
    /// Share of speakers held out for dev and eval.
    #[arg(long, default_value_t = SyntheticConfig::default().heldout_fraction)]
    heldout_fraction: f64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training corpus.
    #[arg(long, value_name = "FILE")]
    corpus: PathBuf,
    /// Full two-covariance PLDA to initialize from.
    #[arg(long, value_name = "FILE", conflicts_with = "init_model")]
    plda: Option<PathBuf>,
    /// Existing model to start from instead of `--plda`.
    #[arg(long, value_name = "FILE")]
    init_model: Option<PathBuf>,
    /// Corpus for the held-out loss; split off `--corpus` by speaker if absent.
    #[arg(long, value_name = "FILE")]
    heldout: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 1.0)]
    lr_net: f64,
    /// PLDA and transform rate as a fraction of `--lr-net`.
    #[arg(long, default_value_t = 1e-4)]
    lr_ratio: f64,
    #[arg(long, default_value_t = 0.0)]
    momentum: f64,
    #[arg(long, default_value_t = 100)]
    batch_size: usize,
    /// Trial tuple size.
    #[arg(long, default_value_t = 8)]
    tuple_size: usize,
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Initial precisions are at least this multiple of the PLDA precision.
    #[arg(long, default_value_t = 100.0)]
    margin: f64,
    /// Hidden width of the precision net (default twice the dimension).
    #[arg(long)]
    hidden: Option<usize>,
    /// Partition prior concentration; fitted to the corpus when absent.
    #[arg(long, requires = "crp_discount")]
    crp_concentration: Option<f64>,
    #[arg(long, requires = "crp_concentration")]
    crp_discount: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Freeze the precision net; train only the PLDA and transform.
    #[arg(long)]
    plda_only: bool,
    /// Gradient check on 10 batches before training.
    #[arg(long)]
    check: bool,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long, value_name = "FILE")]
    resume: Option<PathBuf>,
    /// Write a checkpoint every this many epochs.
    #[arg(long, default_value_t = 1)]
    checkpoint_every: usize,
}

#[derive(Args, Debug)]
struct DiarizeArgs {
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    #[arg(long, value_name = "FILE", required_unless_present = "embeddings", conflicts_with = "embeddings")]
    corpus: Option<PathBuf>,
    /// Embedding dump written by `--dump-embeddings`.
    #[arg(long, value_name = "FILE")]
    embeddings: Option<PathBuf>,
    /// Output RTTM; standard output when absent.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long, default_value = "book")]
    mode: AhcMode,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    sigma: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    scale: f64,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long, value_name = "FILE")]
    dump_embeddings: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScoringArgs {
    /// Seconds excluded on each side of every reference boundary.
    #[arg(long, default_value_t = 0.0)]
    collar: f64,
    /// Score on exact times instead of 10 ms frames.
    #[arg(long)]
    exact: bool,
}

impl ScoringArgs {
    fn options(&self) -> ScoringOptions {
        ScoringOptions {
            collar: self.collar,
            resolution: if self.exact {
                Resolution::Exact
            } else {
                ScoringOptions::default().resolution
            },
        }
    }
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long = "ref", value_name = "FILE")]
    reference: PathBuf,
    #[arg(long, value_name = "FILE")]
    hyp: PathBuf,
    #[command(flatten)]
    scoring: ScoringArgs,
    /// Tab-separated output.
    #[arg(long)]
    tsv: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Corpus used for picking the best value.
    #[arg(long, value_name = "FILE")]
    dev: PathBuf,
    /// Corpus reported alongside; split off `--dev` alternately when absent.
    #[arg(long, value_name = "FILE")]
    eval: Option<PathBuf>,
    #[arg(long, default_value = "sigma")]
    param: SweepParam,
    /// Comma-separated values; a built-in grid when absent.
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    #[arg(long, default_value = "book")]
    mode: AhcMode,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[command(flatten)]
    scoring: ScoringArgs,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn version_string() -> String {
    format!(
        "{} (model format {MODEL_FORMAT_VERSION}, corpus format {CORPUS_FORMAT_VERSION})",
        env!("CARGO_PKG_VERSION")
    )
}

fn command() -> clap::Command {
    static VERSION: std::sync::OnceLock<String> = std::sync::OnceLock::new();
    Cli::command().version(VERSION.get_or_init(version_string).as_str())
}

/// Parses `key = value` lines; `#` starts a comment.
fn parse_config(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut seen = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::parse(path, k + 1, "expected `key = value`"));
        };
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        if key.is_empty() {
            return Err(Error::parse(path, k + 1, "empty key"));
        }
        if seen.insert(key.clone(), k + 1).is_some() {
            return Err(Error::parse(path, k + 1, format!("duplicate key {key:?}")));
        }
        out.push((key, value));
    }
    Ok(out)
}

/// Turns config entries into flags for subcommand `sub`, rejecting unknown
/// keys and bad booleans.
fn config_flags(entries: &[(String, String)], sub: &clap::Command, path: &Path) -> Result<Vec<OsString>> {
    let mut flags = Vec::new();
    for (key, value) in entries {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && !a.is_global_set() && key != "help");
        let Some(arg) = arg else {
            return Err(Error::Domain(format!(
                "{}: unknown key {key:?} for `{}`",
                path.display(),
                sub.get_name()
            )));
        };
        if arg.get_action().takes_values() {
            flags.push(format!("--{key}").into());
            flags.push(value.into());
        } else {
            match value.as_str() {
                "true" => flags.push(format!("--{key}").into()),
                "false" => {}
                _ => {
                    return Err(Error::Domain(format!(
                        "{}: key {key:?} takes true or false, got {value:?}",
                        path.display()
                    )))
                }
            }
        }
    }
    Ok(flags)
}

/// Re-parses with the config flags spliced in right after the subcommand
/// name, so that command-line flags (which come later) override them.
fn apply_config(args: &[OsString], cli: Cli) -> std::result::Result<Cli, Outcome> {
    let Some(path) = cli.config.clone() else {
        return Ok(cli);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| Outcome::Fail(Error::io(&path, e)))?;
    let entries = parse_config(&text, &path).map_err(Outcome::Fail)?;
    let name = subcommand_name(&cli.command);
    let cmd = command();
    let sub = cmd.find_subcommand(name).expect("subcommand exists");
    let flags = config_flags(&entries, sub, &path).map_err(Outcome::Fail)?;
    // position of the subcommand token, skipping the value of --config
    let mut pos = None;
    let mut skip = false;
    for (i, a) in args.iter().enumerate().skip(1) {
        if skip {
            skip = false;
            continue;
        }
        if a == "--config" {
            skip = true;
            continue;
        }
        if a == name {
            pos = Some(i);
            break;
        }
    }
    let pos = pos.expect("subcommand token present");
    let mut merged: Vec<OsString> = args[..=pos].to_vec();
    merged.extend(flags);
    merged.extend_from_slice(&args[pos + 1..]);
    parse(&merged)
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Simulate(_) => "simulate",
        Command::Train(_) => "train",
        Command::Diarize(_) => "diarize",
        Command::Score(_) => "score",
        Command::Sweep(_) => "sweep",
        Command::Selftest(_) => "selftest",
    }
}

enum Outcome {
    /// Help or version output, already printed.
    Exit(i32),
    Fail(Error),
}

fn parse(args: &[OsString]) -> std::result::Result<Cli, Outcome> {
    let matches = command().try_get_matches_from(args).map_err(|e| {
        use clap::error::ErrorKind::*;
        match e.kind() {
            DisplayHelp | DisplayVersion | DisplayHelpOnMissingArgumentOrSubcommand => {
                let _ = e.print();
                Outcome::Exit(if e.kind() == DisplayHelpOnMissingArgumentOrSubcommand { 1 } else { 0 })
            }
            _ => {
                let msg = e.to_string();
                let msg = msg.trim_start_matches("error: ").trim_end().to_string();
                Outcome::Exit(report_usage(&msg))
            }
        }
    })?;
    Cli::from_arg_matches(&matches).map_err(|e| Outcome::Exit(report_usage(e.to_string().trim_end())))
}

fn report_usage(msg: &str) -> i32 {
    eprintln!("error[usage]: {msg}");
    1
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = if quiet {
        log::LevelFilter::Error
    } else {
        match verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        }
    };
    // a second call (tests run many commands in one process) is harmless
    let _ = env_logger::Builder::new().filter_level(level).format_target(false).try_init();
    log::set_max_level(level);
}

/// Runs the toolkit on `args` (including the program name) and returns the
/// process exit code: 0 success, 1 usage or domain error, 2 data error,
/// 3 numerical or internal failure. Errors go to standard error as
/// `error[<kind>]: <message>`.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match parse(&args).and_then(|cli| apply_config(&args, cli)) {
        Ok(c) => c,
        Err(Outcome::Exit(code)) => return code,
        Err(Outcome::Fail(e)) => return report(&e),
    };
    init_logging(cli.verbose, cli.quiet);
    let result = match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Diarize(a) => diarize_cmd(&a),
        Command::Score(a) => score_cmd(&a),
        Command::Sweep(a) => sweep_cmd(&a),
        Command::Selftest(a) => return selftest_cmd(&a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => report(&e),
    }
}

fn report(e: &Error) -> i32 {
    eprintln!("error[{}]: {e}", e.kind());
    e.exit_code()
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn print_out(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io("<stdout>", e))
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        raw_dim: a.dim,
        n_speakers: a.speakers,
        n_recordings: a.recordings,
        segments_per_recording: a.segments,
        noise: NoiseLaw::LogUniform {
            lo: a.noise_lo,
            hi: a.noise_hi,
        },
        heldout_fraction: a.heldout_fraction,
        seed: a.seed,
        ..SyntheticConfig::default()
    };
    let synth = generate_corpus(&cfg)?;
    let (train, test) = synth.corpus.split_by_speaker(a.heldout_fraction);
    let (dev, eval) = dev_eval_split(&test);
    create_dir(&a.out_dir)?;
    let d = &a.out_dir;
    write_corpus(&d.join("all.corpus"), &synth.corpus)?;
    write_corpus(&d.join("train.corpus"), &train)?;
    write_corpus(&d.join("dev.corpus"), &dev)?;
    write_corpus(&d.join("eval.corpus"), &eval)?;
    write_full_plda(&d.join("reference.plda"), &synth.reference)?;
    write_rttm(&d.join("all.rttm"), &reference_timelines(&synth.corpus))?;
    write_rttm(&d.join("dev.rttm"), &reference_timelines(&dev))?;
    write_rttm(&d.join("eval.rttm"), &reference_timelines(&eval))?;
    log::info!(
        "{} recordings: {} train, {} dev, {} eval",
        synth.corpus.recordings.len(),
        train.recordings.len(),
        dev.recordings.len(),
        eval.recordings.len()
    );
    Ok(())
}

fn read_history(path: &Path) -> Result<Vec<EpochLoss>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (k, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || Error::parse(path, k + 1, "expected epoch, train and held-out loss");
        if f.len() != 3 {
            return Err(bad());
        }
        rows.push(EpochLoss {
            epoch: f[0].parse().map_err(|_| bad())?,
            train: f[1].parse().map_err(|_| bad())?,
            heldout: f[2].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    if a.checkpoint_every == 0 {
        return Err(Error::Domain("checkpoint-every must be > 0".into()));
    }
    let corpus = read_corpus(&a.corpus)?;
    let heldout = a.heldout.as_deref().map(read_corpus).transpose()?;
    let mut cfg = TrainConfig {
        n: a.tuple_size,
        batch_size: a.batch_size,
        lr_net: a.lr_net,
        lr_ratio: a.lr_ratio,
        momentum: a.momentum,
        clip_norm: a.clip_norm,
        epochs: a.epochs,
        seed: a.seed,
        crp: match (a.crp_concentration, a.crp_discount) {
            (Some(c), Some(d)) => Some(CrpParams::new(c, d)?),
            _ => None,
        },
        train_net: !a.plda_only,
        gradient_check: a.check,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    create_dir(&a.out_dir)?;

    let (start, mut history) = match &a.resume {
        Some(p) => {
            let ck = read_checkpoint(p)?;
            cfg.crp = Some(ck.crp);
            let hist_path = a.out_dir.join("history.tsv");
            let earlier = if hist_path.exists() {
                read_history(&hist_path)?.into_iter().filter(|r| r.epoch <= ck.epoch).collect()
            } else {
                Vec::new()
            };
            log::info!("resuming after epoch {}", ck.epoch);
            let start = StartPoint {
                state: ck.state,
                velocity: ck.velocity,
                epoch: ck.epoch,
            };
            (start, earlier)
        }
        None => {
            let (model, plda) = match (&a.plda, &a.init_model) {
                (Some(p), None) => {
                    let full = read_full_plda(p)?;
                    let init = InitConfig {
                        seed: a.seed,
                        margin: a.margin,
                        hidden: a.hidden,
                        ..InitConfig::default()
                    };
                    init_extractor(&full, corpus.quality_dim, &init)?
                }
                (None, Some(m)) => read_model(m)?,
                _ => return Err(Error::Domain("give --plda or --init-model (or --resume)".into())),
            };
            write_model(&a.out_dir.join("init.model"), &model, &plda)?;
            let start = StartPoint {
                state: TrainState::new(model, &plda)?,
                velocity: None,
                epoch: 0,
            };
            (start, Vec::new())
        }
    };
    let crp = match cfg.crp {
        Some(c) => c,
        None => {
            let train_part = match heldout {
                Some(_) => corpus.clone(),
                None => corpus.split_by_speaker(cfg.heldout_fraction).0,
            };
            fit_prior(&train_part)?
        }
    };
    cfg.crp = Some(crp);
    log::info!("partition prior: concentration {}, discount {}", crp.concentration(), crp.discount());

    let out_dir = a.out_dir.clone();
    let every = a.checkpoint_every;
    let last = cfg.epochs;
    let mut hook = |row: &EpochLoss, state: &TrainState, velocity: &crate::training::GradientSet| -> Result<()> {
        if row.epoch.is_multiple_of(every) || row.epoch == last {
            let ck = Checkpoint {
                state: state.clone(),
                crp,
                epoch: row.epoch,
                velocity: Some(velocity.clone()),
            };
            write_checkpoint(&out_dir.join(format!("ckpt-{:04}.txt", row.epoch)), &ck)?;
        }
        Ok(())
    };
    let outcome = match train_with(&cfg, &corpus, heldout.as_ref(), start, &mut hook) {
        Ok(o) => o,
        Err(Error::Diverged(d)) => {
            let path = a.out_dir.join("last-good.model");
            write_model(&path, &d.last_good.model, &d.last_good.plda()?)?;
            log::error!("parameters before the failing epoch saved to {}", path.display());
            return Err(Error::Diverged(d));
        }
        Err(e) => return Err(e),
    };
    history.extend(outcome.history);
    write_history(&a.out_dir.join("history.tsv"), &history)?;
    write_model(&a.out_dir.join("final.model"), &outcome.model, &outcome.plda)?;
    if let (Some(first), Some(lastrow)) = (history.first(), history.last()) {
        log::info!(
            "held-out cross-entropy {:.4} -> {:.4} over {} epochs",
            first.heldout,
            lastrow.heldout,
            lastrow.epoch
        );
    }
    Ok(())
}

fn sorted(mut t: Vec<Timeline>) -> Vec<Timeline> {
    t.sort_by(|a, b| a.recording.cmp(&b.recording));
    t
}

fn diarize_cmd(a: &DiarizeArgs) -> Result<()> {
    let (model, plda) = read_model(&a.model)?;
    let recs: Vec<EmbeddedRecording> = match (&a.corpus, &a.embeddings) {
        (Some(c), _) => embed_corpus(&read_corpus(c)?, &model)?,
        (None, Some(e)) => read_embeddings(e)?,
        (None, None) => unreachable!("clap requires one of the inputs"),
    };
    if let Some(p) = &a.dump_embeddings {
        write_embeddings(p, &recs)?;
    }
    let cfg = AhcConfig {
        mode: a.mode,
        sigma: a.sigma,
        likelihood_scale: a.scale,
    };
    cfg.validate()?;
    let hyp = sorted(with_jobs(a.jobs, || diarize_recordings(&recs, &plda, &cfg))??);
    match &a.out {
        Some(p) => write_rttm(p, &hyp),
        None => print_out(&format_rttm(&hyp)),
    }
}

fn score_cmd(a: &ScoreArgs) -> Result<()> {
    let reference = read_rttm(&a.reference)?;
    let hyp = read_rttm(&a.hyp)?;
    let report = score_all(&reference, &hyp, &a.scoring.options())?;
    print_out(&if a.tsv { report.tsv() } else { report.table() })
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            let v = v.trim();
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::Domain(format!("bad grid value {v:?}")))
        })
        .collect()
}

fn sweep_cmd(a: &SweepArgs) -> Result<()> {
    if a.mode == AhcMode::Baseline && a.param == SweepParam::Scale {
        return Err(Error::Domain("the baseline has no likelihood scale; sweep sigma".into()));
    }
    let (model, plda) = read_model(&a.model)?;
    let dev_corpus = read_corpus(&a.dev)?;
    let (dev_corpus, eval_corpus) = match &a.eval {
        Some(e) => (dev_corpus, read_corpus(e)?),
        None => dev_eval_split(&dev_corpus),
    };
    let dev = embed_corpus(&dev_corpus, &model)?;
    let eval = embed_corpus(&eval_corpus, &model)?;
    let grid = match &a.grid {
        Some(g) => parse_grid(g)?,
        None => a.param.default_grid(),
    };
    let base = AhcConfig {
        mode: a.mode,
        ..AhcConfig::default()
    };
    let opts = a.scoring.options();
    let rows = with_jobs(a.jobs, || sweep(&dev, &eval, &plda, &base, a.param, &grid, &opts))??;
    let mut text = sweep_table(a.param, &rows);
    if let Some(b) = best_on_dev(&rows, a.param) {
        text.push_str(&format!("best\t{}\t{:.4}\t{:.4}\n", b.value, 100.0 * b.dev, 100.0 * b.eval));
    }
    print_out(&text)
}

fn selftest_cmd(a: &SelftestArgs) -> i32 {
    let results = crate::selftest::run_all(a.seed);
    let mut text = String::new();
    for r in &results {
        let tag = if r.passed { "ok  " } else { "FAIL" };
        text.push_str(&format!("{tag} {}", r.name));
        if !r.detail.is_empty() {
            text.push_str(&format!(" ({})", r.detail));
        }
        text.push('\n');
    }
    if let Err(e) = print_out(&text) {
        return report(&e);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed == 0 {
        0
    } else {
        eprintln!("error[numeric]: {failed} self-test check(s) failed");
        3
    }
}
