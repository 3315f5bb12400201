//! Fast built-in consistency checks, run by the `selftest` subcommand.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::clustering::{ahc_by_the_book_traced, AhcConfig};
use crate::error::Result;
use crate::evalkit::{der, ScoringOptions, Timeline, Turn};
use crate::extractor::{generate_corpus, init_extractor, InitConfig, SyntheticConfig};
use crate::partitions::{bell_number, crp_log_prob, enumerate_rgs, CrpParams, PartitionTables};
use crate::plda::{accumulate, clustering_log_posterior, cluster_loglik, DiagPlda, ProbEmbedding};
use crate::seeding::{rng, Stream};
use crate::training::{gradient_check, OctetSampler, TrainState};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

fn random_tuple(r: &mut impl Rng, n: usize, dim: usize) -> Vec<ProbEmbedding> {
    (0..n)
        .map(|_| {
            let x = (0..dim).map(|_| { let z: f64 = StandardNormal.sample(r); 2.0 * z }).collect::<Vec<f64>>();
            let p = (0..dim).map(|_| 10f64.powf(r.random_range(-2.0..2.0))).collect();
            ProbEmbedding::new(x, p).expect("finite draws")
        })
        .collect()
}

fn bell_counts() -> Result<CheckResult> {
    let mut bad = Vec::new();
    for n in 1..=10 {
        if enumerate_rgs(n)?.len() as u64 != bell_number(n)? {
            bad.push(n);
        }
    }
    let b8 = bell_number(8)?;
    Ok(check("partition counts", bad.is_empty() && b8 == 4140, format!("B8 = {b8}, mismatches at {bad:?}")))
}

/// Sparse-table posterior against a direct sum over every partition.
fn posterior_oracle(seed: u64) -> Result<CheckResult> {
    let mut r = rng(seed, Stream::Check);
    let prior = CrpParams::new(1.3, 0.3)?;
    let mut worst = 0.0f64;
    for n in 2..=6 {
        let tables = PartitionTables::build(n, prior)?;
        let parts = enumerate_rgs(n)?;
        for _ in 0..40 {
            let dim = r.random_range(1..=4);
            let plda = DiagPlda::new((0..dim).map(|_| r.random_range(0.2..5.0)).collect())?;
            let tuple = random_tuple(&mut r, n, dim);
            let fast = clustering_log_posterior(&tuple, &plda, &tables)?;
            let mut brute = Vec::with_capacity(parts.len());
            for p in &parts {
                let mut s = crp_log_prob(p, prior);
                for members in p.clusters() {
                    let embs: Vec<_> = members.iter().map(|&i| tuple[i].clone()).collect();
                    s += cluster_loglik(&accumulate(&embs, &plda)?);
                }
                brute.push(s);
            }
            let m = brute.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z = m + brute.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for p in &parts {
                let k = tables.index_of(p).expect("every partition is tabled");
                let b = brute[parts.iter().position(|q| q == p).unwrap()] - z;
                worst = worst.max((fast[k] - b).abs());
            }
        }
    }
    Ok(check("sparse posterior vs brute force", worst < 1e-10, format!("max |diff| = {worst:.2e}")))
}

fn zero_precision_prior() -> Result<CheckResult> {
    let tables = PartitionTables::build(5, CrpParams::new(0.7, 0.2)?)?;
    let plda = DiagPlda::new(vec![1.0, 2.0, 3.0])?;
    let tuple: Vec<_> = (0..5)
        .map(|i| ProbEmbedding::new(vec![i as f64, -1.0, 3.0], vec![0.0; 3]))
        .collect::<Result<_>>()?;
    let post = clustering_log_posterior(&tuple, &plda, &tables)?;
    let differing = post.iter().zip(tables.log_prior()).filter(|(a, b)| a != b).count();
    Ok(check("zero precision gives the prior", differing == 0, format!("{differing} entries differ")))
}

fn gradients(seed: u64) -> Result<CheckResult> {
    let synth = generate_corpus(&SyntheticConfig {
        n_recordings: 6,
        seed,
        ..SyntheticConfig::default()
    })?;
    let init = InitConfig {
        seed,
        margin: 1.0,
        weight_scale: 1.0,
        ..InitConfig::default()
    };
    let (model, plda) = init_extractor(&synth.reference, synth.corpus.quality_dim, &init)?;
    let state = TrainState::new(model, &plda)?;
    let tables = PartitionTables::build(4, CrpParams::new(1.0, 0.3)?)?;
    let sampler = OctetSampler::new(&synth.corpus, 4)?;
    let mut r = rng(seed, Stream::Check);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let batch: Vec<_> = (0..3).map(|_| sampler.sample(&mut r)).collect();
        worst = worst.max(gradient_check(&batch, &state, &tables)?.worst());
    }
    Ok(check(
        "analytic vs finite-difference gradients",
        worst < crate::training::FD_TOL,
        format!("max relative error = {worst:.2e}"),
    ))
}

fn crp_normalized() -> Result<CheckResult> {
    let mut worst = 0.0f64;
    for &(a, d) in &[(0.1, 0.0), (1.0, 0.5), (5.0, 0.9), (0.5, 0.3)] {
        let p = CrpParams::new(a, d)?;
        for n in 1..=6 {
            let s: f64 = enumerate_rgs(n)?.iter().map(|l| crp_log_prob(l, p).exp()).sum();
            worst = worst.max((s - 1.0).abs());
        }
    }
    Ok(check("partition prior sums to one", worst < 1e-12, format!("max |sum - 1| = {worst:.2e}")))
}

fn ahc_gains(seed: u64) -> Result<CheckResult> {
    let mut r = rng(seed, Stream::Check);
    let plda = DiagPlda::new(vec![0.5, 1.0, 2.0, 4.0])?;
    let mut ok = true;
    for _ in 0..20 {
        let tuple = random_tuple(&mut r, 12, 4);
        let (_, steps) = ahc_by_the_book_traced(&tuple, &plda, &AhcConfig::default())?;
        ok &= steps.iter().all(|s| s.delta > 0.0);
        ok &= steps.windows(2).all(|w| w[1].total_loglik > w[0].total_loglik);
    }
    Ok(check("by-the-book merges raise the likelihood", ok, String::new()))
}

fn der_examples() -> Result<CheckResult> {
    let tl = |names: [&str; 2]| -> Result<Timeline> {
        Ok(Timeline {
            recording: "r".into(),
            turns: vec![Turn::new(0.0, 5.0, names[0])?, Turn::new(5.0, 5.0, names[1])?],
        })
    };
    let reference = tl(["a", "b"])?;
    let opts = ScoringOptions::default();
    let same = der(&reference, &reference, &opts)?.der();
    let renamed = der(&reference, &tl(["y", "x"])?, &opts)?.der();
    let merged = Timeline {
        recording: "r".into(),
        turns: vec![Turn::new(0.0, 10.0, "s")?],
    };
    let one = der(&reference, &merged, &opts)?;
    let ok = same == 0.0 && renamed == 0.0 && one.der() == 0.5 && one.confusion == 5.0;
    Ok(check("scorer examples", ok, format!("{same} {renamed} {}", one.der())))
}

type Check = Box<dyn Fn() -> Result<CheckResult>>;

/// Runs every check; errors inside a check count as failures.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    let checks: Vec<(&'static str, Check)> = vec![
        ("partition counts", Box::new(bell_counts)),
        ("sparse posterior vs brute force", Box::new(move || posterior_oracle(seed))),
        ("zero precision gives the prior", Box::new(zero_precision_prior)),
        ("analytic vs finite-difference gradients", Box::new(move || gradients(seed))),
        ("partition prior sums to one", Box::new(crp_normalized)),
        ("by-the-book merges raise the likelihood", Box::new(move || ahc_gains(seed))),
        ("scorer examples", Box::new(der_examples)),
    ];
    checks
        .into_iter()
        .map(|(name, f)| f().unwrap_or_else(|e| check(name, false, e.to_string())))
        .collect()
}
