//! RTTM timelines and diarization error rate.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::partitions::LabelString;

#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub start: f64,
    pub duration: f64,
    pub speaker: String,
}

impl Turn {
    pub fn new(start: f64, duration: f64, speaker: impl Into<String>) -> Result<Self> {
        let speaker = speaker.into();
        if !(start.is_finite() && duration.is_finite() && duration > 0.0) {
            return Err(Error::Data(format!("turn needs finite start and duration > 0, got {start} + {duration}")));
        }
        if speaker.is_empty() || speaker.contains(char::is_whitespace) {
            return Err(Error::Data(format!("bad speaker label {speaker:?}")));
        }
        Ok(Turn { start, duration, speaker })
    }

    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub recording: String,
    pub turns: Vec<Turn>,
}

impl Timeline {
    pub fn new(recording: impl Into<String>) -> Self {
        Timeline {
            recording: recording.into(),
            turns: Vec::new(),
        }
    }

    /// Turns for labelled segments. Touching segments with the same label are
    /// joined into one turn.
    pub fn from_labels(recording: impl Into<String>, segments: &[(f64, f64)], labels: &LabelString) -> Result<Self> {
        if segments.len() != labels.len() {
            return Err(Error::Shape(format!("{} segments, {} labels", segments.len(), labels.len())));
        }
        let mut order: Vec<usize> = (0..segments.len()).collect();
        order.sort_by(|&a, &b| segments[a].0.total_cmp(&segments[b].0));
        let mut tl = Timeline::new(recording);
        let mut last_for: BTreeMap<u32, usize> = BTreeMap::new();
        for i in order {
            let (start, dur) = segments[i];
            let lab = labels.blocks()[i];
            let name = format!("spk{}", lab + 1);
            if let Some(&k) = last_for.get(&lab) {
                let is_last = k + 1 == tl.turns.len();
                let prev = &mut tl.turns[k];
                if is_last && (prev.end() - start).abs() < 1e-9 {
                    prev.duration = start + dur - prev.start;
                    continue;
                }
            }
            tl.turns.push(Turn::new(start, dur, name)?);
            last_for.insert(lab, tl.turns.len() - 1);
        }
        Ok(tl)
    }

    pub fn speakers(&self) -> BTreeSet<&str> {
        self.turns.iter().map(|t| t.speaker.as_str()).collect()
    }

    pub fn total_speech(&self) -> f64 {
        self.turns.iter().map(|t| t.duration).sum()
    }
}

/// Parses RTTM text. Lines that are not `SPEAKER` records are skipped with a
/// warning. Timelines come back sorted by recording id, turns in file order.
pub fn parse_rttm(text: &str, origin: &Path) -> Result<Vec<Timeline>> {
    let mut by_rec: BTreeMap<String, Timeline> = BTreeMap::new();
    for (k, line) in text.lines().enumerate() {
        let lineno = k + 1;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() || f[0].starts_with(';') || f[0].starts_with('#') {
            continue;
        }
        if f[0] != "SPEAKER" {
            log::warn!("{}:{lineno}: skipping {} line", origin.display(), f[0]);
            continue;
        }
        if f.len() < 8 {
            return Err(Error::parse(origin, lineno, format!("expected at least 8 fields, got {}", f.len())));
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(origin, lineno, format!("bad {what} {s:?}")))
        };
        let start = num(f[3], "onset")?;
        let dur = num(f[4], "duration")?;
        let turn = Turn::new(start, dur, f[7]).map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
        by_rec
            .entry(f[1].to_string())
            .or_insert_with(|| Timeline::new(f[1]))
            .turns
            .push(turn);
    }
    Ok(by_rec.into_values().collect())
}

pub fn read_rttm(path: &Path) -> Result<Vec<Timeline>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_rttm(&text, path)
}

pub fn format_rttm(timelines: &[Timeline]) -> String {
    let mut s = String::new();
    for tl in timelines {
        for t in &tl.turns {
            writeln!(
                s,
                "SPEAKER {} 1 {:.3} {:.3} <NA> <NA> {} <NA> <NA>",
                tl.recording, t.start, t.duration, t.speaker
            )
            .unwrap();
        }
    }
    s
}

pub fn write_rttm(path: &Path, timelines: &[Timeline]) -> Result<()> {
    std::fs::write(path, format_rttm(timelines)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Resolution {
    /// Times rounded to a frame grid of this many seconds.
    Frames(f64),
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoringOptions {
    /// Seconds excised on each side of every reference boundary.
    pub collar: f64,
    pub resolution: Resolution,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        ScoringOptions {
            collar: 0.0,
            resolution: Resolution::Frames(0.01),
        }
    }
}

/// Error times, in seconds, for one recording or an aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DerCounts {
    pub reference: f64,
    pub missed: f64,
    pub false_alarm: f64,
    pub confusion: f64,
}

impl DerCounts {
    pub fn der(&self) -> f64 {
        (self.missed + self.false_alarm + self.confusion) / self.reference
    }

    pub fn missed_rate(&self) -> f64 {
        self.missed / self.reference
    }

    pub fn false_alarm_rate(&self) -> f64 {
        self.false_alarm / self.reference
    }

    pub fn confusion_rate(&self) -> f64 {
        self.confusion / self.reference
    }

    fn add(&mut self, o: &DerCounts) {
        self.reference += o.reference;
        self.missed += o.missed;
        self.false_alarm += o.false_alarm;
        self.confusion += o.confusion;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerReport {
    pub per_recording: Vec<(String, DerCounts)>,
    pub total: DerCounts,
}

impl DerReport {
    pub fn der(&self) -> f64 {
        self.total.der()
    }

    /// Aligned, human-readable table with percentages.
    pub fn table(&self) -> String {
        let width = self
            .per_recording
            .iter()
            .map(|(r, _)| r.len())
            .chain(["recording".len(), "TOTAL".len()])
            .max()
            .unwrap();
        let mut s = format!(
            "{:<width$}  {:>9}  {:>7}  {:>7}  {:>7}  {:>7}\n",
            "recording", "speech_s", "miss%", "fa%", "conf%", "DER%"
        );
        let row = |s: &mut String, name: &str, c: &DerCounts| {
            writeln!(
                s,
                "{:<width$}  {:>9.2}  {:>7.2}  {:>7.2}  {:>7.2}  {:>7.2}",
                name,
                c.reference,
                100.0 * c.missed_rate(),
                100.0 * c.false_alarm_rate(),
                100.0 * c.confusion_rate(),
                100.0 * c.der()
            )
            .unwrap();
        };
        for (r, c) in &self.per_recording {
            row(&mut s, r, c);
        }
        row(&mut s, "TOTAL", &self.total);
        s
    }

    /// Tab-separated version of [`DerReport::table`] with fractions.
    pub fn tsv(&self) -> String {
        let mut s = String::from("recording\tspeech_s\tmissed\tfalse_alarm\tconfusion\tder\n");
        let all = self.per_recording.iter().map(|(r, c)| (r.as_str(), c)).chain([("TOTAL", &self.total)]);
        for (r, c) in all {
            writeln!(
                s,
                "{r}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                c.reference,
                c.missed_rate(),
                c.false_alarm_rate(),
                c.confusion_rate(),
                c.der()
            )
            .unwrap();
        }
        s
    }
}

/// Minimum-cost assignment of rows to columns for a rectangular cost matrix
/// (`rows <= cols` not required). Returns for every row its column, or `None`
/// when there are more rows than columns and the row is left out.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    let n = rows.max(cols);
    let c = |i: usize, j: usize| if i < rows && j < cols { cost[i][j] } else { 0.0 };
    // potentials method over a padded square matrix, 1-based
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = c(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; rows];
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i <= rows && j <= cols {
            out[i - 1] = Some(j - 1);
        }
    }
    out
}

fn quantize(t: f64, res: Resolution) -> f64 {
    match res {
        Resolution::Exact => t,
        Resolution::Frames(step) => (t / step).round() * step,
    }
}

/// DER of one recording: optimal one-to-one speaker mapping by overlap,
/// overlapping speech scored against every active reference speaker, and
/// a collar excised around reference boundaries.
pub fn der(reference: &Timeline, hyp: &Timeline, opts: &ScoringOptions) -> Result<DerCounts> {
    if reference.recording != hyp.recording {
        return Err(Error::Data(format!(
            "recording ids differ: {} vs {}",
            reference.recording, hyp.recording
        )));
    }
    if !(opts.collar >= 0.0 && opts.collar.is_finite()) {
        return Err(Error::Domain("collar must be finite and >= 0".into()));
    }
    if let Resolution::Frames(step) = opts.resolution {
        if !(step > 0.0) {
            return Err(Error::Domain("frame step must be > 0".into()));
        }
    }
    let res = opts.resolution;
    let spans = |tl: &Timeline| -> Vec<(f64, f64, String)> {
        tl.turns
            .iter()
            .map(|t| (quantize(t.start, res), quantize(t.end(), res), t.speaker.clone()))
            .filter(|(s, e, _)| e > s)
            .collect()
    };
    let r = spans(reference);
    let h = spans(hyp);
    if r.is_empty() {
        return Err(Error::Data(format!("reference for {} has no speech", reference.recording)));
    }
    let mut excised: Vec<(f64, f64)> = Vec::new();
    if opts.collar > 0.0 {
        for (s, e, _) in &r {
            for b in [*s, *e] {
                excised.push((b - opts.collar, b + opts.collar));
            }
        }
    }
    let mut cuts: Vec<f64> = r
        .iter()
        .chain(&h)
        .flat_map(|(s, e, _)| [*s, *e])
        .chain(excised.iter().flat_map(|(a, b)| [*a, *b]))
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let ref_names: Vec<&str> = reference.speakers().into_iter().collect();
    let hyp_names: Vec<&str> = hyp.speakers().into_iter().collect();
    let ref_ix = |s: &str| ref_names.binary_search(&s).unwrap();
    let hyp_ix = |s: &str| hyp_names.binary_search(&s).unwrap();

    // elementary intervals with their active speaker sets
    let mut pieces: Vec<(f64, Vec<usize>, Vec<usize>)> = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = 0.5 * (a + b);
        if excised.iter().any(|(lo, hi)| *lo <= mid && mid < *hi) {
            continue;
        }
        let mut rs: Vec<usize> = r.iter().filter(|(s, e, _)| *s <= mid && mid < *e).map(|(_, _, n)| ref_ix(n)).collect();
        let mut hs: Vec<usize> = h.iter().filter(|(s, e, _)| *s <= mid && mid < *e).map(|(_, _, n)| hyp_ix(n)).collect();
        rs.sort_unstable();
        rs.dedup();
        hs.sort_unstable();
        hs.dedup();
        if !rs.is_empty() || !hs.is_empty() {
            pieces.push((b - a, rs, hs));
        }
    }

    let mut overlap = vec![vec![0.0; hyp_names.len()]; ref_names.len()];
    for (len, rs, hs) in &pieces {
        for &i in rs {
            for &j in hs {
                overlap[i][j] += len;
            }
        }
    }
    let cost: Vec<Vec<f64>> = overlap.iter().map(|row| row.iter().map(|v| -v).collect()).collect();
    let mapping = hungarian(&cost);

    let mut c = DerCounts::default();
    for (len, rs, hs) in &pieces {
        let (nr, nh) = (rs.len() as f64, hs.len() as f64);
        let correct = rs
            .iter()
            .filter(|&&i| mapping[i].is_some_and(|j| hs.binary_search(&j).is_ok()))
            .count() as f64;
        c.reference += len * nr;
        c.missed += len * (nr - nh).max(0.0);
        c.false_alarm += len * (nh - nr).max(0.0);
        c.confusion += len * (nr.min(nh) - correct);
    }
    if !(c.reference > 0.0) {
        return Err(Error::Data(format!(
            "reference for {} has no scorable speech after the collar",
            reference.recording
        )));
    }
    Ok(c)
}

/// Scores every reference recording against its hypothesis (missing
/// hypotheses count as all-missed).
pub fn score_all(references: &[Timeline], hyps: &[Timeline], opts: &ScoringOptions) -> Result<DerReport> {
    if references.is_empty() {
        return Err(Error::Data("empty reference set".into()));
    }
    let by_id: BTreeMap<&str, &Timeline> = hyps.iter().map(|t| (t.recording.as_str(), t)).collect();
    let mut refs: Vec<&Timeline> = references.iter().collect();
    refs.sort_by(|a, b| a.recording.cmp(&b.recording));
    let mut per = Vec::new();
    let mut total = DerCounts::default();
    for r in refs {
        let empty = Timeline::new(r.recording.clone());
        let h = by_id.get(r.recording.as_str()).copied().unwrap_or(&empty);
        let c = der(r, h, opts)?;
        total.add(&c);
        per.push((r.recording.clone(), c));
    }
    for id in by_id.keys() {
        if !references.iter().any(|r| r.recording == *id) {
            log::warn!("hypothesis for {id} has no reference; ignored");
        }
    }
    Ok(DerReport { per_recording: per, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::{self, Stream};
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn tl(rec: &str, turns: &[(f64, f64, &str)]) -> Timeline {
        Timeline {
            recording: rec.into(),
            turns: turns.iter().map(|&(s, d, n)| Turn::new(s, d, n).unwrap()).collect(),
        }
    }

    fn exact() -> ScoringOptions {
        ScoringOptions {
            collar: 0.0,
            resolution: Resolution::Exact,
        }
    }

    #[test]
    fn der_trivial_examples() {
        let r = tl("r", &[(0.0, 5.0, "A"), (5.0, 5.0, "B")]);
        for opts in [exact(), ScoringOptions::default()] {
            assert_eq!(der(&r, &r, &opts).unwrap().der(), 0.0);
            let one = tl("r", &[(0.0, 10.0, "X")]);
            let c = der(&r, &one, &opts).unwrap();
            assert!((c.der() - 0.5).abs() < 1e-12);
            assert!((c.confusion_rate() - 0.5).abs() < 1e-12);
            let renamed = tl("r", &[(0.0, 5.0, "bob"), (5.0, 5.0, "alice")]);
            assert_eq!(der(&r, &renamed, &opts).unwrap().der(), 0.0);
        }
    }

    #[test]
    fn der_miss_fa_and_overlap() {
        let r = tl("r", &[(0.0, 4.0, "A"), (2.0, 4.0, "B")]);
        let h = tl("r", &[(0.0, 6.0, "x"), (8.0, 1.0, "y")]);
        let c = der(&r, &h, &exact()).unwrap();
        // reference time 8; overlap [2,4) has one hyp speaker: 2 s missed
        assert!((c.reference - 8.0).abs() < 1e-12);
        assert!((c.missed - 2.0).abs() < 1e-12);
        assert!((c.false_alarm - 1.0).abs() < 1e-12);
        // x maps to A (4 s) or B (4 s); the other speaker's solo 2 s is confused
        assert!((c.confusion - 2.0).abs() < 1e-12);
    }

    #[test]
    fn der_errors() {
        let r = tl("r", &[(0.0, 1.0, "A")]);
        assert!(der(&r, &tl("other", &[]), &exact()).is_err());
        assert!(der(&tl("r", &[]), &r, &exact()).is_err());
        assert!(score_all(&[], &[], &exact()).is_err());
    }

    fn random_timeline(rng: &mut impl Rng, rec: &str, n_spk: usize) -> Timeline {
        let mut t = 0.0;
        let mut turns = Vec::new();
        for _ in 0..rng.random_range(1..15) {
            t += rng.random_range(0.0..1.0);
            let d = rng.random_range(0.1..3.0);
            turns.push(Turn::new(t, d, format!("s{}", rng.random_range(0..n_spk))).unwrap());
            t += rng.random_range(-0.5..d);
        }
        Timeline { recording: rec.into(), turns }
    }

    #[test]
    fn der_invariant_under_relabeling() {
        let mut rng = seeding::rng(1, Stream::Check);
        for _ in 0..100 {
            let r = random_timeline(&mut rng, "x", 4);
            let h = random_timeline(&mut rng, "x", 5);
            let mut names: Vec<String> = (0..5).map(|i| format!("z{i}")).collect();
            names.shuffle(&mut rng);
            let mut h2 = h.clone();
            for t in &mut h2.turns {
                let k: usize = t.speaker[1..].parse().unwrap();
                t.speaker = names[k].clone();
            }
            let a = der(&r, &h, &exact()).unwrap();
            let b = der(&r, &h2, &exact()).unwrap();
            assert!((a.der() - b.der()).abs() < 1e-12);
        }
    }

    #[test]
    fn collar_never_increases_der() {
        let mut rng = seeding::rng(2, Stream::Check);
        for _ in 0..100 {
            let r = random_timeline(&mut rng, "x", 3);
            let h = random_timeline(&mut rng, "x", 3);
            let base = der(&r, &h, &exact()).unwrap();
            let collared = ScoringOptions { collar: 0.25, ..exact() };
            if let Ok(c) = der(&r, &h, &collared) {
                // compare error time; rates use different denominators
                let err = |c: &DerCounts| c.missed + c.false_alarm + c.confusion;
                assert!(err(&c) <= err(&base) + 1e-9);
            }
        }
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for k in 0..=p.len() {
                let mut q = p.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn segment_level_matches_bruteforce_assignment() {
        let mut rng = seeding::rng(3, Stream::Check);
        for _ in 0..50 {
            let k = rng.random_range(1..=6);
            let n_seg = 20;
            let truth: Vec<usize> = (0..n_seg).map(|_| rng.random_range(0..k)).collect();
            let guess: Vec<usize> = (0..n_seg).map(|_| rng.random_range(0..k)).collect();
            let mk = |lab: &[usize], p: &str| Timeline {
                recording: "x".into(),
                turns: lab
                    .iter()
                    .enumerate()
                    .map(|(i, &l)| Turn::new(i as f64, 1.0, format!("{p}{l}")).unwrap())
                    .collect(),
            };
            let got = der(&mk(&truth, "r"), &mk(&guess, "h"), &exact()).unwrap().der();
            let best = permutations(k)
                .iter()
                .map(|p| truth.iter().zip(&guess).filter(|(t, g)| p[**g] != **t).count())
                .min()
                .unwrap();
            assert!((got - best as f64 / n_seg as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn hungarian_rectangular() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0]];
        assert_eq!(hungarian(&cost), vec![Some(1), Some(0)]);
        let tall = vec![vec![1.0], vec![0.0], vec![3.0]];
        assert_eq!(hungarian(&tall), vec![None, Some(0), None]);
    }

    #[test]
    fn rttm_round_trip() {
        let mut rng = seeding::rng(4, Stream::Check);
        let tls: Vec<_> = ["a", "b"].iter().map(|r| random_timeline(&mut rng, r, 3)).collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.rttm");
        write_rttm(&p, &tls).unwrap();
        let back = read_rttm(&p).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in tls.iter().zip(&back) {
            assert_eq!(a.recording, b.recording);
            assert_eq!(a.turns.len(), b.turns.len());
            for (x, y) in a.turns.iter().zip(&b.turns) {
                assert!((x.start - y.start).abs() <= 5e-4 + 1e-12);
                assert!((x.duration - y.duration).abs() <= 5e-4 + 1e-12);
                assert_eq!(x.speaker, y.speaker);
            }
        }
    }

    #[test]
    fn rttm_parsing() {
        let p = Path::new("t.rttm");
        assert!(parse_rttm("", p).unwrap().is_empty());
        let one = parse_rttm("SPEAKER f 1 0.50 1.25 <NA> <NA> spk1 <NA> <NA>\n", p).unwrap();
        assert_eq!(one, vec![tl("f", &[(0.5, 1.25, "spk1")])]);
        let skipped = parse_rttm("SPKR-INFO f 1 <NA> <NA> <NA> unknown spk1 <NA> <NA>\n", p).unwrap();
        assert!(skipped.is_empty());
        match parse_rttm("SPEAKER f 1 0.5 1.0 <NA> <NA> a <NA> <NA>\nSPEAKER f 1 zz 1.0 <NA> <NA> a <NA> <NA>\n", p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn timeline_from_labels_joins_touching_turns() {
        let segs = [(0.0, 1.0), (1.0, 1.0), (2.0, 1.0), (3.5, 1.0)];
        let labels = LabelString::from_one_based(&[1, 1, 2, 2]).unwrap();
        let t = Timeline::from_labels("r", &segs, &labels).unwrap();
        assert_eq!(t, tl("r", &[(0.0, 2.0, "spk1"), (2.0, 1.0, "spk2"), (3.5, 1.0, "spk2")]));
    }

    #[test]
    fn report_formats() {
        let r = tl("r", &[(0.0, 5.0, "A"), (5.0, 5.0, "B")]);
        let h = tl("r", &[(0.0, 10.0, "X")]);
        let rep = score_all(&[r], &[h], &exact()).unwrap();
        assert!(rep.table().contains("50.00"));
        let tsv = rep.tsv();
        assert_eq!(tsv.lines().count(), 3);
        assert!(tsv.lines().nth(2).unwrap().starts_with("TOTAL\t"));
    }
}
