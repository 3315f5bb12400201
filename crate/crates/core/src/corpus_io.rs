//! Text formats for segment corpora and embedding dumps.
//!
//! Both are one segment per line, whitespace-separated:
//!
//! ```text
//! # probdiar-corpus 1 raw_dim=8 quality_dim=4
//! <recording> <segment> <start> <duration> <raw,...> <quality,...> <speaker>
//!
//! # probdiar-embeddings 1 dim=8
//! <recording> <segment> <start> <duration> <xhat,...> <prec,...> <speaker>
//! ```
//!
//! Vectors are comma-separated. The speaker is `-` when unknown. Segments of
//! a recording keep file order; recordings are sorted by id.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::evalkit::{Timeline, Turn};
use crate::extractor::{Corpus, ExtractorModel, Recording, Segment, SegmentRecord};
use crate::plda::ProbEmbedding;

pub const CORPUS_FORMAT_VERSION: u32 = 1;
pub const UNKNOWN_SPEAKER: &str = "-";

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(",")
}

fn split_vec(s: &str, path: &Path, line: usize) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::parse(path, line, format!("bad number {t:?}")))
        })
        .collect()
}

/// Parses `key=value` pairs after the magic word of a header comment.
fn header_dims(text: &str, magic: &str, path: &Path) -> Result<BTreeMap<String, usize>> {
    let first = text.lines().next().unwrap_or("");
    let mut f = first.trim_start_matches('#').split_whitespace();
    if f.next() != Some(magic) {
        return Err(Error::parse(path, 1, format!("expected a `# {magic} <version> ...` header")));
    }
    let v: u32 = f
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::parse(path, 1, "missing format version"))?;
    if v != CORPUS_FORMAT_VERSION {
        return Err(Error::parse(path, 1, format!("unsupported format version {v}")));
    }
    let mut out = BTreeMap::new();
    for kv in f {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::parse(path, 1, format!("bad header field {kv:?}")))?;
        let v = v
            .parse()
            .map_err(|_| Error::parse(path, 1, format!("bad header value {kv:?}")))?;
        out.insert(k.to_string(), v);
    }
    Ok(out)
}

struct Row<'a> {
    line: usize,
    recording: &'a str,
    segment: &'a str,
    start: f64,
    duration: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    speaker: &'a str,
}

fn rows<'a>(text: &'a str, path: &'a Path, dims: (usize, usize)) -> impl Iterator<Item = Result<Row<'a>>> + 'a {
    text.lines().enumerate().filter_map(move |(k, l)| {
        let line = k + 1;
        let l = l.trim();
        if l.is_empty() || l.starts_with('#') {
            return None;
        }
        Some((|| {
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 7 {
                return Err(Error::parse(path, line, format!("expected 7 fields, got {}", f.len())));
            }
            let num = |s: &str, what: &str| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(path, line, format!("bad {what} {s:?}")))
            };
            let first = split_vec(f[4], path, line)?;
            let second = split_vec(f[5], path, line)?;
            if first.len() != dims.0 || second.len() != dims.1 {
                return Err(Error::parse(
                    path,
                    line,
                    format!(
                        "vector sizes {}/{} do not match header {}/{}",
                        first.len(),
                        second.len(),
                        dims.0,
                        dims.1
                    ),
                ));
            }
            Ok(Row {
                line,
                recording: f[0],
                segment: f[1],
                start: num(f[2], "start")?,
                duration: num(f[3], "duration")?,
                first,
                second,
                speaker: f[6],
            })
        })())
    })
}

pub fn format_corpus(c: &Corpus) -> String {
    let mut s = format!(
        "# probdiar-corpus {CORPUS_FORMAT_VERSION} raw_dim={} quality_dim={}\n",
        c.raw_dim, c.quality_dim
    );
    for rec in &c.recordings {
        for seg in &rec.segments {
            writeln!(
                s,
                "{} {} {:.6} {:.16e} {} {} {}",
                rec.id,
                seg.id,
                seg.start,
                seg.record.duration,
                join(&seg.record.raw),
                join(&seg.record.quality),
                seg.speaker
            )
            .unwrap();
        }
    }
    s
}

pub fn parse_corpus(text: &str, path: &Path) -> Result<Corpus> {
    let h = header_dims(text, "probdiar-corpus", path)?;
    let get = |k: &str| h.get(k).copied().ok_or_else(|| Error::parse(path, 1, format!("header lacks {k}")));
    let (raw_dim, quality_dim) = (get("raw_dim")?, get("quality_dim")?);
    let mut recs: BTreeMap<String, Vec<Segment>> = BTreeMap::new();
    for row in rows(text, path, (raw_dim, quality_dim)) {
        let row = row?;
        let record = SegmentRecord::new(row.first, row.second, row.duration)
            .map_err(|e| Error::parse(path, row.line, e.to_string()))?;
        recs.entry(row.recording.to_string()).or_default().push(Segment {
            id: row.segment.to_string(),
            start: row.start,
            speaker: row.speaker.to_string(),
            record,
        });
    }
    Ok(Corpus {
        raw_dim,
        quality_dim,
        recordings: recs.into_iter().map(|(id, segments)| Recording { id, segments }).collect(),
    })
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, path)
}

pub fn write_corpus(path: &Path, c: &Corpus) -> Result<()> {
    std::fs::write(path, format_corpus(c)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedSegment {
    pub id: String,
    pub start: f64,
    pub duration: f64,
    pub speaker: String,
    pub embedding: ProbEmbedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedRecording {
    pub id: String,
    pub segments: Vec<EmbeddedSegment>,
}

impl EmbeddedRecording {
    pub fn embeddings(&self) -> Vec<ProbEmbedding> {
        self.segments.iter().map(|s| s.embedding.clone()).collect()
    }

    pub fn spans(&self) -> Vec<(f64, f64)> {
        self.segments.iter().map(|s| (s.start, s.duration)).collect()
    }

    /// Reference timeline from the true speakers, or `None` if any is
    /// unknown.
    pub fn reference(&self) -> Option<Timeline> {
        reference_timeline(&self.id, self.segments.iter().map(|s| (s.start, s.duration, s.speaker.as_str())))
    }
}

/// Runs the extractor over every segment.
pub fn embed_corpus(c: &Corpus, model: &ExtractorModel) -> Result<Vec<EmbeddedRecording>> {
    c.recordings
        .iter()
        .map(|rec| {
            Ok(EmbeddedRecording {
                id: rec.id.clone(),
                segments: rec
                    .segments
                    .iter()
                    .map(|s| {
                        Ok(EmbeddedSegment {
                            id: s.id.clone(),
                            start: s.start,
                            duration: s.record.duration,
                            speaker: s.speaker.clone(),
                            embedding: model.extract(&s.record)?,
                        })
                    })
                    .collect::<Result<_>>()?,
            })
        })
        .collect()
}

fn reference_timeline<'a>(id: &str, segs: impl Iterator<Item = (f64, f64, &'a str)>) -> Option<Timeline> {
    let mut tl = Timeline::new(id);
    for (start, dur, spk) in segs {
        if spk == UNKNOWN_SPEAKER {
            return None;
        }
        tl.turns.push(Turn::new(start, dur, spk).ok()?);
    }
    Some(tl)
}

/// Reference timelines of a corpus; recordings with unknown speakers are
/// left out.
pub fn reference_timelines(c: &Corpus) -> Vec<Timeline> {
    c.recordings
        .iter()
        .filter_map(|r| {
            reference_timeline(
                &r.id,
                r.segments.iter().map(|s| (s.start, s.record.duration, s.speaker.as_str())),
            )
        })
        .collect()
}

pub fn format_embeddings(recs: &[EmbeddedRecording]) -> String {
    let dim = recs
        .iter()
        .flat_map(|r| r.segments.first())
        .map(|s| s.embedding.dim())
        .next()
        .unwrap_or(0);
    let mut s = format!("# probdiar-embeddings {CORPUS_FORMAT_VERSION} dim={dim}\n");
    for r in recs {
        for seg in &r.segments {
            writeln!(
                s,
                "{} {} {:.6} {:.16e} {} {} {}",
                r.id,
                seg.id,
                seg.start,
                seg.duration,
                join(seg.embedding.xhat()),
                join(seg.embedding.prec()),
                seg.speaker
            )
            .unwrap();
        }
    }
    s
}

pub fn parse_embeddings(text: &str, path: &Path) -> Result<Vec<EmbeddedRecording>> {
    let h = header_dims(text, "probdiar-embeddings", path)?;
    let dim = *h.get("dim").ok_or_else(|| Error::parse(path, 1, "header lacks dim"))?;
    let mut recs: BTreeMap<String, Vec<EmbeddedSegment>> = BTreeMap::new();
    for row in rows(text, path, (dim, dim)) {
        let row = row?;
        if !(row.duration > 0.0) {
            return Err(Error::parse(path, row.line, "duration must be > 0"));
        }
        let embedding =
            ProbEmbedding::new(row.first, row.second).map_err(|e| Error::parse(path, row.line, e.to_string()))?;
        recs.entry(row.recording.to_string()).or_default().push(EmbeddedSegment {
            id: row.segment.to_string(),
            start: row.start,
            duration: row.duration,
            speaker: row.speaker.to_string(),
            embedding,
        });
    }
    Ok(recs
        .into_iter()
        .map(|(id, segments)| EmbeddedRecording { id, segments })
        .collect())
}

pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddedRecording>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, path)
}

pub fn write_embeddings(path: &Path, recs: &[EmbeddedRecording]) -> Result<()> {
    std::fs::write(path, format_embeddings(recs)).map_err(|e| Error::io(path, e))
}
