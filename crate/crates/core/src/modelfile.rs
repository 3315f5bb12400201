//! Versioned plain-text files for models, checkpoints and full-covariance
//! PLDA.
//!
//! A file starts with `probdiar-<kind> <version>`, followed by `scalar <name>
//! <value>` lines and `matrix <name> <rows> <cols>` blocks with one row per
//! line. Numbers are written with 17 significant digits so reading back is
//! exact. Lines starting with `#` are comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::extractor::{ExtractorModel, PrecisionNet};
use crate::partitions::CrpParams;
use crate::plda::{DiagPlda, FullPlda};
use crate::training::{EpochLoss, GradientSet, TrainState};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Default, Clone, PartialEq)]
struct Sections {
    scalars: BTreeMap<String, f64>,
    matrices: BTreeMap<String, DMatrix<f64>>,
    order: Vec<String>,
}

impl Sections {
    fn scalar(&mut self, name: &str, v: f64) {
        self.order.push(name.to_string());
        self.scalars.insert(name.to_string(), v);
    }

    fn matrix(&mut self, name: &str, m: &DMatrix<f64>) {
        self.order.push(name.to_string());
        self.matrices.insert(name.to_string(), m.clone());
    }

    fn vector(&mut self, name: &str, v: &DVector<f64>) {
        self.matrix(name, &DMatrix::from_row_slice(1, v.len(), v.as_slice()));
    }

    fn render(&self, kind: &str) -> String {
        let mut s = format!("probdiar-{kind} {MODEL_FORMAT_VERSION}\n");
        for name in &self.order {
            if let Some(v) = self.scalars.get(name) {
                writeln!(s, "scalar {name} {v:.16e}").unwrap();
            } else {
                let m = &self.matrices[name];
                writeln!(s, "matrix {name} {} {}", m.nrows(), m.ncols()).unwrap();
                for r in 0..m.nrows() {
                    let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:.16e}")).collect();
                    s.push_str(&row.join(" "));
                    s.push('\n');
                }
            }
        }
        s
    }

    fn parse(text: &str, kind: &str, path: &Path) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (ln, head) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty file"))?;
        let want = format!("probdiar-{kind}");
        let mut hf = head.split_whitespace();
        if hf.next() != Some(want.as_str()) {
            return Err(Error::parse(path, ln, format!("expected header {want:?}")));
        }
        let version: u32 = hf
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::parse(path, ln, "missing format version"))?;
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::parse(
                path,
                ln,
                format!("unsupported format version {version} (this build reads {MODEL_FORMAT_VERSION})"),
            ));
        }
        let num = |s: &str, ln: usize| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(path, ln, format!("bad number {s:?}")))
        };
        let mut out = Sections::default();
        while let Some((ln, line)) = lines.next() {
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.as_slice() {
                ["scalar", name, v] => {
                    let v = num(v, ln)?;
                    out.scalar(name, v);
                }
                ["matrix", name, r, c] => {
                    let dims = |s: &str| s.parse::<usize>().map_err(|_| Error::parse(path, ln, format!("bad size {s:?}")));
                    let (rows, cols) = (dims(r)?, dims(c)?);
                    let mut data = Vec::with_capacity(rows * cols);
                    for _ in 0..rows {
                        let (rl, row) = lines
                            .next()
                            .ok_or_else(|| Error::parse(path, ln, format!("matrix {name} is truncated")))?;
                        let vals: Vec<&str> = row.split_whitespace().collect();
                        if vals.len() != cols {
                            return Err(Error::parse(path, rl, format!("expected {cols} values, got {}", vals.len())));
                        }
                        for v in vals {
                            data.push(num(v, rl)?);
                        }
                    }
                    out.matrix(name, &DMatrix::from_row_slice(rows, cols, &data));
                }
                _ => return Err(Error::parse(path, ln, format!("unrecognized line {line:?}"))),
            }
        }
        Ok(out)
    }

    fn take_matrix(&mut self, name: &str, path: &Path) -> Result<DMatrix<f64>> {
        self.matrices
            .remove(name)
            .ok_or_else(|| Error::Data(format!("{}: missing matrix {name}", path.display())))
    }

    fn take_vector(&mut self, name: &str, path: &Path) -> Result<DVector<f64>> {
        let m = self.take_matrix(name, path)?;
        if m.nrows() != 1 {
            return Err(Error::Data(format!("{}: {name} must be a single row", path.display())));
        }
        Ok(DVector::from_iterator(m.ncols(), m.iter().copied()))
    }

    fn take_scalar(&mut self, name: &str, path: &Path) -> Result<f64> {
        self.scalars
            .remove(name)
            .ok_or_else(|| Error::Data(format!("{}: missing scalar {name}", path.display())))
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn put_model(s: &mut Sections, model: &ExtractorModel, plda: &DiagPlda) {
    s.vector("w", &DVector::from_column_slice(plda.w()));
    s.matrix("transform", &model.transform);
    s.matrix("w1", &model.net.w1);
    s.vector("b1", &model.net.b1);
    s.matrix("w2", &model.net.w2);
    s.vector("b2", &model.net.b2);
}

fn take_model(s: &mut Sections, path: &Path) -> Result<(ExtractorModel, DiagPlda)> {
    let w = s.take_vector("w", path)?;
    let plda = DiagPlda::new(w.iter().copied().collect())?;
    let net = PrecisionNet {
        w1: s.take_matrix("w1", path)?,
        b1: s.take_vector("b1", path)?,
        w2: s.take_matrix("w2", path)?,
        b2: s.take_vector("b2", path)?,
    };
    let model = ExtractorModel::new(s.take_matrix("transform", path)?, net)?;
    if model.dim() != plda.dim() {
        return Err(Error::Shape(format!(
            "{}: model has {} output dims, w has {}",
            path.display(),
            model.dim(),
            plda.dim()
        )));
    }
    Ok((model, plda))
}

pub fn format_model(model: &ExtractorModel, plda: &DiagPlda) -> String {
    let mut s = Sections::default();
    put_model(&mut s, model, plda);
    s.render("model")
}

pub fn parse_model(text: &str, path: &Path) -> Result<(ExtractorModel, DiagPlda)> {
    let mut s = Sections::parse(text, "model", path)?;
    take_model(&mut s, path)
}

pub fn write_model(path: &Path, model: &ExtractorModel, plda: &DiagPlda) -> Result<()> {
    write(path, &format_model(model, plda))
}

pub fn read_model(path: &Path) -> Result<(ExtractorModel, DiagPlda)> {
    parse_model(&read(path)?, path)
}

/// Training state plus everything needed to resume.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    /// Stores `log w` itself, so resuming does not round-trip through `exp`.
    pub state: TrainState,
    pub crp: CrpParams,
    pub epoch: usize,
    /// Momentum buffers in parameter-group order, if any.
    pub velocity: Option<GradientSet>,
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let mut s = Sections::default();
    s.scalar("epoch", ck.epoch as f64);
    s.scalar("crp_concentration", ck.crp.concentration());
    s.scalar("crp_discount", ck.crp.discount());
    put_model(&mut s, &ck.state.model, &ck.state.plda()?);
    s.vector("log_w", &ck.state.log_w);
    if let Some(v) = &ck.velocity {
        s.vector("velocity_log_w", &v.log_w);
        s.matrix("velocity_transform", &v.transform);
        s.matrix("velocity_w1", &v.w1);
        s.vector("velocity_b1", &v.b1);
        s.matrix("velocity_w2", &v.w2);
        s.vector("velocity_b2", &v.b2);
    }
    write(path, &s.render("checkpoint"))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut s = Sections::parse(&read(path)?, "checkpoint", path)?;
    let epoch = s.take_scalar("epoch", path)?;
    let crp = CrpParams::new(s.take_scalar("crp_concentration", path)?, s.take_scalar("crp_discount", path)?)?;
    let velocity = if s.matrices.contains_key("velocity_log_w") {
        Some(GradientSet {
            log_w: s.take_vector("velocity_log_w", path)?,
            transform: s.take_matrix("velocity_transform", path)?,
            w1: s.take_matrix("velocity_w1", path)?,
            b1: s.take_vector("velocity_b1", path)?,
            w2: s.take_matrix("velocity_w2", path)?,
            b2: s.take_vector("velocity_b2", path)?,
        })
    } else {
        None
    };
    let log_w = s.take_vector("log_w", path)?;
    let (model, plda) = take_model(&mut s, path)?;
    if log_w.len() != plda.dim() {
        return Err(Error::parse(path, 0, "log_w and w differ in length"));
    }
    Ok(Checkpoint {
        state: TrainState { model, log_w },
        crp,
        epoch: epoch as usize,
        velocity,
    })
}

pub fn format_full_plda(p: &FullPlda) -> String {
    let mut s = Sections::default();
    s.matrix("between_cov", p.between_cov());
    s.matrix("within_cov", p.within_cov());
    s.render("plda")
}

pub fn write_full_plda(path: &Path, p: &FullPlda) -> Result<()> {
    write(path, &format_full_plda(p))
}

pub fn read_full_plda(path: &Path) -> Result<FullPlda> {
    let mut s = Sections::parse(&read(path)?, "plda", path)?;
    FullPlda::new(s.take_matrix("between_cov", path)?, s.take_matrix("within_cov", path)?)
}

/// Per-epoch loss history as a tab-separated table.
pub fn write_history(path: &Path, history: &[EpochLoss]) -> Result<()> {
    write(path, &crate::training::history_table(history))
}
