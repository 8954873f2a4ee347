//! Soft voting over per-model class probabilities.
//!
//! Models exchange predictions as probability CSV files with the header
//! `id,p0,...,p6`, so members trained elsewhere (for example a fine-tuned
//! ResNet50 fed by [`crate::data::export_preprocessed`]) can join an
//! ensemble alongside checkpoints produced here.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Model, NUM_CLASSES};
use crate::numfmt::significant;
use crate::tensor::Scalar;
use crate::train::{evaluate_detailed, load_checkpoint, Metrics};

pub const PROBS_HEADER: [&str; 8] = ["id", "p0", "p1", "p2", "p3", "p4", "p5", "p6"];
/// Allowed deviation of a probability row sum from 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct ProbMatrix {
    ids: Vec<String>,
    /// Row-major `[n, 7]`.
    probs: Vec<f64>,
}

impl ProbMatrix {
    pub fn new(ids: Vec<String>, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != ids.len() * NUM_CLASSES {
            return Err(Error::shape(
                "prob matrix",
                format!("{} ids need {} probabilities, got {}", ids.len(), ids.len() * NUM_CLASSES, probs.len()),
            ));
        }
        for (r, row) in probs.chunks_exact(NUM_CLASSES).enumerate() {
            if row.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                return Err(Error::InvalidArgument(format!("row `{}` has a negative or non-finite entry", ids[r])));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidArgument(format!("row `{}` sums to {sum}, not 1", ids[r])));
            }
        }
        Ok(ProbMatrix { ids, probs })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * NUM_CLASSES..(i + 1) * NUM_CLASSES]
    }

    pub fn predictions(&self) -> Vec<usize> {
        self.probs.chunks_exact(NUM_CLASSES).map(crate::tensor::argmax).collect()
    }

    /// Errors on the first row whose id differs from `other`'s.
    pub fn check_aligned(&self, other_ids: &[String]) -> Result<()> {
        let n = self.ids.len().max(other_ids.len());
        for row in 0..n {
            let a = self.ids.get(row);
            let b = other_ids.get(row);
            if a != b {
                return Err(Error::Alignment {
                    row,
                    expected: a.cloned().unwrap_or_else(|| "<end of rows>".into()),
                    found: b.cloned().unwrap_or_else(|| "<end of rows>".into()),
                });
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::InvalidArgument(format!("csv write failed: {e}"));
        w.write_record(PROBS_HEADER).map_err(err)?;
        for (i, id) in self.ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(self.row(i).iter().map(|&p| significant(p, 9)));
            w.write_record(&rec).map_err(err)?;
        }
        w.flush().map_err(|e| Error::InvalidArgument(format!("csv write failed: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file)).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::io(path, std::io::Error::other(m)),
            other => other,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &bytes)
    }

    pub fn parse(path: &Path, bytes: &[u8]) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
        let header = reader.headers().map_err(|e| err(1, e.to_string()))?.clone();
        if header.iter().collect::<Vec<_>>() != PROBS_HEADER {
            return Err(err(1, format!("expected header `{}`", PROBS_HEADER.join(","))));
        }
        let mut ids = Vec::new();
        let mut probs = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| err(line, e.to_string()))?;
            if rec.len() != PROBS_HEADER.len() {
                return Err(err(line, format!("expected 8 fields, found {}", rec.len())));
            }
            ids.push(rec[0].to_string());
            for field in rec.iter().skip(1) {
                let p: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| err(line, format!("`{field}` is not a number")))?;
                probs.push(p);
            }
        }
        ProbMatrix::new(ids, probs).map_err(|e| match e {
            Error::InvalidArgument(m) => err(0, m),
            other => other,
        })
    }
}

/// Weighted mean of aligned probability matrices.
///
/// Each row is computed as `r_0 + sum_i w_i (r_i - r_0)` with normalized
/// weights, which equals the weighted mean and reproduces the input
/// exactly when every member row is identical.
pub fn soft_vote(inputs: &[ProbMatrix], weights: &[f64]) -> Result<ProbMatrix> {
    let Some(first) = inputs.first() else {
        return Err(Error::InvalidArgument("soft voting needs at least one member".into()));
    };
    if weights.len() != inputs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {} members",
            weights.len(),
            inputs.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument(format!("weights must be positive and finite, got {w}")));
    }
    for m in &inputs[1..] {
        first.check_aligned(&m.ids)?;
    }
    let total: f64 = weights.iter().sum();
    let norm: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let mut probs = first.probs.clone();
    for (m, &w) in inputs.iter().zip(&norm).skip(1) {
        for ((out, &p), &p0) in probs.iter_mut().zip(&m.probs).zip(&first.probs) {
            *out += w * (p - p0);
        }
    }
    Ok(ProbMatrix {
        ids: first.ids.clone(),
        probs,
    })
}

/// Infer-mode probabilities for every example of `split`.
pub fn model_probs<T: Scalar>(model: &mut Model<T>, split: &Dataset, batch_size: usize) -> Result<ProbMatrix> {
    let eval = evaluate_detailed(model, split, batch_size)?;
    ProbMatrix::new(split.ids(), eval.probs)
}

pub fn export_probs<T: Scalar>(model: &mut Model<T>, split: &Dataset, path: &Path) -> Result<ProbMatrix> {
    let probs = model_probs(model, split, 256)?;
    probs.save(path)?;
    Ok(probs)
}

#[derive(Clone, Debug, PartialEq)]
pub enum MemberSource {
    /// Evaluate the best-epoch model stored in a checkpoint.
    Checkpoint(PathBuf),
    /// Read a probability CSV.
    Probs(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSpec {
    pub members: Vec<(MemberSource, f64)>,
}

impl EnsembleSpec {
    pub fn equal(sources: Vec<MemberSource>) -> Self {
        EnsembleSpec {
            members: sources.into_iter().map(|s| (s, 1.0)).collect(),
        }
    }

    /// Loads every member's probabilities for `split`.
    pub fn resolve(&self, split: &Dataset) -> Result<Vec<ProbMatrix>> {
        if self.members.is_empty() {
            return Err(Error::InvalidArgument("ensemble needs at least one member".into()));
        }
        self.members
            .iter()
            .map(|(src, _)| match src {
                MemberSource::Probs(p) => ProbMatrix::load(p),
                MemberSource::Checkpoint(p) => {
                    let trainer = load_checkpoint::<f32>(p)?;
                    let mut model = trainer.best_model().clone();
                    model_probs(&mut model, split, 256)
                }
            })
            .collect()
    }
}

pub struct EnsembleResult {
    pub probs: ProbMatrix,
    pub metrics: Metrics,
    pub member_metrics: Vec<Metrics>,
}

/// Soft-votes the members and scores the argmax against `split`'s labels.
pub fn ensemble_evaluate(spec: &EnsembleSpec, split: &Dataset) -> Result<EnsembleResult> {
    let members = spec.resolve(split)?;
    let ids = split.ids();
    let labels = split.labels();
    let mut member_metrics = Vec::with_capacity(members.len());
    for m in &members {
        ProbMatrix::check_aligned(&ProbMatrix { ids: ids.clone(), probs: Vec::new() }, &m.ids)?;
        member_metrics.push(Metrics::from_predictions(&labels, &m.predictions())?);
    }
    let weights: Vec<f64> = spec.members.iter().map(|(_, w)| *w).collect();
    let probs = soft_vote(&members, &weights)?;
    let metrics = Metrics::from_predictions(&labels, &probs.predictions())?;
    Ok(EnsembleResult {
        probs,
        metrics,
        member_metrics,
    })
}
