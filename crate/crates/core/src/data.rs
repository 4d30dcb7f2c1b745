//! Observational records, datasets, and the nuisance-value record shared by
//! every estimator.
//!
//! A record is `(x, t, a, y)`: confounders, binary assignment, binary intake
//! and outcome. Datasets carry their non-adherence mode and optionally the
//! ground-truth assignment effect for every record.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which assignment/intake mismatches are possible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonAdherenceMode {
    /// Only individuals assigned treatment may deviate; `a = 1, t = 0` never occurs.
    OneSided,
    /// Intake may deviate from assignment in either direction.
    TwoSided,
}

impl NonAdherenceMode {
    /// The `(a, t)` cells that can carry probability mass under this mode.
    pub fn possible_cells(self) -> &'static [(u8, u8)] {
        match self {
            NonAdherenceMode::OneSided => &[(0, 0), (0, 1), (1, 1)],
            NonAdherenceMode::TwoSided => &[(0, 0), (0, 1), (1, 0), (1, 1)],
        }
    }
}

impl std::fmt::Display for NonAdherenceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NonAdherenceMode::OneSided => f.write_str("one_sided"),
            NonAdherenceMode::TwoSided => f.write_str("two_sided"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Binary,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub t: u8,
    pub a: u8,
    pub y: f64,
}

impl Sample {
    pub fn new(x: Vec<f64>, t: u8, a: u8, y: f64) -> Self {
        Sample { x, t, a, y }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub mode: NonAdherenceMode,
    pub outcome_kind: OutcomeKind,
    pub true_catea: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, mode: NonAdherenceMode, outcome_kind: OutcomeKind) -> Self {
        Dataset {
            samples,
            mode,
            outcome_kind,
            true_catea: None,
        }
    }

    pub fn with_truth(mut self, truth: Vec<f64>) -> Self {
        self.true_catea = Some(truth);
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Feature dimension, taken from the first sample (0 when empty).
    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.x.len())
    }

    /// Row-major feature matrix, one row per sample.
    pub fn features(&self) -> Array2<f64> {
        let d = self.dim();
        let mut m = Array2::zeros((self.len(), d));
        for (mut row, s) in m.rows_mut().into_iter().zip(&self.samples) {
            row.assign(&ndarray::ArrayView1::from(&s.x[..]));
        }
        m
    }

    /// The ground truth, or [`Error::MissingTruth`].
    pub fn truth(&self) -> Result<&[f64]> {
        self.true_catea.as_deref().ok_or(Error::MissingTruth)
    }

    /// Subset by index, carrying truth along when present.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            mode: self.mode,
            outcome_kind: self.outcome_kind,
            true_catea: self
                .true_catea
                .as_ref()
                .map(|t| indices.iter().map(|&i| t[i]).collect()),
        }
    }

    /// Writes the column CSV `x0,...,x{d-1},t,a,y[,catea]`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let d = self.dim();
        let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
        header.extend(["t", "a", "y"].map(String::from));
        if self.true_catea.is_some() {
            header.push("catea".into());
        }
        w.write_record(&header)?;
        for (i, s) in self.samples.iter().enumerate() {
            let mut row: Vec<String> = s.x.iter().map(|&v| fmt_f64(v)).collect();
            row.push(s.t.to_string());
            row.push(s.a.to_string());
            row.push(fmt_f64(s.y));
            if let Some(truth) = &self.true_catea {
                row.push(fmt_f64(truth[i]));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Reads the column CSV written by [`Dataset::write_csv`]. Mode and
    /// outcome kind are not stored in the file and must be supplied.
    pub fn read_csv<R: Read>(
        reader: R,
        mode: NonAdherenceMode,
        outcome_kind: OutcomeKind,
    ) -> Result<Dataset> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let col = |name: &str| header.iter().position(|h| h == name);
        let (t_col, a_col, y_col) = match (col("t"), col("a"), col("y")) {
            (Some(t), Some(a), Some(y)) => (t, a, y),
            _ => return Err(Error::Parse("missing t, a or y column".into())),
        };
        let catea_col = col("catea");
        let x_cols: Vec<usize> = (0..)
            .map_while(|j| col(&format!("x{j}")))
            .collect();

        let mut samples = Vec::new();
        let mut truth = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let num = |c: usize| -> Result<f64> {
                rec.get(c)
                    .ok_or_else(|| Error::Parse("short row".into()))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(e.to_string()))
            };
            let bit = |c: usize| -> Result<u8> {
                match num(c)? {
                    0.0 => Ok(0),
                    1.0 => Ok(1),
                    v => Err(Error::Parse(format!("expected 0 or 1, got {v}"))),
                }
            };
            let x = x_cols.iter().map(|&c| num(c)).collect::<Result<Vec<_>>>()?;
            samples.push(Sample::new(x, bit(t_col)?, bit(a_col)?, num(y_col)?));
            if let Some(c) = catea_col {
                truth.push(num(c)?);
            }
        }
        let mut ds = Dataset::new(samples, mode, outcome_kind);
        if catea_col.is_some() {
            ds.true_catea = Some(truth);
        }
        Ok(ds)
    }
}

/// 17 significant digits, enough to round-trip any f64.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Checks every [`Dataset`] invariant. Pure and idempotent.
pub fn validate_dataset(ds: &Dataset) -> Result<()> {
    let d = ds.dim();
    for (i, s) in ds.samples.iter().enumerate() {
        if s.x.len() != d {
            return Err(Error::DimensionMismatch {
                index: i,
                expected: d,
                found: s.x.len(),
            });
        }
        if s.t > 1 || s.a > 1 {
            return Err(Error::Parse(format!(
                "sample {i} has non-binary t or a"
            )));
        }
        if ds.mode == NonAdherenceMode::OneSided && s.a == 1 && s.t == 0 {
            return Err(Error::OneSidedViolation { index: i });
        }
        if ds.outcome_kind == OutcomeKind::Binary && s.y != 0.0 && s.y != 1.0 {
            return Err(Error::NonBinaryOutcome {
                index: i,
                value: s.y,
            });
        }
    }
    if let Some(truth) = &ds.true_catea {
        if truth.len() != ds.len() {
            return Err(Error::TruthLengthMismatch {
                expected: ds.len(),
                found: truth.len(),
            });
        }
    }
    Ok(())
}

/// Per-individual nuisance values `(π̂, Â(t), Ŷ(a, t))` consumed by the
/// adjustment formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuisanceValues {
    /// Assignment propensity.
    pub pi: f64,
    /// Intake probability given assignment, indexed by `t`.
    pub a_given_t: [f64; 2],
    /// Outcome mean indexed `[a][t]`.
    pub y_given_at: [[f64; 2]; 2],
}

impl NuisanceValues {
    pub fn a(&self, t: u8) -> f64 {
        self.a_given_t[t as usize]
    }

    pub fn y(&self, a: u8, t: u8) -> f64 {
        self.y_given_at[a as usize][t as usize]
    }
}
