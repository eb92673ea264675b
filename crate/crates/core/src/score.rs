//! Z-standardized SES scores.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ca::EntityKind;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("need at least 2 scores, got {0}")]
    TooFew(usize),
    #[error("scores have zero variance")]
    ZeroVariance,
    #[error("scores contain non-finite values")]
    NonFinite,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub entity_id: String,
    pub raw_dim1: f64,
    pub ses: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationMeta {
    pub mean: f64,
    /// Population standard deviation (divisor n).
    pub sd: f64,
    pub n: usize,
    pub population: String,
    pub skewness: f64,
    pub median_ses: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub kind: EntityKind,
    pub entries: Vec<ScoreEntry>,
    pub meta: StandardizationMeta,
}

/// Z-scores `raw` using the population standard deviation.
pub fn standardize(
    kind: EntityKind,
    ids: Vec<String>,
    raw: &[f64],
    population: &str,
) -> Result<ScoreTable, ScoreError> {
    standardize_against(kind, ids, raw, &vec![true; raw.len()], population)
}

/// Z-scores every entry of `raw` with the mean and population standard
/// deviation of the entries flagged in `reference`.
pub fn standardize_against(
    kind: EntityKind,
    ids: Vec<String>,
    raw: &[f64],
    reference: &[bool],
    population: &str,
) -> Result<ScoreTable, ScoreError> {
    assert_eq!(ids.len(), raw.len(), "one id per score");
    assert_eq!(reference.len(), raw.len(), "one flag per score");
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(ScoreError::NonFinite);
    }
    let refs: Vec<f64> = raw.iter().zip(reference).filter(|(_, &r)| r).map(|(&x, _)| x).collect();
    let n = refs.len();
    if n < 2 {
        return Err(ScoreError::TooFew(n));
    }
    let nf = n as f64;
    let mean = refs.iter().sum::<f64>() / nf;
    let var = refs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
    let sd = var.sqrt();
    if sd.is_nan() || sd <= f64::EPSILON * mean.abs().max(1.0) * 16.0 {
        return Err(ScoreError::ZeroVariance);
    }
    let mut ses: Vec<f64> = raw.iter().map(|x| (x - mean) / sd).collect();
    // a second centering pass removes the rounding left by the first
    let m2 = ses.iter().zip(reference).filter(|(_, &r)| r).map(|(z, _)| z).sum::<f64>() / nf;
    ses.iter_mut().for_each(|z| *z -= m2);

    let ref_ses: Vec<f64> = ses.iter().zip(reference).filter(|(_, &r)| r).map(|(&z, _)| z).collect();
    let skewness = ref_ses.iter().map(|z| z.powi(3)).sum::<f64>() / nf;
    let median_ses = crate::stats::median(&ses);
    let entries = ids
        .into_iter()
        .zip(raw.iter().zip(&ses))
        .map(|(entity_id, (&raw_dim1, &ses))| ScoreEntry {
            entity_id,
            raw_dim1,
            ses,
        })
        .collect();
    Ok(ScoreTable {
        kind,
        entries,
        meta: StandardizationMeta {
            mean,
            sd,
            n,
            population: population.to_string(),
            skewness,
            median_ses,
        },
    })
}

impl ScoreTable {
    pub fn ses(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.ses).collect()
    }

    pub fn get(&self, id: &str) -> Option<&ScoreEntry> {
        self.entries.iter().find(|e| e.entity_id == id)
    }

    pub fn index(&self) -> std::collections::HashMap<&str, usize> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.entity_id.as_str(), i))
            .collect()
    }

    /// `entity_id,raw_dim1,ses`; floats in shortest round-trip form.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ScoreError> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["entity_id", "raw_dim1", "ses"])?;
        for e in &self.entries {
            wtr.write_record([e.entity_id.as_str(), &e.raw_dim1.to_string(), &e.ses.to_string()])?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Reads a table written by [`ScoreTable::write_csv`]; the metadata is
    /// recomputed from the `ses` column.
    pub fn read_csv<R: Read>(kind: EntityKind, r: R) -> Result<ScoreTable, ScoreError> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut entries = Vec::new();
        for rec in rdr.deserialize() {
            let e: ScoreEntry = rec?;
            entries.push(e);
        }
        let raw: Vec<f64> = entries.iter().map(|e| e.raw_dim1).collect();
        let mut t = standardize(kind, entries.iter().map(|e| e.entity_id.clone()).collect(), &raw, "reloaded")?;
        for (dst, src) in t.entries.iter_mut().zip(entries) {
            dst.ses = src.ses;
        }
        Ok(t)
    }
}
