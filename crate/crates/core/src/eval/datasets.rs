//! TSV benchmark files.
//!
//! * similarity (STS, BCR): `text_a \t text_b \t gold`
//! * linking (NEL): `mention \t concept_id`
//! * NLI triplets: `anchor \t entailed \t contradicted`

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_to_string, sha256_hex, tsv_rows};

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

fn expect_columns<'a>(path: &Path, line: usize, fields: Vec<&'a str>, n: usize) -> Result<Vec<&'a str>> {
    if fields.len() != n {
        return Err(Error::parse(
            path,
            line,
            format!("expected {n} columns, found {}", fields.len()),
        ));
    }
    Ok(fields)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairRow {
    pub text_a: String,
    pub text_b: String,
    pub gold: f64,
}

/// Scored text pairs: STS (gold in `[0, 5]`) or BCR (any scale).
#[derive(Clone, Debug, PartialEq)]
pub struct PairDataset {
    pub name: String,
    pub rows: Vec<PairRow>,
}

impl PairDataset {
    pub fn new(name: impl Into<String>, rows: Vec<PairRow>) -> Self {
        Self {
            name: name.into(),
            rows,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = read_to_string(path)?;
        let mut rows = Vec::new();
        for (line, fields) in tsv_rows(&content) {
            let f = expect_columns(path, line, fields, 3)?;
            let gold: f64 = f[2]
                .trim()
                .parse()
                .map_err(|e| Error::parse(path, line, format!("bad gold score {:?}: {e}", f[2])))?;
            if !gold.is_finite() {
                return Err(Error::parse(path, line, "non-finite gold score"));
            }
            rows.push(PairRow {
                text_a: f[0].to_string(),
                text_b: f[1].to_string(),
                gold,
            });
        }
        Ok(Self::new(dataset_name(path), rows))
    }

    pub fn gold(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.gold).collect()
    }

    /// Checks the STS gold range `[0, 5]`.
    pub fn check_sts_range(&self) -> Result<()> {
        match self.rows.iter().find(|r| !(0.0..=5.0).contains(&r.gold)) {
            Some(r) => Err(Error::Validation(format!("STS gold score {} outside [0, 5]", r.gold))),
            None => Ok(()),
        }
    }

    pub fn to_tsv(&self) -> String {
        self.rows
            .iter()
            .map(|r| format!("{}\t{}\t{}\n", r.text_a, r.text_b, r.gold))
            .collect()
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.to_tsv().as_bytes())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NelRow {
    pub mention: String,
    pub concept_id: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NelDataset {
    pub name: String,
    pub rows: Vec<NelRow>,
}

impl NelDataset {
    pub fn new(name: impl Into<String>, rows: Vec<NelRow>) -> Self {
        Self {
            name: name.into(),
            rows,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = read_to_string(path)?;
        let mut rows = Vec::new();
        for (line, fields) in tsv_rows(&content) {
            let f = expect_columns(path, line, fields, 2)?;
            rows.push(NelRow {
                mention: f[0].to_string(),
                concept_id: f[1].trim().to_string(),
            });
        }
        Ok(Self::new(dataset_name(path), rows))
    }

    pub fn to_tsv(&self) -> String {
        self.rows
            .iter()
            .map(|r| format!("{}\t{}\n", r.mention, r.concept_id))
            .collect()
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.to_tsv().as_bytes())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NliRow {
    pub anchor: String,
    pub entailed: String,
    pub contradicted: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NliDataset {
    pub name: String,
    pub rows: Vec<NliRow>,
}

impl NliDataset {
    pub fn new(name: impl Into<String>, rows: Vec<NliRow>) -> Result<Self> {
        if rows.iter().any(|r| {
            [&r.anchor, &r.entailed, &r.contradicted]
                .iter()
                .any(|t| t.trim().is_empty())
        }) {
            return Err(Error::Validation("NLI triplet with an empty text".into()));
        }
        Ok(Self {
            name: name.into(),
            rows,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = read_to_string(path)?;
        let mut rows = Vec::new();
        for (line, fields) in tsv_rows(&content) {
            let f = expect_columns(path, line, fields, 3)?;
            if f.iter().any(|t| t.trim().is_empty()) {
                return Err(Error::parse(path, line, "empty field"));
            }
            rows.push(NliRow {
                anchor: f[0].to_string(),
                entailed: f[1].to_string(),
                contradicted: f[2].to_string(),
            });
        }
        Self::new(dataset_name(path), rows)
    }

    pub fn to_tsv(&self) -> String {
        self.rows
            .iter()
            .map(|r| format!("{}\t{}\t{}\n", r.anchor, r.entailed, r.contradicted))
            .collect()
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.to_tsv().as_bytes())
    }
}
