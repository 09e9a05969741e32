//! Samples and their JSONL representation.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cif::{parse_cif, write_cif, CifError};
use crate::neighbors::{build_neighbor_list, NeighborError, STRICT_SCALE};
use crate::radii::RadiiTable;
use crate::stringify::{three_part_string, ConfigString, StringifyError, SystemMeta};
use crate::structure::Structure;
use crate::synth::data_block_name;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Json { line: usize, message: String },
    #[error("line {line}: {source}")]
    Cif { line: usize, source: CifError },
    #[error("line {line}: {source}")]
    Stringify { line: usize, source: StringifyError },
    #[error("line {line}: {source}")]
    Neighbor { line: usize, source: NeighborError },
    #[error("line {line}: config string does not match the structure (expected `{expected}`)")]
    Inconsistent { line: usize, expected: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One (structure, metadata, configuration string, energy) record.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub structure: Structure,
    pub meta: SystemMeta,
    pub config: ConfigString,
    /// Target energy, eV.
    pub energy: f64,
}

#[derive(Serialize, Deserialize)]
struct Record {
    cif: String,
    config_string: String,
    meta: SystemMeta,
    energy_ev: f64,
}

impl Sample {
    pub fn to_json_line(&self) -> String {
        let rec = Record {
            cif: write_cif(&self.structure, &data_block_name(&self.meta)),
            config_string: self.config.as_str().to_string(),
            meta: self.meta.clone(),
            energy_ev: self.energy,
        };
        serde_json::to_string(&rec).expect("record serialises")
    }

    /// Parses one JSONL line and checks that the stored string is the strict
    /// string of the stored structure.
    pub fn from_json_line(text: &str, line: usize) -> Result<Self, DatasetError> {
        let rec: Record = serde_json::from_str(text).map_err(|e| DatasetError::Json {
            line,
            message: e.to_string(),
        })?;
        let structure = parse_cif(&rec.cif)
            .map_err(|source| DatasetError::Cif { line, source })?
            .structure;
        let config = ConfigString::parse(&rec.config_string).map_err(|source| DatasetError::Stringify { line, source })?;
        let nl = build_neighbor_list(&structure, RadiiTable::bundled(), STRICT_SCALE)
            .map_err(|source| DatasetError::Neighbor { line, source })?;
        let expected =
            three_part_string(&structure, &rec.meta, &nl).map_err(|source| DatasetError::Stringify { line, source })?;
        if expected != config {
            return Err(DatasetError::Inconsistent {
                line,
                expected: expected.to_string(),
            });
        }
        Ok(Self {
            structure,
            meta: rec.meta,
            config,
            energy: rec.energy_ev,
        })
    }
}

pub fn write_jsonl(path: &Path, samples: &[Sample]) -> Result<(), DatasetError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in samples {
        writeln!(w, "{}", s.to_json_line())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Sample>, DatasetError> {
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(Sample::from_json_line(&line, i + 1)?);
    }
    Ok(out)
}

/// Seeded 8/1/1 split of `0..n` into (train, val, test) index lists.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    (idx, val, test)
}
