//! Cell id lookup table: which failures were observed on a production cell.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use fmea_bn::FailureState;
use serde::Deserialize;

use crate::error::{Result, ServiceError};

#[derive(Debug, Deserialize)]
struct Row {
    cell_id: String,
    #[serde(default)]
    failure_id: String,
    #[serde(default)]
    state: String,
}

/// Observations per cell id, in file order. A row with an empty failure id
/// registers the cell with no observations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellTable {
    cells: BTreeMap<String, Vec<(String, FailureState)>>,
}

impl CellTable {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())
            .map_err(|e| ServiceError::Cells(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_reader(file)
    }

    /// Reads CSV with the header `cell_id,failure_id,state`.
    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let mut cells: BTreeMap<String, Vec<(String, FailureState)>> = BTreeMap::new();
        for (k, row) in csv.deserialize::<Row>().enumerate() {
            let line = k + 2;
            let row = row.map_err(|e| ServiceError::Cells(format!("line {line}: {e}")))?;
            if row.cell_id.is_empty() {
                return Err(ServiceError::Cells(format!("line {line}: empty cell_id")));
            }
            let entry = cells.entry(row.cell_id).or_default();
            match (row.failure_id.is_empty(), row.state.is_empty()) {
                (true, true) => {}
                (false, false) => {
                    let state = row
                        .state
                        .parse()
                        .map_err(|e| ServiceError::Cells(format!("line {line}: {e}")))?;
                    entry.push((row.failure_id, state));
                }
                _ => {
                    return Err(ServiceError::Cells(format!(
                        "line {line}: failure_id and state must be given together"
                    )))
                }
            }
        }
        Ok(CellTable { cells })
    }

    pub fn get(&self, cell_id: &str) -> Option<&[(String, FailureState)]> {
        self.cells.get(cell_id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}
