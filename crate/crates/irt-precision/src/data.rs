//! Response data container and CSV ingestion.

use std::io::Read;
use std::path::Path;

use crate::error::{IrtError, Result};
use crate::model::ItemParams;

/// An `n x m` matrix of integer category responses, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    n: usize,
    m: usize,
    data: Vec<u32>,
    item_names: Vec<String>,
}

impl ResponseMatrix {
    pub fn from_rows(rows: Vec<Vec<u32>>, item_names: Option<Vec<String>>) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(n * m);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(IrtError::Config(format!(
                    "row {i} has {} entries, expected {m}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        let item_names = item_names
            .unwrap_or_else(|| (0..m).map(|j| format!("item{}", j + 1)).collect());
        if item_names.len() != m {
            return Err(IrtError::Config(format!(
                "{} header names for {m} columns",
                item_names.len()
            )));
        }
        Ok(ResponseMatrix {
            n,
            m,
            data,
            item_names,
        })
    }

    /// Reads a CSV with a header row of item names followed by integer
    /// category rows. Missing or non-integer cells are rejected with the
    /// offending row and column.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let item_names: Vec<String> = rdr
            .headers()?
            .iter()
            .map(|h| h.to_string())
            .collect();
        let m = item_names.len();
        let mut data = Vec::new();
        let mut n = 0;
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != m {
                return Err(IrtError::Config(format!(
                    "row {} has {} cells, header has {m}",
                    i + 1,
                    record.len()
                )));
            }
            for (j, cell) in record.iter().enumerate() {
                if cell.is_empty() {
                    return Err(IrtError::DataCell {
                        row: i + 1,
                        column: j + 1,
                        item: item_names[j].clone(),
                        message: "missing response (imputation is not supported)".into(),
                    });
                }
                let value: u32 = cell.parse().map_err(|_| IrtError::DataCell {
                    row: i + 1,
                    column: j + 1,
                    item: item_names[j].clone(),
                    message: format!("expected a nonnegative integer category, got {cell:?}"),
                })?;
                data.push(value);
            }
            n += 1;
        }
        Ok(ResponseMatrix {
            n,
            m,
            data,
            item_names,
        })
    }

    pub fn from_csv_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    pub fn n_respondents(&self) -> usize {
        self.n
    }

    pub fn n_items(&self) -> usize {
        self.m
    }

    pub fn item_names(&self) -> &[String] {
        &self.item_names
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.data[i * self.m..(i + 1) * self.m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u32]> + '_ {
        (0..self.n).map(move |i| self.row(i))
    }

    /// Validates every row against the model's category ranges, reporting the
    /// first offending cell.
    pub fn validate_against(&self, params: &ItemParams) -> Result<()> {
        if self.m != params.n_items() {
            return Err(IrtError::Config(format!(
                "data has {} items, model has {}",
                self.m,
                params.n_items()
            )));
        }
        for i in 0..self.n {
            for (j, &y) in self.row(i).iter().enumerate() {
                let cats = params.item(j).categories();
                if y as usize >= cats {
                    return Err(IrtError::DataCell {
                        row: i + 1,
                        column: j + 1,
                        item: self.item_names[j].clone(),
                        message: format!(
                            "category {y} out of range for an item with {cats} categories"
                        ),
                    });
                }
            }
        }
        Ok(())
    }

    /// Observed categories per item, as counts indexed by category.
    pub fn category_counts(&self, max_categories: usize) -> Vec<Vec<usize>> {
        let mut counts = vec![vec![0usize; max_categories]; self.m];
        for i in 0..self.n {
            for (j, &y) in self.row(i).iter().enumerate() {
                if (y as usize) < max_categories {
                    counts[j][y as usize] += 1;
                }
            }
        }
        counts
    }

    /// Highest observed category per item.
    pub fn max_category(&self) -> Vec<u32> {
        let mut max = vec![0u32; self.m];
        for i in 0..self.n {
            for (j, &y) in self.row(i).iter().enumerate() {
                max[j] = max[j].max(y);
            }
        }
        max
    }
}
