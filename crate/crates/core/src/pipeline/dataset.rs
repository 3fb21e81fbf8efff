use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use super::{fnv_digest, PipelineError};
use crate::autodiff::seeded_rng;
use crate::config::SplitPolicy;

/// A CSV table held as strings.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub source: PathBuf,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// FNV-1a digest of the file bytes.
    pub digest: u64,
}

pub fn load_dataset(path: &Path) -> Result<Dataset, PipelineError> {
    let bytes = std::fs::read(path)
        .map_err(|e| PipelineError::Data(format!("cannot read dataset {}: {e}", path.display())))?;
    let mut ds = parse_csv(&bytes)?;
    ds.source = path.to_path_buf();
    Ok(ds)
}

/// Parses CSV bytes with a header row.
pub fn parse_csv(bytes: &[u8]) -> Result<Dataset, PipelineError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(bytes);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| PipelineError::Data(format!("cannot read CSV header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(PipelineError::Data("dataset is empty".into()));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // row 1 is the header
        let row_number = i + 2;
        let record = record.map_err(|e| PipelineError::Data(format!("row {row_number}: {e}")))?;
        if record.len() != header.len() {
            return Err(PipelineError::Data(format!(
                "row {row_number} has {} fields, the header has {}",
                record.len(),
                header.len()
            )));
        }
        rows.push(record.iter().map(str::to_string).collect());
    }
    Ok(Dataset {
        source: PathBuf::new(),
        header,
        rows,
        digest: fnv_digest(bytes),
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn column(&self, name: &str) -> Result<Vec<String>, PipelineError> {
        let i = self
            .column_index(name)
            .ok_or_else(|| PipelineError::Data(format!("dataset has no column `{name}`")))?;
        Ok(self.rows.iter().map(|r| r[i].clone()).collect())
    }

    /// The rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            source: self.source.clone(),
            header: self.header.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            digest: self.digest,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn named(&self) -> [(&'static str, &Dataset); 3] {
        [
            ("train", &self.train),
            ("validation", &self.validation),
            ("test", &self.test),
        ]
    }
}

/// Random policy: seeded shuffle, then contiguous cuts of rounded sizes
/// with the test split taking the remainder.
pub fn split_dataset(ds: &Dataset, policy: &SplitPolicy, seed: u64) -> Result<Splits, PipelineError> {
    let (train, validation, test) = match policy {
        SplitPolicy::Random {
            train, validation, ..
        } => {
            let mut order: Vec<usize> = (0..ds.len()).collect();
            order.shuffle(&mut seeded_rng(seed));
            let n = ds.len() as f64;
            let n_train = ((n * train).round() as usize).min(ds.len());
            let n_val = ((n * validation).round() as usize).min(ds.len() - n_train);
            let (a, rest) = order.split_at(n_train);
            let (b, c) = rest.split_at(n_val);
            (a.to_vec(), b.to_vec(), c.to_vec())
        }
        SplitPolicy::Column(col) => {
            let values = ds.column(col)?;
            let (mut a, mut b, mut c) = (Vec::new(), Vec::new(), Vec::new());
            for (i, v) in values.iter().enumerate() {
                match v.trim() {
                    "train" => a.push(i),
                    "validation" => b.push(i),
                    "test" => c.push(i),
                    other => {
                        return Err(PipelineError::Data(format!(
                            "row {}: split column `{col}` has value `{other}`; expected train, validation or test",
                            i + 2
                        )))
                    }
                }
            }
            (a, b, c)
        }
    };
    Ok(Splits {
        train: ds.subset(&train),
        validation: ds.subset(&validation),
        test: ds.subset(&test),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numbered(n: usize) -> Dataset {
        let mut text = String::from("id,label\n");
        for i in 0..n {
            text.push_str(&format!("{i},{}\n", i % 3));
        }
        parse_csv(text.as_bytes()).unwrap()
    }

    #[test]
    fn loads_rows() {
        let ds = parse_csv(b"a,b\n1,2\n3,4\n5,6\n").unwrap();
        assert_eq!(ds.header, ["a", "b"]);
        assert_eq!(ds.len(), 3);
    }

    #[test]
    fn ragged_row_names_row() {
        let err = parse_csv(b"a,b\n1,2\n3\n").unwrap_err();
        assert!(err.to_string().contains("row 3"), "{err}");
    }

    #[test]
    fn quoted_comma_is_one_cell() {
        let ds = parse_csv(b"text,y\n\"hello, world\",1\n\"say \"\"hi\"\"\",0\n").unwrap();
        assert_eq!(ds.rows[0], ["hello, world", "1"]);
        assert_eq!(ds.rows[1], ["say \"hi\"", "0"]);
    }

    #[test]
    fn empty_file_is_error() {
        assert!(parse_csv(b"").is_err());
    }

    #[test]
    fn fraction_sizes() {
        let ds = numbered(100);
        let policy = SplitPolicy::Random {
            train: 0.7,
            validation: 0.1,
            test: 0.2,
        };
        let s = split_dataset(&ds, &policy, 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (70, 10, 20));
        let mut all: Vec<_> = s.named().iter().flat_map(|(_, d)| d.rows.clone()).collect();
        all.sort();
        let mut orig = ds.rows.clone();
        orig.sort();
        assert_eq!(all, orig);
        assert_eq!(split_dataset(&ds, &policy, 3).unwrap(), s);
        assert_ne!(split_dataset(&ds, &policy, 4).unwrap(), s);
    }

    #[test]
    fn column_routing() {
        let ds = parse_csv(b"x,split\n1,train\n2,test\n3,validation\n4,train\n").unwrap();
        let s = split_dataset(&ds, &SplitPolicy::Column("split".into()), 0).unwrap();
        assert_eq!(s.train.column("x").unwrap(), ["1", "4"]);
        assert_eq!(s.validation.column("x").unwrap(), ["3"]);
        assert_eq!(s.test.column("x").unwrap(), ["2"]);
        let bad = parse_csv(b"x,split\n1,dev\n").unwrap();
        assert!(split_dataset(&bad, &SplitPolicy::Column("split".into()), 0).is_err());
    }
}
