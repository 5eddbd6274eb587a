//! The UCI breast-cancer Wisconsin (original) file, dataset CSV export, and
//! train/test resplitting.
//!
//! The UCI file has 11 comma-separated columns: sample id, nine integer
//! attributes in 1..=10 (missing values written `?`), and the class code
//! (2 benign, 4 malignant). The id is dropped; classes map to 0 and 1.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed;
use crate::types::{hex, Dataset, IndexSet, Label};

pub const UCI_ATTRIBUTES: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    /// Replace `?` by the median of the observed values in its column.
    #[default]
    ImputeMedian,
    DropRows,
}

impl FromStr for MissingPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "impute-median" => Ok(Self::ImputeMedian),
            "drop-rows" => Ok(Self::DropRows),
            other => Err(Error::InvalidParameter(format!("unknown missing policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: Dataset,
    /// SHA-256 of the raw file.
    pub sha256: String,
    /// Rows in the file before cleaning.
    pub raw_rows: usize,
    /// Rows with at least one missing attribute.
    pub rows_with_missing: usize,
}

/// Path of the copy of the UCI file shipped with the repository.
pub fn bundled_breast_cancer_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/breast-cancer-wisconsin.data")
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(hex(&Sha256::digest(fs::read(path)?)))
}

pub fn load_breast_cancer(path: &Path, policy: MissingPolicy) -> Result<LoadedData> {
    let bytes = fs::read(path)?;
    let mut loaded = parse_breast_cancer(&bytes, policy)?;
    loaded.sha256 = hex(&Sha256::digest(&bytes));
    Ok(loaded)
}

pub fn parse_breast_cancer(bytes: &[u8], policy: MissingPolicy) -> Result<LoadedData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(bytes);
    let mut rows: Vec<[Option<f64>; UCI_ATTRIBUTES]> = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let line = line + 1;
        let record = record.map_err(|e| Error::Malformed { line, reason: e.to_string() })?;
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() != UCI_ATTRIBUTES + 2 {
            return Err(Error::Malformed {
                line,
                reason: format!("expected {} fields, found {}", UCI_ATTRIBUTES + 2, record.len()),
            });
        }
        let mut attrs = [None; UCI_ATTRIBUTES];
        for (j, slot) in attrs.iter_mut().enumerate() {
            let field = record[j + 1].trim();
            if field != "?" {
                let v: f64 = field.parse().map_err(|_| Error::Malformed {
                    line,
                    reason: format!("attribute {} is not numeric: {field:?}", j + 1),
                })?;
                *slot = Some(v);
            }
        }
        let label = match record[UCI_ATTRIBUTES + 1].trim() {
            "2" => Label(0),
            "4" => Label(1),
            other => {
                return Err(Error::Malformed { line, reason: format!("unknown class code {other:?}") })
            }
        };
        rows.push(attrs);
        labels.push(label);
    }
    let raw_rows = rows.len();
    let rows_with_missing = rows.iter().filter(|r| r.iter().any(Option::is_none)).count();

    let (features, labels) = match policy {
        MissingPolicy::DropRows => {
            let mut feats = Vec::new();
            let mut labs = Vec::new();
            for (r, l) in rows.iter().zip(&labels) {
                if r.iter().all(Option::is_some) {
                    feats.extend(r.iter().map(|v| v.unwrap()));
                    labs.push(*l);
                }
            }
            (feats, labs)
        }
        MissingPolicy::ImputeMedian => {
            let medians: Vec<f64> = (0..UCI_ATTRIBUTES)
                .map(|j| median(rows.iter().filter_map(|r| r[j]).collect()).unwrap_or(0.0))
                .collect();
            let feats = rows
                .iter()
                .flat_map(|r| r.iter().enumerate().map(|(j, v)| v.unwrap_or(medians[j])).collect::<Vec<_>>())
                .collect();
            (feats, labels)
        }
    };
    let dataset = Dataset::from_flat(features, UCI_ATTRIBUTES, labels, 2)?;
    Ok(LoadedData { dataset, sha256: String::new(), raw_rows, rows_with_missing })
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

/// Uniform random partition into `train_n` training rows and the rest.
pub fn train_test_resplit(data: &Dataset, train_n: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = resplit_indices(data.len(), train_n, seed)?;
    Ok((data.subset(&train), data.subset(&test)))
}

pub fn resplit_indices(n: usize, train_n: usize, seed: u64) -> Result<(IndexSet, IndexSet)> {
    if train_n == 0 || train_n >= n {
        return Err(Error::InvalidParameter(format!("train size {train_n} must be in 1..{n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::stream_rng(seed, 0));
    let train = IndexSet::new(perm[..train_n].to_vec(), n)?;
    let test = IndexSet::new(perm[train_n..].to_vec(), n)?;
    Ok((train, test))
}

/// Writes one row per observation, features then label, with a header.
pub fn write_dataset_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("x{}", j + 1)).collect();
    header.push("label".into());
    w.write_record(&header).map_err(csv_io)?;
    for i in 0..data.len() {
        let mut rec: Vec<String> = data.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(data.label(i).to_string());
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_dataset_csv`].
pub fn read_dataset_csv(path: &Path, class_count: usize) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path).map_err(csv_io)?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    for (line, rec) in r.records().enumerate() {
        let line = line + 2;
        let rec = rec.map_err(|e| Error::Malformed { line, reason: e.to_string() })?;
        let d = rec.len().checked_sub(1).filter(|&d| d > 0).ok_or(Error::Malformed {
            line,
            reason: "row needs at least one feature and a label".into(),
        })?;
        if *dim.get_or_insert(d) != d {
            return Err(Error::Malformed { line, reason: "inconsistent column count".into() });
        }
        for f in rec.iter().take(d) {
            features.push(f.parse::<f64>().map_err(|_| Error::Malformed {
                line,
                reason: format!("not a number: {f:?}"),
            })?);
        }
        let l: u32 = rec[d].parse().map_err(|_| Error::Malformed {
            line,
            reason: format!("not a label: {:?}", &rec[d]),
        })?;
        labels.push(Label(l));
    }
    Dataset::from_flat(features, dim.unwrap_or(0), labels, class_count)
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidParameter(format!("csv: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_file_under_both_policies() {
        let path = bundled_breast_cancer_path();
        let full = load_breast_cancer(&path, MissingPolicy::ImputeMedian).unwrap();
        assert_eq!(full.raw_rows, 699);
        assert_eq!(full.dataset.len(), 699);
        assert_eq!(full.dataset.dim(), 9);
        assert_eq!(full.rows_with_missing, 16);
        let dropped = load_breast_cancer(&path, MissingPolicy::DropRows).unwrap();
        assert_eq!(dropped.dataset.len(), 683);
        assert_eq!(full.sha256, file_sha256(&path).unwrap());
        let malignant = full.dataset.labels().iter().filter(|l| l.0 == 1).count();
        assert_eq!(malignant, 241);
    }

    #[test]
    fn features_exclude_id_and_label() {
        let text = b"1000025,5,1,1,1,2,1,3,1,1,2\n";
        let d = parse_breast_cancer(text, MissingPolicy::DropRows).unwrap().dataset;
        assert_eq!(d.row(0), &[5.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0, 1.0, 1.0]);
        assert_eq!(d.label(0), Label(0));
    }

    #[test]
    fn median_imputation_on_fixture() {
        let text = b"1,1,1,1,1,1,?,1,1,1,2\n2,2,2,2,2,2,4,2,2,2,4\n3,3,3,3,3,3,10,3,3,3,2\n";
        let d = parse_breast_cancer(text, MissingPolicy::ImputeMedian).unwrap().dataset;
        assert_eq!(d.len(), 3);
        assert_eq!(d.row(0)[5], 7.0);
        assert_eq!(d.label(1), Label(1));
        let d = parse_breast_cancer(text, MissingPolicy::DropRows).unwrap().dataset;
        assert_eq!(d.len(), 2);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        assert!(matches!(
            parse_breast_cancer(b"1,2,3\n", MissingPolicy::DropRows),
            Err(Error::Malformed { line: 1, .. })
        ));
        assert!(parse_breast_cancer(b"1,1,1,1,1,1,1,1,1,1,3\n", MissingPolicy::DropRows).is_err());
        assert!(parse_breast_cancer(b"1,x,1,1,1,1,1,1,1,1,2\n", MissingPolicy::DropRows).is_err());
        assert!(load_breast_cancer(Path::new("/nonexistent/file"), MissingPolicy::DropRows).is_err());
        assert!("bogus".parse::<MissingPolicy>().is_err());
    }

    #[test]
    fn resplit_sizes_and_partition() {
        let path = bundled_breast_cancer_path();
        let d = load_breast_cancer(&path, MissingPolicy::ImputeMedian).unwrap().dataset;
        let (train, test) = train_test_resplit(&d, 500, 3).unwrap();
        assert_eq!((train.len(), test.len()), (500, 199));
        let (a, b) = resplit_indices(699, 500, 3).unwrap();
        let mut all: Vec<usize> = a.indices().iter().chain(b.indices()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..699).collect::<Vec<_>>());
        assert!(train_test_resplit(&d, 699, 0).is_err());
    }

    #[test]
    fn different_seeds_give_different_partitions() {
        let parts: std::collections::HashSet<Vec<usize>> =
            (0..100).map(|s| resplit_indices(699, 500, s).unwrap().0.indices().to_vec()).collect();
        assert_eq!(parts.len(), 100);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let d = crate::synthetic::sample_gaussmix(30, 7, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        write_dataset_csv(&d, &p).unwrap();
        assert_eq!(read_dataset_csv(&p, 2).unwrap(), d);
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("x1,x2,x3,x4,x5,x6,x7,label\n"));
    }
}
