use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::image::decode;
use crate::error::{Error, Result};
use crate::parallel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::Train, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid("split", format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    /// Relative to the manifest root, `/`-separated.
    pub path: String,
    pub label: usize,
    pub split: Split,
}

/// Images found under `root/{split}/{class}/`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub classes: Vec<String>,
    pub records: Vec<Record>,
}

/// Outcome of [`scan_dataset`]: the manifest plus files that failed to decode.
#[derive(Debug)]
pub struct ScanReport {
    pub manifest: DatasetManifest,
    pub rejected: Vec<(PathBuf, String)>,
    /// Subdirectories of a split whose names are not in the class list.
    pub unknown_dirs: Vec<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    path: String,
    label: String,
    split: Split,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "jpg" | "jpeg" | "png"))
        .unwrap_or(false)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    v.sort();
    Ok(v)
}

/// Walks `root/{train,test}/{class}/*.{jpg,jpeg,png}` and decodes every file.
///
/// Missing split or class directories count as empty. Files that fail to
/// decode are listed in the report rather than dropped silently.
pub fn scan_dataset(root: &Path, classes: &[String]) -> Result<ScanReport> {
    if !root.is_dir() {
        return Err(Error::MissingRoot(root.to_path_buf()));
    }
    let mut candidates = Vec::new();
    let mut unknown_dirs = Vec::new();
    for split in Split::ALL {
        let split_dir = root.join(split.as_str());
        if !split_dir.is_dir() {
            continue;
        }
        for entry in sorted_entries(&split_dir)? {
            let known = entry
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| classes.iter().position(|c| c == n));
            if entry.is_dir() && known.is_none() {
                unknown_dirs.push(entry.clone());
            }
        }
        for (label, class) in classes.iter().enumerate() {
            let class_dir = split_dir.join(class);
            if !class_dir.is_dir() {
                continue;
            }
            for file in sorted_entries(&class_dir)? {
                if file.is_file() && is_image(&file) {
                    let rel = format!("{}/{}/{}", split, class, file.file_name().unwrap().to_string_lossy());
                    candidates.push((file, Record { path: rel, label, split }));
                }
            }
        }
    }
    let checks = parallel::map_indexed(candidates.len(), |i| decode(&candidates[i].0).map(|_| ()));
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for ((file, record), check) in candidates.into_iter().zip(checks) {
        match check {
            Ok(()) => records.push(record),
            Err(e) => rejected.push((file, e.to_string())),
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset(root.to_path_buf()));
    }
    Ok(ScanReport {
        manifest: DatasetManifest {
            root: root.to_path_buf(),
            classes: classes.to_vec(),
            records,
        },
        rejected,
        unknown_dirs,
    })
}

impl DatasetManifest {
    /// Per-class record counts for one split.
    pub fn counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for r in self.records.iter().filter(|r| r.split == split) {
            counts[r.label] += 1;
        }
        counts
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn absolute(&self, record: &Record) -> PathBuf {
        self.root.join(&record.path)
    }

    /// `path,label,split` with a header row.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        for r in &self.records {
            w.serialize(CsvRow {
                path: r.path.clone(),
                label: self.classes[r.label].clone(),
                split: r.split,
            })?;
        }
        w.into_inner()
            .map_err(|e| Error::io("manifest.csv", e.into_error()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path, root: &Path, classes: &[String]) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut records = Vec::new();
        for row in reader.deserialize() {
            let row: CsvRow = row?;
            let label = classes.iter().position(|c| *c == row.label).ok_or_else(|| {
                Error::invalid("manifest", format!("unknown label `{}`", row.label))
            })?;
            records.push(Record {
                path: row.path,
                label,
                split: row.split,
            });
        }
        Ok(Self {
            root: root.to_path_buf(),
            classes: classes.to_vec(),
            records,
        })
    }
}

/// `w_c = Σ counts / (K · count_c)`: rarer classes weigh more.
pub fn compute_class_weights(classes: &[String], counts: &[usize]) -> Result<Vec<f64>> {
    if classes.len() != counts.len() || counts.is_empty() {
        return Err(Error::invalid(
            "class_weights",
            format!("{} classes but {} counts", classes.len(), counts.len()),
        ));
    }
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::ZeroClassCount {
            class: classes[i].clone(),
        });
    }
    let total: usize = counts.iter().sum();
    let k = counts.len() as f64;
    Ok(counts
        .iter()
        .map(|&c| total as f64 / (k * c as f64))
        .collect())
}
