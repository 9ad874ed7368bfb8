//! Subject manifests, subject-level splits and axial slicing.
//!
//! A manifest is UTF-8 text with one tab-separated record per line:
//! `subject_id, volume_path, label_path, split`. Lines starting with `#` are
//! comments; `# split_seed=<u64>` records the seed of the split. Relative
//! paths are resolved against the manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataio::phantom::{generate_phantom, PhantomSpec};
use crate::dataio::volume::{read_labels, read_volume, write_mvol, ImageSlice, LabelSlice, LabelVolume, Volume3D};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split tag {other:?} (expected train, val or test)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub subject_id: String,
    pub volume_path: PathBuf,
    pub label_path: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub split_seed: Option<u64>,
}

impl DatasetManifest {
    pub fn subjects(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.subjects(split).count()
    }

    /// Each subject id must appear once.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(&r.subject_id) {
                return Err(Error::invalid(format!("subject {} appears more than once in the manifest", r.subject_id)));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(seed) = self.split_seed {
            s.push_str(&format!("# split_seed={seed}\n"));
        }
        s.push_str("# subject_id\tvolume_path\tlabel_path\tsplit\n");
        for r in &self.records {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                r.subject_id,
                r.volume_path.display(),
                r.label_path.display(),
                r.split
            ));
        }
        s
    }

    /// Parses manifest text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut m = DatasetManifest::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(seed) = comment.trim().strip_prefix("split_seed=") {
                    m.split_seed = Some(seed.trim().parse().map_err(|_| {
                        Error::invalid(format!("manifest line {}: bad split_seed {seed:?}", lineno + 1))
                    })?);
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::invalid(format!(
                    "manifest line {}: expected 4 tab-separated fields, found {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let resolve = |p: &str| {
                let p = PathBuf::from(p);
                if p.is_absolute() { p } else { base.join(p) }
            };
            m.records.push(ManifestRecord {
                subject_id: fields[0].to_string(),
                volume_path: resolve(fields[1]),
                label_path: resolve(fields[2]),
                split: fields[3].parse()?,
            });
        }
        m.validate()?;
        Ok(m)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Default split sizes for `n` subjects: 8 of every 75 go to test and the
/// same number to validation (75 -> 59/8/8).
pub fn default_split_counts(n: usize) -> (usize, usize, usize) {
    let k = ((n as f64) * 8.0 / 75.0).round() as usize;
    let k = k.min(n / 3);
    (n - 2 * k, k, k)
}

/// Random subject-level split, reproducible from `seed`.
pub fn split_dataset(manifest: &DatasetManifest, train_n: usize, val_n: usize, test_n: usize, seed: u64) -> Result<DatasetManifest> {
    manifest.validate()?;
    let n = manifest.records.len();
    if train_n + val_n + test_n != n {
        return Err(Error::invalid(format!(
            "split {train_n}/{val_n}/{test_n} does not add up to {n} subjects"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).derive("split", 0).shuffle(&mut order);
    let mut records = manifest.records.clone();
    for (rank, &i) in order.iter().enumerate() {
        records[i].split = if rank < train_n {
            Split::Train
        } else if rank < train_n + val_n {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(DatasetManifest { records, split_seed: Some(seed) })
}

/// One axial slice with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: ImageSlice,
    pub labels: LabelSlice,
}

/// Splits a volume and its labels into `nz` axial samples, in order.
pub fn slice_volume(volume: &Volume3D, labels: &LabelVolume) -> Result<Vec<Sample>> {
    if volume.dims != labels.dims {
        return Err(Error::shape(format!("volume {:?} and labels {:?} differ", volume.dims, labels.dims)));
    }
    Ok((0..volume.dims[2]).map(|z| Sample { image: volume.slice(z), labels: labels.slice(z) }).collect())
}

/// A subject loaded from disk.
#[derive(Debug, Clone)]
pub struct Subject {
    pub id: String,
    pub volume: Volume3D,
    pub labels: LabelVolume,
}

pub fn load_subject(record: &ManifestRecord) -> Result<Subject> {
    let volume = read_volume(&record.volume_path)?;
    let labels = read_labels(&record.label_path)?;
    if volume.dims != labels.dims {
        return Err(Error::shape(format!(
            "subject {}: volume {:?} and labels {:?} differ",
            record.subject_id, volume.dims, labels.dims
        )));
    }
    Ok(Subject { id: record.subject_id.clone(), volume, labels })
}

pub fn load_split(manifest: &DatasetManifest, split: Split) -> Result<Vec<Subject>> {
    manifest.subjects(split).map(load_subject).collect()
}

/// Generates `count` phantoms into `dir` (`subject_NNN_image.mvol`,
/// `subject_NNN_labels.mvol`) plus `manifest.tsv`, split with the default
/// counts. Phantom `i` draws from the stream `derive("phantom", i)` of `seed`.
pub fn write_phantom_set(dir: &Path, count: usize, spec: &PhantomSpec, seed: u64) -> Result<DatasetManifest> {
    if count == 0 {
        return Err(Error::invalid("phantom count must be at least 1"));
    }
    std::fs::create_dir_all(dir)?;
    let master = Rng::new(seed);
    let mut m = DatasetManifest::default();
    for i in 0..count {
        let (img, lbl, _) = generate_phantom(spec, &mut master.derive("phantom", i as u64))?;
        let id = format!("subject_{i:03}");
        let (vp, lp) = (format!("{id}_image.mvol"), format!("{id}_labels.mvol"));
        write_mvol(&img, dir.join(&vp))?;
        write_mvol(&lbl, dir.join(&lp))?;
        m.records.push(ManifestRecord { subject_id: id, volume_path: vp.into(), label_path: lp.into(), split: Split::Train });
    }
    let (tr, va, te) = default_split_counts(count);
    let m = split_dataset(&m, tr, va, te, seed)?;
    m.write(dir.join("manifest.tsv"))?;
    Ok(m)
}
