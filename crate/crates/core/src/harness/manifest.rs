use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::SAMPLE_RATE;

pub const MANIFEST_HEADER: [&str; 6] = ["excerpt_id", "condition_id", "ref_path", "cod_path", "listener_id", "score"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub excerpt_id: String,
    pub condition_id: String,
    pub listener_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub excerpt_id: String,
    pub condition_id: String,
    /// As written in the manifest; relative paths resolve against
    /// [`Manifest::root`].
    pub ref_path: PathBuf,
    pub cod_path: PathBuf,
    pub ratings: Vec<RatingRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    /// Directory holding the manifest file.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub sample_rate: u32,
    /// Longest signal in samples, once known.
    pub max_len: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct Row {
    excerpt_id: String,
    condition_id: String,
    ref_path: PathBuf,
    cod_path: PathBuf,
    listener_id: String,
    score: f64,
}

impl Manifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn n_ratings(&self) -> usize {
        self.entries.iter().map(|e| e.ratings.len()).sum()
    }

    pub fn ratings(&self) -> impl Iterator<Item = &RatingRecord> {
        self.entries.iter().flat_map(|e| e.ratings.iter())
    }
}

/// Reads and validates a manifest. Every referenced audio file must exist.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = parse_manifest(&text, path, root)?;
    for e in &manifest.entries {
        for p in [&e.ref_path, &e.cod_path] {
            let full = manifest.resolve(p);
            if !full.is_file() {
                return Err(Error::invalid(format!(
                    "{}: missing audio file {} for {}/{}",
                    path.display(),
                    full.display(),
                    e.excerpt_id,
                    e.condition_id
                )));
            }
        }
    }
    Ok(manifest)
}

fn parse_manifest(bytes: &[u8], path: &Path, root: PathBuf) -> Result<Manifest> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let at = |line: u64| format!("{} line {line}", path.display());
    let header = rdr
        .headers()
        .map_err(|e| crate::eval::csv_error(path, e))?
        .clone();
    if header.iter().ne(MANIFEST_HEADER) {
        return Err(Error::Parse(format!(
            "{}: header must be {}",
            at(1),
            MANIFEST_HEADER.join(",")
        )));
    }
    let mut entries: Vec<ManifestEntry> = Vec::new();
    let mut entry_of: HashMap<(String, String), usize> = HashMap::new();
    let mut seen: HashMap<(String, String, String), u64> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| crate::eval::csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let row: Row = rec
            .deserialize(Some(&header))
            .map_err(|e| Error::Parse(format!("{}: {e}", at(line))))?;
        if !(0.0..=100.0).contains(&row.score) {
            return Err(Error::invalid(format!(
                "{}: score {} for {}/{} listener {} is outside [0, 100]",
                at(line),
                row.score,
                row.excerpt_id,
                row.condition_id,
                row.listener_id
            )));
        }
        let key = (row.excerpt_id.clone(), row.condition_id.clone(), row.listener_id.clone());
        if let Some(first) = seen.insert(key, line) {
            return Err(Error::invalid(format!(
                "{}: duplicate rating for {}/{} listener {} (first at line {first})",
                at(line),
                row.excerpt_id,
                row.condition_id,
                row.listener_id
            )));
        }
        let rating = RatingRecord {
            excerpt_id: row.excerpt_id.clone(),
            condition_id: row.condition_id.clone(),
            listener_id: row.listener_id,
            score: row.score,
        };
        let k = (row.excerpt_id, row.condition_id);
        match entry_of.get(&k) {
            Some(&i) => {
                let e = &mut entries[i];
                if e.ref_path != row.ref_path || e.cod_path != row.cod_path {
                    return Err(Error::invalid(format!(
                        "{}: audio paths for {}/{} differ from an earlier row",
                        at(line),
                        k.0,
                        k.1
                    )));
                }
                e.ratings.push(rating);
            }
            None => {
                entry_of.insert(k.clone(), entries.len());
                entries.push(ManifestEntry {
                    excerpt_id: k.0,
                    condition_id: k.1,
                    ref_path: row.ref_path,
                    cod_path: row.cod_path,
                    ratings: vec![rating],
                });
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::invalid(format!("{}: manifest has no ratings", path.display())));
    }
    Ok(Manifest {
        root,
        entries,
        sample_rate: SAMPLE_RATE,
        max_len: None,
    })
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &Manifest) -> Result<()> {
    let rows: Vec<Row> = manifest
        .entries
        .iter()
        .flat_map(|e| {
            e.ratings.iter().map(move |r| Row {
                excerpt_id: e.excerpt_id.clone(),
                condition_id: e.condition_id.clone(),
                ref_path: e.ref_path.clone(),
                cod_path: e.cod_path.clone(),
                listener_id: r.listener_id.clone(),
                score: r.score,
            })
        })
        .collect();
    super::write_csv(path.as_ref(), &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(body: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        for f in ["r.wav", "c.wav"] {
            std::fs::write(dir.path().join(f), b"x").unwrap();
        }
        let p = dir.path().join("m.csv");
        std::fs::write(&p, format!("{}\n{body}", MANIFEST_HEADER.join(","))).unwrap();
        (dir, p)
    }

    #[test]
    fn minimal_manifest() {
        let (_d, p) = setup("e1,c1,r.wav,c.wav,L1,50\ne1,c1,r.wav,c.wav,L2,61.5\n");
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.entries.len(), 1);
        assert_eq!(m.n_ratings(), 2);
        assert_eq!(m.entries[0].ratings[1].score, 61.5);
        assert_eq!(m.sample_rate, 48_000);
    }

    #[test]
    fn out_of_range_names_row() {
        let (_d, p) = setup("e1,c1,r.wav,c.wav,L1,50\ne1,c1,r.wav,c.wav,L2,101\n");
        let err = load_manifest(&p).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("101"), "{err}");
    }

    #[test]
    fn rejects_duplicates_missing_files_and_bad_rows() {
        let (_d, p) = setup("e1,c1,r.wav,c.wav,L1,50\ne1,c1,r.wav,c.wav,L1,40\n");
        assert!(load_manifest(&p).unwrap_err().to_string().contains("duplicate"));
        let (_d, p) = setup("e1,c1,r.wav,gone.wav,L1,50\n");
        assert!(load_manifest(&p).unwrap_err().to_string().contains("missing"));
        let (_d, p) = setup("e1,c1,r.wav,c.wav,L1,fifty\n");
        let err = load_manifest(&p).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let (_d, p) = setup("e1,c1,r.wav,c.wav,L1,50\ne1,c1,c.wav,c.wav,L2,50\n");
        assert!(load_manifest(&p).is_err());
    }

    #[test]
    fn write_read_round_trip() {
        let (d, p) = setup(
            "e1,c1,r.wav,c.wav,L1,50\ne1,c2,r.wav,c.wav,L1,0.1\ne2,c1,c.wav,r.wav,L9,100\ne1,c1,r.wav,c.wav,L2,33.333333333333336\n",
        );
        let m = load_manifest(&p).unwrap();
        let q = d.path().join("copy.csv");
        write_manifest(&q, &m).unwrap();
        assert_eq!(load_manifest(&q).unwrap(), m);
    }
}
