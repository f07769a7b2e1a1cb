//! Dataset plumbing: manifests, the synthetic dataset generator, cached
//! featurization and the CSV artifacts written by the command line tool.

mod featurize;
mod manifest;
mod synth;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::Mask;
use crate::error::{Error, Result};
use crate::eval::{PredictionRow, SubjectiveRow};
use crate::net::{LossRecord, ProvenanceRecord};

pub use featurize::{cache_key, featurize, featurize_signals, featurize_synthetic, load_index, IndexRow};
pub use manifest::{load_manifest, write_manifest, Manifest, ManifestEntry, RatingRecord, MANIFEST_HEADER};
pub use synth::{
    butterworth_lowpass, clipped_logistic_moments, generate_synthetic, synthesize, DegradationSpec,
    SyntheticDataset, SyntheticExcerpt, SyntheticSpec,
};

/// Writes `bytes` to a sibling temp file and renames it over `path`, so a
/// reader never sees a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Parse(format!("csv encode: {e}")))?;
    }
    w.into_inner().map_err(|e| Error::Parse(format!("csv encode: {e}")))
}

pub(crate) fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_atomic(path, &csv_bytes(rows)?)
}

pub(crate) fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| crate::eval::csv_error(path, e))?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| crate::eval::csv_error(path, e)))
        .collect()
}

/// Loss curves as `fold,epoch,split,nll`.
pub fn write_loss_csv(path: impl AsRef<Path>, curves: &[LossRecord]) -> Result<()> {
    write_csv(path.as_ref(), curves)
}

pub fn read_loss_csv(path: impl AsRef<Path>) -> Result<Vec<LossRecord>> {
    read_csv(path.as_ref())
}

#[derive(Serialize, Deserialize)]
struct ProvenanceRow<'a> {
    fold: usize,
    epoch: usize,
    batch: usize,
    id_a: &'a str,
    id_b: &'a str,
    lambda_raw: f64,
    lambda_eff: f64,
    band_lo: Option<usize>,
    band_hi: Option<usize>,
    frame_lo: Option<usize>,
    frame_hi: Option<usize>,
}

/// Mixing provenance, one row per mixed sample; mask columns are empty for
/// MixUp rows.
pub fn write_provenance_csv(path: impl AsRef<Path>, records: &[ProvenanceRecord]) -> Result<()> {
    let rows: Vec<ProvenanceRow> = records
        .iter()
        .map(|r| {
            let m: Option<Mask> = r.mask;
            ProvenanceRow {
                fold: r.fold,
                epoch: r.epoch,
                batch: r.batch,
                id_a: &r.id_a,
                id_b: &r.id_b,
                lambda_raw: r.lambda_raw,
                lambda_eff: r.lambda_eff,
                band_lo: m.map(|m| m.band_lo),
                band_hi: m.map(|m| m.band_hi),
                frame_lo: m.map(|m| m.frame_lo),
                frame_hi: m.map(|m| m.frame_hi),
            }
        })
        .collect();
    write_csv(path.as_ref(), &rows)
}

/// Simulated listening test: `n` draws per predicted condition, clipped to
/// the MUSHRA range. Each condition's random stream is derived from its id,
/// so a row's scores do not depend on the other rows or their order.
pub fn simulate(predictions: &[PredictionRow], n: usize, seed: u64) -> Result<Vec<SubjectiveRow>> {
    if n == 0 {
        return Err(Error::invalid("panel size must be at least 1"));
    }
    let mut out = Vec::with_capacity(predictions.len() * n);
    for p in predictions {
        let digest = Sha256::digest(p.condition_id.as_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")));
        let d = p.distribution()?;
        for (k, s) in crate::prob::sample_scores(&d, n, &mut rng).into_iter().enumerate() {
            out.push(SubjectiveRow {
                condition_id: p.condition_id.clone(),
                listener_id: format!("S{:02}", k + 1),
                score: s.clamp(0.0, 100.0),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Split;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        let names: Vec<_> = fs::read_dir(p.parent().unwrap()).unwrap().collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn loss_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loss.csv");
        let curves = vec![
            LossRecord { fold: 0, epoch: 0, split: Split::Train, nll: 4.25 },
            LossRecord { fold: 0, epoch: 0, split: Split::Validation, nll: 0.1 + 0.2 },
        ];
        write_loss_csv(&p, &curves).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("fold,epoch,split,nll\n0,0,train,4.25\n"));
        assert_eq!(read_loss_csv(&p).unwrap(), curves);
    }

    #[test]
    fn simulated_panels_are_seeded_and_clipped() {
        use crate::prob::Family;
        let rows = vec![
            PredictionRow { condition_id: "a/x".into(), mu: 99.0, log_scale: 2.0, family: Family::Logistic },
            PredictionRow { condition_id: "a/y".into(), mu: 40.0, log_scale: 1.5, family: Family::Gaussian },
        ];
        let s1 = simulate(&rows, 9, 7).unwrap();
        assert_eq!(s1.len(), 18);
        assert_eq!(s1, simulate(&rows, 9, 7).unwrap());
        assert_ne!(s1, simulate(&rows, 9, 8).unwrap());
        assert!(s1.iter().all(|r| (0.0..=100.0).contains(&r.score)));
        assert!(s1[..9].iter().any(|r| r.score == 100.0));
        // rows are independent of each other
        assert_eq!(simulate(&rows[1..], 9, 7).unwrap()[..], s1[9..]);
        assert!(simulate(&rows, 0, 7).is_err());
    }
}
