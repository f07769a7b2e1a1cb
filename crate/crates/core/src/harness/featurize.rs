//! Manifest → model inputs, with an on-disk spectrogram cache.
//!
//! Inputs are always rounded to f32 precision, whether freshly computed or
//! read back from the cache, so a warm and a cold run give identical samples.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::manifest::{Manifest, ManifestEntry};
use super::synth::{SyntheticExcerpt, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval::SubjectiveRow;
use crate::frontend::{
    assemble_input, channel_planes, load_audio, pad_to_length, read_cache, write_cache, GammatoneConfig,
    ModelInput, Spectrogram, StereoSignal,
};
use crate::net::{item_id, Sample};

const KEY_VERSION: &str = "gml-spectrogram-cache-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRow {
    pub excerpt_id: String,
    pub condition_id: String,
    pub cache_file: String,
}

/// Cache key over everything the cached planes depend on: the full
/// frontend configuration, both files' content digests and the padded length.
pub fn cache_key(cfg: &GammatoneConfig, ref_digest: &str, cod_digest: &str, target_len: usize) -> String {
    let cfg_json = serde_json::to_string(cfg).expect("config serialises");
    let mut h = Sha256::new();
    for part in [KEY_VERSION, &cfg_json, ref_digest, cod_digest, &target_len.to_string()] {
        h.update(part.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

fn round_f32(mut input: ModelInput) -> ModelInput {
    input.planes.iter_mut().for_each(|v| *v = *v as f32 as f64);
    input
}

/// Maps `f` over `items` on all available cores; output order follows input.
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    if threads <= 1 {
        return items.iter().map(&f).collect();
    }
    let mut slots: Vec<Option<Result<R>>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let f = &f;
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                scope.spawn(move || {
                    (t..items.len())
                        .step_by(threads)
                        .map(|i| (i, f(&items[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("featurize worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

struct FileInfo {
    digest: String,
    n_samples: usize,
}

fn inspect(path: &Path) -> Result<FileInfo> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = hex::encode(Sha256::digest(&bytes));
    let n_samples = load_audio(path)?.n_samples();
    Ok(FileInfo { digest, n_samples })
}

/// Computes (or loads from `cache_dir`) the input for every manifest entry,
/// in manifest order. Signals are centre-padded to the longest file. With a
/// cache directory, `index.csv` and `subjective.csv` are written there too.
pub fn featurize(manifest: &Manifest, cfg: &GammatoneConfig, cache_dir: Option<&Path>) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let mut files: Vec<PathBuf> = Vec::new();
    let mut seen = HashMap::new();
    for e in &manifest.entries {
        for p in [&e.ref_path, &e.cod_path] {
            let full = manifest.resolve(p);
            if !seen.contains_key(&full) {
                seen.insert(full.clone(), files.len());
                files.push(full);
            }
        }
    }
    let infos = par_map(&files, |p| inspect(p))?;
    let target = infos.iter().map(|i| i.n_samples).max().unwrap_or(0);
    let info = |p: &Path| &infos[seen[&manifest.resolve(p)]];

    // one group per reference file so its planes are computed once
    let mut groups: Vec<Vec<&ManifestEntry>> = Vec::new();
    let mut group_of: HashMap<PathBuf, usize> = HashMap::new();
    for e in &manifest.entries {
        let g = *group_of.entry(manifest.resolve(&e.ref_path)).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(e);
    }
    if let Some(dir) = cache_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let per_group = par_map(&groups, |entries| {
        let mut ref_planes: Option<Vec<Spectrogram>> = None;
        let mut out = Vec::with_capacity(entries.len());
        for e in entries {
            let key = cache_key(cfg, &info(&e.ref_path).digest, &info(&e.cod_path).digest, target);
            let file = format!("{key}.gmlspec");
            let cached = cache_dir.map(|d| d.join(&file)).filter(|p| p.is_file());
            let input = match cached {
                Some(p) => {
                    let mut input = read_cache(&p)?;
                    input.excerpt_id = e.excerpt_id.clone();
                    input
                }
                None => {
                    if ref_planes.is_none() {
                        let r = pad_to_length(&load_audio(manifest.resolve(&e.ref_path))?, target)?;
                        ref_planes = Some(channel_planes(&r, cfg)?);
                    }
                    let c = pad_to_length(&load_audio(manifest.resolve(&e.cod_path))?, target)?;
                    let cod_planes = channel_planes(&c, cfg)?;
                    let input = round_f32(assemble_input(
                        &e.excerpt_id,
                        ref_planes.as_deref().expect("computed above"),
                        &cod_planes,
                    )?);
                    if let Some(d) = cache_dir {
                        write_cache(d.join(&file), &input)?;
                    }
                    input
                }
            };
            let sample = Sample {
                excerpt_id: e.excerpt_id.clone(),
                condition_id: e.condition_id.clone(),
                input,
                scores: e.ratings.iter().map(|r| r.score).collect(),
            };
            out.push((sample, file));
        }
        Ok(out)
    })?;

    // back to manifest order
    let mut position: HashMap<(&str, &str), usize> = HashMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        position.insert((&e.excerpt_id, &e.condition_id), i);
    }
    let mut ordered: Vec<Option<(Sample, String)>> = (0..manifest.entries.len()).map(|_| None).collect();
    for (sample, file) in per_group.into_iter().flatten() {
        let i = position[&(sample.excerpt_id.as_str(), sample.condition_id.as_str())];
        ordered[i] = Some((sample, file));
    }
    let (samples, files): (Vec<Sample>, Vec<String>) =
        ordered.into_iter().map(|x| x.expect("every entry featurized")).unzip();

    if let Some(dir) = cache_dir {
        write_index(dir, manifest, &samples, &files)?;
    }
    Ok(samples)
}

fn write_index(dir: &Path, manifest: &Manifest, samples: &[Sample], files: &[String]) -> Result<()> {
    let index: Vec<IndexRow> = samples
        .iter()
        .zip(files)
        .map(|(s, f)| IndexRow {
            excerpt_id: s.excerpt_id.clone(),
            condition_id: s.condition_id.clone(),
            cache_file: f.clone(),
        })
        .collect();
    super::write_csv(&dir.join("index.csv"), &index)?;
    let subjective: Vec<SubjectiveRow> = manifest
        .ratings()
        .map(|r| SubjectiveRow {
            condition_id: item_id(&r.excerpt_id, &r.condition_id),
            listener_id: r.listener_id.clone(),
            score: r.score,
        })
        .collect();
    super::write_csv(&dir.join("subjective.csv"), &subjective)
}

/// Reads the samples that [`featurize`] wrote into `dir`.
pub fn load_index(dir: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let dir = dir.as_ref();
    let index: Vec<IndexRow> = super::read_csv(&dir.join("index.csv"))?;
    let subjective: Vec<SubjectiveRow> = super::read_csv(&dir.join("subjective.csv"))?;
    let mut scores: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in &subjective {
        scores.entry(&r.condition_id).or_default().push(r.score);
    }
    index
        .iter()
        .map(|row| {
            let id = item_id(&row.excerpt_id, &row.condition_id);
            let s = scores
                .get(id.as_str())
                .ok_or_else(|| Error::invalid(format!("no subjective scores for {id}")))?;
            let mut input = read_cache(dir.join(&row.cache_file))?;
            input.excerpt_id = row.excerpt_id.clone();
            Ok(Sample {
                excerpt_id: row.excerpt_id.clone(),
                condition_id: row.condition_id.clone(),
                input,
                scores: s.clone(),
            })
        })
        .collect()
}

/// Samples for one generated excerpt, equal to what the file pipeline yields
/// for the same audio.
pub fn featurize_signals(ex: &SyntheticExcerpt, cfg: &GammatoneConfig) -> Result<Vec<Sample>> {
    let target = ex.coded.iter().map(|(_, s)| s.n_samples()).chain([ex.reference.n_samples()]).max().unwrap_or(0);
    let pad = |s: &StereoSignal| pad_to_length(s, target);
    let ref_planes = channel_planes(&pad(&ex.reference)?, cfg)?;
    ex.coded
        .iter()
        .map(|(cond, signal)| {
            let cod_planes = channel_planes(&pad(signal)?, cfg)?;
            Ok(Sample {
                excerpt_id: ex.id.clone(),
                condition_id: cond.clone(),
                input: round_f32(assemble_input(&ex.id, &ref_planes, &cod_planes)?),
                scores: ex.ratings.iter().filter(|r| &r.condition_id == cond).map(|r| r.score).collect(),
            })
        })
        .collect()
}

/// Generates and featurizes a synthetic dataset without touching the disk.
pub fn featurize_synthetic(spec: &SyntheticSpec, cfg: &GammatoneConfig) -> Result<Vec<Sample>> {
    spec.validate()?;
    cfg.validate()?;
    let idx: Vec<usize> = (0..spec.n_excerpts).collect();
    let per = par_map(&idx, |&i| featurize_signals(&spec.excerpt(i)?, cfg))?;
    Ok(per.into_iter().flatten().collect())
}
