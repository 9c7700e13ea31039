//! Seeded two-cluster synthetic knowledge bases for desk-scale runs.
//!
//! Each modality gets two cluster centres on the unit sphere,
//! `normalize(u ± (sep/2)·v)` with `u ⟂ v`; samples are the centre plus
//! isotropic Gaussian noise, renormalized. Cluster 0 is authentic and
//! cluster 1 manipulated, alternating by index so both labels are balanced.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{EmbeddingRecord, KnowledgeBase, Label, ManipulationType, Sample};
use crate::scalar::{dot, normalize_in_place};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub n_samples: usize,
    pub n_queries: usize,
    pub d_v: usize,
    pub d_t: usize,
    pub cluster_sep: f64,
    /// Norm of the per-sample noise before renormalization.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_samples: 100,
            n_queries: 200,
            d_v: 32,
            d_t: 32,
            cluster_sep: 2.0,
            noise: 0.6,
            seed: 0,
        }
    }
}

pub struct SyntheticData {
    pub kb: KnowledgeBase<f64>,
    pub queries: KnowledgeBase<f64>,
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let mut v = gaussian(rng, d);
        if normalize_in_place(&mut v) {
            return v;
        }
    }
}

struct Space {
    centres: [Vec<f64>; 2],
}

impl Space {
    fn new(rng: &mut ChaCha8Rng, d: usize, sep: f64) -> Self {
        let u = unit(rng, d);
        let mut v = unit(rng, d);
        if d > 1 {
            let proj = dot(&u, &v);
            v.iter_mut().zip(&u).for_each(|(x, &ux)| *x -= proj * ux);
            normalize_in_place(&mut v);
        }
        let centre = |sign: f64| {
            let mut c: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + sign * 0.5 * sep * b).collect();
            normalize_in_place(&mut c);
            c
        };
        Space {
            centres: [centre(-1.0), centre(1.0)],
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, cluster: usize, noise: f64) -> Vec<f64> {
        let d = self.centres[cluster].len();
        let scale = noise / (d as f64).sqrt();
        loop {
            let mut x: Vec<f64> = self.centres[cluster]
                .iter()
                .map(|c| c + scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            if normalize_in_place(&mut x) {
                return x;
            }
        }
    }
}

fn draw_split(
    rng: &mut ChaCha8Rng,
    visual: &Space,
    textual: &Space,
    prefix: &str,
    n: usize,
    noise: f64,
    with_library: bool,
) -> Result<KnowledgeBase<f64>> {
    let mut samples = Vec::with_capacity(n);
    let mut embeddings = Vec::with_capacity(n);
    let (mut n_fake, mut n_real) = (0usize, 0usize);
    for i in 0..n {
        let cluster = i % 2;
        let id = format!("{prefix}-{i:04}");
        let (label, kind, library) = if cluster == 1 {
            let kind = ManipulationType::FORGERIES[n_fake % 4];
            n_fake += 1;
            (Label::Manipulated, kind, kind)
        } else {
            let lib = ManipulationType::FORGERIES[n_real % 4];
            n_real += 1;
            (Label::Authentic, ManipulationType::None, lib)
        };
        embeddings.push(EmbeddingRecord {
            sample_id: id.clone(),
            visual: visual.draw(rng, cluster, noise),
            textual: textual.draw(rng, cluster, noise),
        });
        samples.push(Sample {
            image_ref: format!("synthetic/{id}.png"),
            text: format!("synthetic caption {id}"),
            id,
            label,
            manipulation_type: kind,
            library: with_library.then_some(library),
        });
    }
    // round-trip through the wire format so in-memory data equals the files
    let kb = KnowledgeBase::from_parts(samples, embeddings)?;
    KnowledgeBase::from_jsonl(&kb.to_jsonl())
}

pub fn generate_synthetic(params: &SynthParams) -> Result<SyntheticData> {
    if !(params.cluster_sep >= 0.0) || !params.cluster_sep.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "cluster_sep must be a finite non-negative number, got {}",
            params.cluster_sep
        )));
    }
    if params.n_samples == 0 || params.n_queries == 0 || params.d_v == 0 || params.d_t == 0 {
        return Err(Error::InvalidParameter(
            "n_samples, n_queries, d_v and d_t must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let visual = Space::new(&mut rng, params.d_v, params.cluster_sep);
    let textual = Space::new(&mut rng, params.d_t, params.cluster_sep);
    let kb = draw_split(&mut rng, &visual, &textual, "kb", params.n_samples, params.noise, false)?;
    let queries = draw_split(&mut rng, &visual, &textual, "q", params.n_queries, params.noise, true)?;
    Ok(SyntheticData { kb, queries })
}

/// Writes `kb.jsonl` and `queries.jsonl` into `dir`, returning both paths.
pub fn write_synthetic(data: &SyntheticData, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let kb_path = dir.join("kb.jsonl");
    let query_path = dir.join("queries.jsonl");
    data.kb.save(&kb_path)?;
    data.queries.save(&query_path)?;
    Ok((kb_path, query_path))
}
