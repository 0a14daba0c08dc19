//! Database release pipelines.
//!
//! * Feature-level: every utterance builds its release distribution online,
//!   `Theta(n)` distance evaluations each.
//! * Model-level: distributions for every enrolled record are built once,
//!   offline, into alias tables; online release is a table lookup plus one
//!   draw, with no distance computation.
//!
//! Speech synthesis sits behind [`Synthesizer`]; the only built-in is
//! [`PassthroughSynthesizer`], which leaves the content payload untouched.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::embedding::{UtteranceRecord, Voiceprint, VoiceprintDatabase};
use crate::error::{Error, Result};
use crate::mechanism::{build_distribution, PerturbationDistribution, PrivacyBudget};
use crate::rng::SeededRng;

/// Seam for the speech synthesizer: renders `content` in the voice of
/// `voiceprint`.
pub trait Synthesizer: Sync {
    fn synthesize(&self, content: &[u8], voiceprint: &Voiceprint) -> std::result::Result<Vec<u8>, String>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct PassthroughSynthesizer;

impl Synthesizer for PassthroughSynthesizer {
    fn synthesize(&self, content: &[u8], _voiceprint: &Voiceprint) -> std::result::Result<Vec<u8>, String> {
        Ok(content.to_vec())
    }
}

/// A released utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct ProtectedUtterance {
    pub id: String,
    pub content: Vec<u8>,
    /// Always a member of the release database.
    pub released_voiceprint: Voiceprint,
    pub source_candidate_id: String,
    /// Probability with which the candidate was selected.
    pub probability: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReleaseOptions {
    /// Reuse one draw for all utterances of the same speaker (see
    /// [`speaker_key`]) instead of drawing independently per utterance.
    pub sticky: bool,
}

/// Speaker key of an utterance id: the part before the first `-`, or the
/// whole id when there is none. `spk003-u01` and `spk003-u02` share `spk003`.
pub fn speaker_key(id: &str) -> &str {
    id.split_once('-').map_or(id, |(head, _)| head)
}

/// For each position, the position whose draw it uses.
fn draw_owners(utterances: &[UtteranceRecord], sticky: bool) -> Vec<usize> {
    if !sticky {
        return (0..utterances.len()).collect();
    }
    let mut first: HashMap<&str, usize> = HashMap::new();
    utterances
        .iter()
        .enumerate()
        .map(|(i, u)| *first.entry(speaker_key(&u.id)).or_insert(i))
        .collect()
}

fn synthesize_one(
    syn: &dyn Synthesizer,
    utterance: &UtteranceRecord,
    released: &Voiceprint,
    probability: f64,
) -> Result<ProtectedUtterance> {
    let content = syn
        .synthesize(&utterance.content, released)
        .map_err(|message| Error::Synthesis {
            id: utterance.id.clone(),
            message,
        })?;
    Ok(ProtectedUtterance {
        id: utterance.id.clone(),
        content,
        released_voiceprint: released.clone(),
        source_candidate_id: released.id().to_string(),
        probability,
    })
}

/// Feature-level release: builds each utterance's distribution online and
/// samples one candidate. Utterance `i` draws from `rng.child(&[i])`, so the
/// output is independent of the number of worker threads.
pub fn release_feature_level(
    utterances: &[UtteranceRecord],
    db: &VoiceprintDatabase,
    eps: PrivacyBudget,
    syn: &dyn Synthesizer,
    rng: &SeededRng,
    options: ReleaseOptions,
) -> Result<Vec<ProtectedUtterance>> {
    for u in utterances {
        if u.voiceprint.dim() != db.dim() {
            return Err(Error::DimensionMismatch {
                expected: db.dim(),
                found: u.voiceprint.dim(),
                context: Some(format!("utterance `{}`", u.id)),
            });
        }
    }
    let owners = draw_owners(utterances, options.sticky);
    let draws: Vec<Option<(usize, f64)>> = (0..utterances.len())
        .into_par_iter()
        .map(|i| {
            if owners[i] != i {
                return Ok(None);
            }
            let dist = build_distribution(&utterances[i].voiceprint, db, eps)?;
            let mut r = rng.child(&[i as u64]);
            let k = dist.sample_index(&mut r);
            Ok(Some((k, dist.probabilities()[k])))
        })
        .collect::<Result<_>>()?;

    (0..utterances.len())
        .into_par_iter()
        .map(|i| {
            let (k, p) = draws[owners[i]].expect("owner drew");
            synthesize_one(syn, &utterances[i], db.record(k), p)
        })
        .collect()
}

/// Walker/Vose alias table for one record's release distribution.
#[derive(Clone, Debug, PartialEq)]
struct AliasTable {
    accept: Vec<f64>,
    alias: Vec<u32>,
}

impl AliasTable {
    fn new(probabilities: &[f64]) -> Self {
        let n = probabilities.len();
        let mut scaled: Vec<f64> = probabilities.iter().map(|p| p * n as f64).collect();
        let mut accept = vec![0.0; n];
        let mut alias: Vec<u32> = (0..n as u32).collect();
        let mut small = Vec::new();
        let mut large = Vec::new();
        for (i, &s) in scaled.iter().enumerate() {
            if s < 1.0 {
                small.push(i);
            } else {
                large.push(i);
            }
        }
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            accept[s] = scaled[s];
            alias[s] = l as u32;
            scaled[l] = (scaled[l] + scaled[s]) - 1.0;
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        let fallback = probabilities
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map_or(0, |(i, _)| i);
        for i in large {
            accept[i] = 1.0;
        }
        // Leftovers from rounding. Zero-mass entries must stay unreachable.
        for i in small {
            if probabilities[i] > 0.0 {
                accept[i] = 1.0;
            } else {
                accept[i] = 0.0;
                alias[i] = fallback as u32;
            }
        }
        Self { accept, alias }
    }

    fn sample(&self, rng: &mut SeededRng) -> usize {
        let i = rng.random_range(0..self.accept.len());
        if rng.uniform() < self.accept[i] {
            i
        } else {
            self.alias[i] as usize
        }
    }
}

/// Precomputed release distributions for every record of a database.
#[derive(Clone, Debug)]
pub struct ReleaseModel {
    db: Arc<VoiceprintDatabase>,
    epsilon: PrivacyBudget,
    built_at: u64,
    // Row i holds the release distribution of record i.
    probabilities: Vec<f64>,
    tables: Vec<AliasTable>,
}

impl PartialEq for ReleaseModel {
    fn eq(&self, other: &Self) -> bool {
        self.db.digest() == other.db.digest()
            && self.epsilon == other.epsilon
            && self.built_at == other.built_at
            && self.probabilities.iter().map(|p| p.to_bits()).eq(other.probabilities.iter().map(|p| p.to_bits()))
            && self.tables == other.tables
    }
}

const MODEL_MAGIC: &[u8; 8] = b"VINDMDL\0";
const MODEL_VERSION: u32 = 1;

/// Offline phase of the model-level pipeline: `O(n^2)` distance work.
/// `built_at` is stored verbatim (seconds since the Unix epoch, or 0).
pub fn build_release_model(db: Arc<VoiceprintDatabase>, eps: PrivacyBudget, built_at: u64) -> ReleaseModel {
    let rows: Vec<PerturbationDistribution> = (0..db.len())
        .into_par_iter()
        .map(|i| build_distribution(db.record(i), &db, eps).expect("record matches its own database"))
        .collect();
    let tables = rows.par_iter().map(|d| AliasTable::new(d.probabilities())).collect();
    let probabilities = rows.iter().flat_map(|d| d.probabilities().iter().copied()).collect();
    ReleaseModel {
        db,
        epsilon: eps,
        built_at,
        probabilities,
        tables,
    }
}

impl ReleaseModel {
    pub fn database(&self) -> &VoiceprintDatabase {
        &self.db
    }

    pub fn epsilon(&self) -> PrivacyBudget {
        self.epsilon
    }

    pub fn built_at(&self) -> u64 {
        self.built_at
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    /// Release probabilities of enrolled record `i`, in database order.
    pub fn probabilities(&self, i: usize) -> &[f64] {
        let n = self.db.len();
        &self.probabilities[i * n..(i + 1) * n]
    }

    /// Draws a candidate index for enrolled record `i`.
    pub fn sample_index(&self, i: usize, rng: &mut SeededRng) -> usize {
        self.tables[i].sample(rng)
    }

    /// Binary encoding: magic, version, dim, n, epsilon, build time, the
    /// database digest, then the probability rows and alias tables, all
    /// little-endian at full precision.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.db.len();
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        w.write_all(&(self.db.dim() as u64).to_le_bytes())?;
        w.write_all(&(n as u64).to_le_bytes())?;
        w.write_all(&self.epsilon.epsilon().to_bits().to_le_bytes())?;
        w.write_all(&self.built_at.to_le_bytes())?;
        w.write_all(&self.db.digest())?;
        let mut buf = Vec::with_capacity(n * n * 8);
        for p in &self.probabilities {
            buf.extend_from_slice(&p.to_bits().to_le_bytes());
        }
        w.write_all(&buf)?;
        for t in &self.tables {
            buf.clear();
            for a in &t.accept {
                buf.extend_from_slice(&a.to_bits().to_le_bytes());
            }
            for a in &t.alias {
                buf.extend_from_slice(&a.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    /// Decodes a model and binds it to `db`, which must be the database it
    /// was built from (checked by digest).
    pub fn read_from<R: Read>(mut r: R, db: Arc<VoiceprintDatabase>) -> Result<Self> {
        let bad = |m: &str| Error::ModelFormat(m.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MODEL_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(&mut r)?;
        if version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!("unsupported version {version}")));
        }
        let dim = read_u64(&mut r)? as usize;
        let n = read_u64(&mut r)? as usize;
        let epsilon = PrivacyBudget::new(f64::from_bits(read_u64(&mut r)?))?;
        let built_at = read_u64(&mut r)?;
        let mut digest = [0u8; 32];
        r.read_exact(&mut digest).map_err(|_| bad("truncated header"))?;
        if dim != db.dim() || n != db.len() {
            return Err(Error::ModelFormat(format!(
                "model is for n={n} dim={dim}, database has n={} dim={}",
                db.len(),
                db.dim()
            )));
        }
        if digest != db.digest() {
            return Err(bad("database digest does not match the model"));
        }
        let mut probabilities = vec![0.0; n * n];
        for p in probabilities.iter_mut() {
            *p = f64::from_bits(read_u64(&mut r)?);
        }
        let mut tables = Vec::with_capacity(n);
        for _ in 0..n {
            let mut accept = vec![0.0; n];
            for a in accept.iter_mut() {
                *a = f64::from_bits(read_u64(&mut r)?);
            }
            let mut alias = vec![0u32; n];
            for a in alias.iter_mut() {
                *a = read_u32(&mut r)?;
                if *a as usize >= n {
                    return Err(bad("alias index out of range"));
                }
            }
            tables.push(AliasTable { accept, alias });
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            db,
            epsilon,
            built_at,
            probabilities,
            tables,
        })
    }
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| Error::ModelFormat("truncated model".into()))?;
    Ok(u64::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::ModelFormat("truncated model".into()))?;
    Ok(u32::from_le_bytes(b))
}

/// Model-level release. Each utterance is served from its enrolled record's
/// table; unknown ids are rejected. Utterance `i` draws from
/// `rng.child(&[i])`.
pub fn release_model_level(
    utterances: &[UtteranceRecord],
    model: &ReleaseModel,
    syn: &dyn Synthesizer,
    rng: &SeededRng,
    options: ReleaseOptions,
) -> Result<Vec<ProtectedUtterance>> {
    let enrolled: Vec<usize> = utterances
        .iter()
        .map(|u| model.db.position(&u.id).ok_or_else(|| Error::UnknownRecord(u.id.clone())))
        .collect::<Result<_>>()?;
    let owners = draw_owners(utterances, options.sticky);
    let draws: Vec<usize> = (0..utterances.len())
        .into_par_iter()
        .map(|i| {
            let owner = owners[i];
            let mut r = rng.child(&[owner as u64]);
            model.sample_index(enrolled[owner], &mut r)
        })
        .collect();
    (0..utterances.len())
        .into_par_iter()
        .map(|i| {
            let k = draws[i];
            let p = model.probabilities(enrolled[owners[i]])[k];
            synthesize_one(syn, &utterances[i], model.db.record(k), p)
        })
        .collect()
}

/// A perturbed database: record `i` keeps its id and takes the coordinates
/// of candidate `sources[i]`.
#[derive(Clone, Debug)]
pub struct ReleasedDatabase {
    pub database: VoiceprintDatabase,
    pub sources: Vec<usize>,
    pub probabilities: Vec<f64>,
}

/// Releases every record independently through the mechanism. Record `i`
/// draws from `rng.child(&[i])`.
pub fn release_database(db: &VoiceprintDatabase, eps: PrivacyBudget, rng: &SeededRng) -> Result<ReleasedDatabase> {
    let picks: Vec<(usize, f64)> = (0..db.len())
        .into_par_iter()
        .map(|i| {
            let dist = build_distribution(db.record(i), db, eps)?;
            let k = dist.sample_index(&mut rng.child(&[i as u64]));
            Ok((k, dist.probabilities()[k]))
        })
        .collect::<Result<_>>()?;
    let records = picks
        .iter()
        .enumerate()
        .map(|(i, &(k, _))| db.record(k).with_id(db.record(i).id()))
        .collect::<Result<Vec<_>>>()?;
    Ok(ReleasedDatabase {
        database: VoiceprintDatabase::new(records, db.dim())?,
        sources: picks.iter().map(|p| p.0).collect(),
        probabilities: picks.iter().map(|p| p.1).collect(),
    })
}
