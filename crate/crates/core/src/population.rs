//! Synthetic speaker populations.
//!
//! Each speaker gets a mean direction drawn uniformly on the unit sphere;
//! each of its utterances is the mean plus isotropic Gaussian jitter,
//! renormalized. With jitter standard deviation `1 / sqrt(concentration *
//! dim)` per coordinate, utterances sit roughly `1 / sqrt(concentration)`
//! radians from their speaker's mean.

use rand_distr::{Distribution, StandardNormal};

use crate::embedding::{unit_vector, Voiceprint, VoiceprintDatabase};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Cohort size of the LibriSpeech test-clean evaluation set.
pub const DEFAULT_SPEAKERS: usize = 40;

pub const DEFAULT_CONCENTRATION: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PopulationSpec {
    pub speakers: usize,
    pub utterances_per_speaker: usize,
    pub dim: usize,
    pub concentration: f64,
    pub seed: u64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            speakers: DEFAULT_SPEAKERS,
            utterances_per_speaker: 1,
            dim: crate::embedding::DEFAULT_DIM,
            concentration: DEFAULT_CONCENTRATION,
            seed: crate::rng::DEFAULT_SEED,
        }
    }
}

fn gaussian_direction(rng: &mut SeededRng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        if let Some(u) = unit_vector(&v) {
            return u;
        }
    }
}

/// Utterance ids are `spk<NNN>-u<MM>`, zero padded to the widest index.
pub fn generate_population(spec: &PopulationSpec) -> Result<VoiceprintDatabase> {
    if spec.speakers == 0 || spec.utterances_per_speaker == 0 {
        return Err(Error::InvalidArgument(
            "speakers and utterances per speaker must be >= 1".into(),
        ));
    }
    if spec.dim == 0 {
        return Err(Error::InvalidArgument("dimension must be >= 1".into()));
    }
    if spec.concentration.is_nan() || spec.concentration <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "concentration must be > 0, got {}",
            spec.concentration
        )));
    }
    let spk_width = digits(spec.speakers - 1).max(3);
    let utt_width = digits(spec.utterances_per_speaker - 1).max(2);
    let sigma = 1.0 / (spec.concentration * spec.dim as f64).sqrt();
    let mut records = Vec::with_capacity(spec.speakers * spec.utterances_per_speaker);
    for s in 0..spec.speakers {
        let mean = gaussian_direction(&mut SeededRng::derive(spec.seed, &[s as u64]), spec.dim);
        for u in 0..spec.utterances_per_speaker {
            let mut rng = SeededRng::derive(spec.seed, &[s as u64, u as u64 + 1]);
            let jittered: Vec<f64> = mean
                .iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + sigma * z
                })
                .collect();
            let v = unit_vector(&jittered).unwrap_or_else(|| mean.clone());
            let id = format!("spk{s:0spk_width$}-u{u:0utt_width$}");
            records.push(Voiceprint::new(id, v)?);
        }
    }
    VoiceprintDatabase::new(records, spec.dim)
}

fn digits(mut x: usize) -> usize {
    let mut d = 1;
    while x >= 10 {
        x /= 10;
        d += 1;
    }
    d
}

/// `n` mutually orthogonal unit records (`e_0 .. e_{n-1}`) in dimension
/// `dim >= n`: every pair is at angular distance exactly 1/2.
pub fn orthonormal_database(n: usize, dim: usize) -> Result<VoiceprintDatabase> {
    if n == 0 || dim < n {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= n <= dim, got n={n} dim={dim}"
        )));
    }
    let records = (0..n)
        .map(|i| {
            let mut v = vec![0.0; dim];
            v[i] = 1.0;
            Voiceprint::new(format!("e{i}"), v)
        })
        .collect::<Result<Vec<_>>>()?;
    VoiceprintDatabase::new(records, dim)
}
