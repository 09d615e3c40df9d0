//! Synthetic cohorts with a known Bayes-optimal ceiling.
//!
//! Speaker `i` has a latent offset `uᵢ ~ N(0, σ_spk² I)`. Every frame of one
//! of its recordings is `uᵢ + s + ε` with `ε ~ N(0, σ_n² I)` and
//! `s = δ·e₁` for ON recordings of responders, `0` otherwise.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{write_feature_matrix, write_manifest, FrameFeatures, Gender, SampleRecord, State, Task};
use crate::error::{Error, Result};
use crate::harness::experiment::FeatureStore;
use crate::harness::metrics::macro_f1;

/// How recording states are assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateAssignment {
    /// Every speaker records each task once per state.
    #[default]
    Paired,
    /// Each speaker is seen in one state only, drawn at random with the two
    /// states balanced across speakers. State then carries no signal beyond
    /// speaker identity.
    PerSpeakerRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_speakers: usize,
    pub male_fraction: f64,
    pub tasks: Vec<Task>,
    /// Inclusive range of frame counts, drawn uniformly per recording.
    pub frames_per_sample: (usize, usize),
    pub dim: usize,
    /// σ_spk.
    pub speaker_effect_scale: f64,
    /// δ.
    pub state_effect: f64,
    /// σ_n.
    pub noise_scale: f64,
    pub responder_fraction: f64,
    /// Recordings per (speaker, task, state).
    pub repetitions: usize,
    pub state_assignment: StateAssignment,
    pub frame_period_ms: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_speakers: 74,
            male_fraction: 36.0 / 74.0,
            tasks: Task::ALL.to_vec(),
            frames_per_sample: (50, 150),
            dim: 32,
            speaker_effect_scale: 1.0,
            state_effect: 1.0,
            noise_scale: 1.0,
            responder_fraction: 25.0 / 74.0,
            repetitions: 1,
            state_assignment: StateAssignment::Paired,
            frame_period_ms: 20.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::BadConfig(m.to_string()));
        if self.n_speakers == 0 {
            return bad("n_speakers must be positive");
        }
        if !(0.0..=1.0).contains(&self.male_fraction) || !(0.0..=1.0).contains(&self.responder_fraction) {
            return bad("fractions must lie in [0, 1]");
        }
        if self.tasks.is_empty() {
            return bad("at least one task is required");
        }
        let (lo, hi) = self.frames_per_sample;
        if lo == 0 || lo > hi {
            return bad("frames_per_sample must be a non-empty range of positive counts");
        }
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        if !(self.speaker_effect_scale >= 0.0) || !(self.state_effect >= 0.0) {
            return bad("scales must be non-negative");
        }
        if !(self.noise_scale > 0.0) || !self.noise_scale.is_finite() {
            return bad("noise_scale must be positive");
        }
        if self.repetitions == 0 {
            return bad("repetitions must be positive");
        }
        if !(self.frame_period_ms > 0.0) {
            return bad("frame_period_ms must be positive");
        }
        Ok(())
    }

    pub fn n_males(&self) -> usize {
        (self.n_speakers as f64 * self.male_fraction).round() as usize
    }

    pub fn n_responders(&self) -> usize {
        (self.n_speakers as f64 * self.responder_fraction).round() as usize
    }
}

/// Generated records with their feature matrices, index-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub records: Vec<SampleRecord>,
    pub features: Vec<FrameFeatures>,
    /// Speaker ids whose ON recordings carry the state shift.
    pub responders: Vec<String>,
}

impl SynthCorpus {
    pub fn store(&self) -> FeatureStore {
        let mut store = FeatureStore::new();
        for (r, f) in self.records.iter().zip(&self.features) {
            store.insert(r.sample_id.clone(), f.clone());
        }
        store
    }

    /// Writes `manifest.tsv` plus one FMAT file per record under `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let feats = dir.join("feats");
        std::fs::create_dir_all(&feats).map_err(|e| Error::io(&feats, e))?;
        for (r, f) in self.records.iter().zip(&self.features) {
            write_feature_matrix(dir.join(&r.feature_path), f)?;
        }
        write_manifest(dir.join("manifest.tsv"), &self.records)
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng))
        .collect()
}

pub fn generate_corpus(cfg: &SynthConfig, seed: u64) -> Result<SynthCorpus> {
    cfg.validate()?;
    let n = cfg.n_speakers;
    let ids: Vec<String> = (0..n).map(|i| format!("S{:03}", i + 1)).collect();

    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut master);
    let mut is_responder = vec![false; n];
    for &i in &order[..cfg.n_responders()] {
        is_responder[i] = true;
    }
    // Balanced single states, independent of responder status.
    let mut single_state = vec![State::Off; n];
    order.shuffle(&mut master);
    for &i in &order[..n / 2] {
        single_state[i] = State::On;
    }
    if n % 2 == 1 && master.random::<bool>() {
        single_state[order[n - 1]] = State::On;
    }

    let n_males = cfg.n_males();
    let (lo, hi) = cfg.frames_per_sample;
    let mut records = Vec::new();
    let mut features = Vec::new();
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let gender = if i < n_males { Gender::Male } else { Gender::Female };
        let u = normal_vec(&mut rng, cfg.dim, cfg.speaker_effect_scale);
        let states: &[State] = match cfg.state_assignment {
            StateAssignment::Paired => &[State::On, State::Off],
            StateAssignment::PerSpeakerRandom => std::slice::from_ref(&single_state[i]),
        };
        for &task in &cfg.tasks {
            for &state in states {
                for rep in 0..cfg.repetitions {
                    let frames = rng.random_range(lo..=hi);
                    let shift = if state == State::On && is_responder[i] {
                        cfg.state_effect
                    } else {
                        0.0
                    };
                    let noise = normal_vec(&mut rng, frames * cfg.dim, cfg.noise_scale);
                    let mut m = Array2::from_shape_vec((frames, cfg.dim), noise)
                        .expect("shape matches length");
                    for mut row in m.rows_mut() {
                        row += &ndarray::ArrayView1::from(&u);
                        row[0] += shift;
                    }
                    let sample_id = if cfg.repetitions == 1 {
                        format!("{}-{}-{}", ids[i], task, state)
                    } else {
                        format!("{}-{}-{}-{}", ids[i], task, state, rep + 1)
                    };
                    records.push(SampleRecord {
                        feature_path: format!("feats/{sample_id}.fmat"),
                        sample_id,
                        speaker_id: ids[i].clone(),
                        gender,
                        task,
                        state,
                    });
                    features.push(FrameFeatures::new(m, cfg.frame_period_ms)?);
                }
            }
        }
    }
    let responders = (0..n).filter(|&i| is_responder[i]).map(|i| ids[i].clone()).collect();
    Ok(SynthCorpus {
        records,
        features,
        responders,
    })
}

/// Monte-Carlo macro F1 of the Bayes-optimal rule on utterance means.
///
/// Only the first coordinate carries state information. Marginalizing the
/// speaker offset, its utterance mean is `N(0, s²)` for OFF and the mixture
/// `r·N(δ, s²) + (1−r)·N(0, s²)` for ON, with `s² = σ_spk² + σ_n²/T`. The
/// likelihood ratio is increasing in the projection for any `r > 0` and
/// crosses 1 at `δ/2`, so the rule predicts ON above `δ/2`.
pub fn oracle_f1(cfg: &SynthConfig, n_mc: usize, seed: u64) -> Result<f64> {
    cfg.validate()?;
    if n_mc < 10_000 {
        return Err(Error::BadConfig(format!("n_mc must be at least 10000, got {n_mc}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let delta = cfg.state_effect;
    let threshold = delta / 2.0;
    let (lo, hi) = cfg.frames_per_sample;
    let mut preds = Vec::with_capacity(2 * n_mc);
    let mut truth = Vec::with_capacity(2 * n_mc);
    for _ in 0..n_mc {
        for state in [State::On, State::Off] {
            let t = rng.random_range(lo..=hi) as f64;
            let u: f64 = StandardNormal.sample(&mut rng);
            let e: f64 = StandardNormal.sample(&mut rng);
            let responder = rng.random::<f64>() < cfg.responder_fraction;
            let shift = if state == State::On && responder { delta } else { 0.0 };
            let x = cfg.speaker_effect_scale * u + shift + cfg.noise_scale / t.sqrt() * e;
            // A tie goes to ON, like the classifiers.
            preds.push(if x >= threshold { State::On } else { State::Off });
            truth.push(state);
        }
    }
    macro_f1(&preds, &truth)
}
