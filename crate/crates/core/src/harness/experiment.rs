//! Nested cross-validation over speaker-independent folds.
//!
//! For every seed and outer fold, hyperparameters are chosen by an inner
//! cross-validation that only sees the outer-training speakers; the winning
//! pipeline is refit on the whole outer-training set and scored on the
//! held-out speakers' recordings of the target task.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::folds::{build_folds, FoldPlan};
use super::grouping::{evaluation_data, select_task_data, GroupingStrategy};
use super::metrics::{f1_score, F1Variant, MeanStd};
use crate::adnn::{train_adnn, TrainConfig};
use crate::corpus::{read_feature_matrix, FrameFeatures, Gender, SampleRecord, State, Task};
use crate::error::{Error, Result};
use crate::features::{aggregate_frames, fit_pca, fit_standardizer_rows, Normalization, StandardizationParams};
use crate::svm::{train_svm, SvmLoss, SvmParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Svm,
    Adnn,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Svm => "SVM",
            ModelKind::Adnn => "A-DNN",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSet {
    /// Knowledge-based descriptors: single-row functionals for the SVM,
    /// frame-level descriptors for the A-DNN.
    Egemaps,
    /// Frame-level self-supervised embeddings.
    W2v2,
}

impl FeatureSet {
    pub fn label(self) -> &'static str {
        match self {
            FeatureSet::Egemaps => "eGeMAPS",
            FeatureSet::W2v2 => "Wav2Vec2.0",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenderMode {
    /// One model for everyone; scores split by test-speaker gender afterwards.
    #[default]
    Independent,
    /// Separate models trained and evaluated per gender.
    Dependent,
}

/// What a fold holds out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitLevel {
    /// Whole speakers: no speaker is on both sides of a split.
    #[default]
    Speaker,
    /// Individual recordings. Leaks speaker identity across the split; only
    /// useful to demonstrate that leakage inflates scores.
    Record,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub feature_set: FeatureSet,
    pub strategy: GroupingStrategy,
    pub target_task: Task,
    /// Seeds `1..=n_seeds` are run.
    pub n_seeds: u64,
    pub k_outer: usize,
    pub k_inner: usize,
    pub pca_grid: Vec<usize>,
    pub c_grid: Vec<f64>,
    pub gender_mode: GenderMode,
    pub f1_variant: F1Variant,
    pub normalization: Normalization,
    pub svm_loss: SvmLoss,
    pub svm_tol: f64,
    pub svm_max_iter: usize,
    /// A-DNN settings; the seed is replaced per (seed, fold).
    pub adnn: TrainConfig,
    pub split: SplitLevel,
    /// Drop speakers that lack an ON or an OFF recording of the target task.
    pub require_both_states: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelKind::Svm,
            feature_set: FeatureSet::W2v2,
            strategy: GroupingStrategy::TaskSpecific,
            target_task: Task::ProsSent,
            n_seeds: 5,
            k_outer: 5,
            k_inner: 4,
            pca_grid: vec![16, 32, 64],
            c_grid: vec![0.01, 0.1, 1.0, 10.0],
            gender_mode: GenderMode::Independent,
            f1_variant: F1Variant::Macro,
            normalization: Normalization::OnReference,
            svm_loss: SvmLoss::SquaredHinge,
            svm_tol: 1e-6,
            svm_max_iter: 10_000,
            adnn: TrainConfig::default(),
            split: SplitLevel::Speaker,
            require_both_states: true,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_seeds == 0 {
            return Err(Error::BadConfig("n_seeds must be at least 1".into()));
        }
        if self.k_outer < 2 || self.k_inner < 2 {
            return Err(Error::BadConfig("fold counts must be at least 2".into()));
        }
        if self.model == ModelKind::Svm {
            if self.pca_grid.is_empty() || self.c_grid.is_empty() {
                return Err(Error::BadConfig("SVM grids must be non-empty".into()));
            }
            if self.pca_grid.contains(&0) || self.c_grid.iter().any(|&c| !(c > 0.0)) {
                return Err(Error::BadConfig("grid values must be positive".into()));
            }
        }
        Ok(())
    }

    fn svm_params(&self, c: f64) -> SvmParams {
        SvmParams {
            c,
            tol: self.svm_tol,
            max_iter: self.svm_max_iter,
            loss: self.svm_loss,
        }
    }
}

/// Frame-level feature matrices keyed by sample id.
#[derive(Debug, Clone, Default)]
pub struct FeatureStore {
    map: HashMap<String, FrameFeatures>,
}

impl FeatureStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reads every record's feature file; relative paths resolve against `root`.
    pub fn load(records: &[SampleRecord], root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let mut store = FeatureStore::new();
        for r in records {
            let path = Path::new(&r.feature_path);
            let path = if path.is_absolute() {
                path.to_path_buf()
            } else {
                root.join(path)
            };
            store.insert(r.sample_id.clone(), read_feature_matrix(&path)?);
        }
        Ok(store)
    }

    pub fn insert(&mut self, sample_id: String, m: FrameFeatures) {
        self.map.insert(sample_id, m);
    }

    pub fn get(&self, sample_id: &str) -> Option<&FrameFeatures> {
        self.map.get(sample_id)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub pca_k: usize,
    pub c: f64,
    /// Mean inner-CV F1 of the chosen setting.
    pub inner_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub speaker_id: String,
    pub gender: Gender,
    pub truth: State,
    pub predicted: State,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub seed: u64,
    pub fold: usize,
    pub f1: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// Hyperparameters chosen by the inner loop; one entry per trained SVM.
    pub hyperparameters: Vec<Hyperparameters>,
    pub male_f1: Option<f64>,
    pub female_f1: Option<f64>,
    pub predictions: Vec<Prediction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    InnerTrain,
    InnerValidation,
    OuterTrain,
    OuterTest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessEvent {
    pub seed: u64,
    pub fold: usize,
    pub phase: Phase,
    pub sample_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub library_version: String,
    pub config: ExperimentConfig,
    pub dropped_speakers: Vec<String>,
    /// One entry per (seed, outer fold), ordered by seed then fold.
    pub folds: Vec<FoldResult>,
    pub summary: MeanStd,
    pub male: Option<MeanStd>,
    pub female: Option<MeanStd>,
    #[serde(skip)]
    pub elapsed: Duration,
    #[serde(skip)]
    pub access_log: Vec<AccessEvent>,
}

impl ExperimentResult {
    pub fn scores(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.f1).collect()
    }

    /// Recomputes the summary from the stored per-fold scores.
    pub fn recompute(&self) -> MeanStd {
        MeanStd::of(&self.scores()).expect("at least one fold")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Worker count: `ONOFF_JOBS` if set, otherwise the available parallelism.
pub fn worker_count() -> usize {
    std::env::var("ONOFF_JOBS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Debug, Clone, Copy)]
enum Purpose {
    OuterFolds = 1,
    InnerFolds = 2,
    AdnnTraining = 3,
}

/// Independent generator seed for one (seed, fold, purpose) triple.
fn sub_seed(seed: u64, fold: usize, purpose: Purpose) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 32) | fold as u64);
    rng.next_u64()
}

/// Model inputs: utterance vectors for the SVM, frame matrices for the A-DNN.
enum Inputs {
    Utterance(HashMap<String, Array1<f64>>),
    Frames(HashMap<String, Array2<f64>>),
}

fn prepare_inputs(cfg: &ExperimentConfig, pool: &[SampleRecord], store: &FeatureStore) -> Result<Inputs> {
    let fetch = |r: &SampleRecord| {
        store.get(&r.sample_id).ok_or_else(|| {
            Error::MissingFile(Path::new(&r.feature_path).to_path_buf())
        })
    };
    match cfg.model {
        ModelKind::Svm => {
            let mut map = HashMap::with_capacity(pool.len());
            for r in pool {
                let m = fetch(r)?;
                let v = match cfg.feature_set {
                    FeatureSet::Egemaps => {
                        if m.frames() != 1 {
                            return Err(Error::DimensionMismatch(format!(
                                "{}: functionals must be a single row, found {} frames",
                                r.sample_id,
                                m.frames()
                            )));
                        }
                        m.values().row(0).to_owned()
                    }
                    FeatureSet::W2v2 => aggregate_frames(m.values())?.values().clone(),
                };
                map.insert(r.sample_id.clone(), v);
            }
            check_uniform(map.values().map(|v| v.len()))?;
            Ok(Inputs::Utterance(map))
        }
        ModelKind::Adnn => {
            let mut map = HashMap::with_capacity(pool.len());
            for r in pool {
                let m = fetch(r)?.capped(cfg.adnn.max_frames);
                map.insert(r.sample_id.clone(), m.into_values());
            }
            check_uniform(map.values().map(|v| v.ncols()))?;
            Ok(Inputs::Frames(map))
        }
    }
}

fn check_uniform(mut dims: impl Iterator<Item = usize>) -> Result<()> {
    if let Some(first) = dims.next() {
        if let Some(other) = dims.find(|&d| d != first) {
            return Err(Error::DimensionMismatch(format!(
                "feature files of width {first} and {other}"
            )));
        }
    }
    Ok(())
}

/// Records the sample ids a fold job touches, by phase.
struct Tracer<'a> {
    seed: u64,
    fold: usize,
    inputs: &'a Inputs,
    inner_touched: HashSet<String>,
    log: Option<Vec<AccessEvent>>,
}

impl<'a> Tracer<'a> {
    fn note(&mut self, phase: Phase, id: &str) {
        if matches!(phase, Phase::InnerTrain | Phase::InnerValidation) {
            self.inner_touched.insert(id.to_string());
        }
        if let Some(log) = &mut self.log {
            log.push(AccessEvent {
                seed: self.seed,
                fold: self.fold,
                phase,
                sample_id: id.to_string(),
            });
        }
    }

    fn utterance(&mut self, phase: Phase, id: &str) -> ArrayView1<'a, f64> {
        self.note(phase, id);
        match self.inputs {
            Inputs::Utterance(m) => m[id].view(),
            Inputs::Frames(_) => unreachable!("SVM path uses utterance inputs"),
        }
    }

    fn frames(&mut self, phase: Phase, id: &str) -> ArrayView2<'a, f64> {
        self.note(phase, id);
        match self.inputs {
            Inputs::Frames(m) => m[id].view(),
            Inputs::Utterance(_) => unreachable!("A-DNN path uses frame inputs"),
        }
    }
}

struct Cohort {
    pool: Vec<SampleRecord>,
    eval: Vec<SampleRecord>,
    dropped: Vec<String>,
}

fn build_cohort(cfg: &ExperimentConfig, records: &[SampleRecord]) -> Result<Cohort> {
    let mut eval = evaluation_data(records, cfg.target_task);
    let mut pool = select_task_data(records, cfg.strategy, cfg.target_task);
    let mut dropped = Vec::new();
    if cfg.require_both_states {
        let mut states: BTreeMap<&str, (bool, bool)> = BTreeMap::new();
        for r in &eval {
            let e = states.entry(&r.speaker_id).or_default();
            match r.state {
                State::On => e.0 = true,
                State::Off => e.1 = true,
            }
        }
        let speakers: BTreeSet<&str> = pool.iter().map(|r| r.speaker_id.as_str()).collect();
        for spk in speakers {
            if states.get(spk) != Some(&(true, true)) {
                log::warn!(
                    "dropping speaker {spk}: missing an ON or OFF recording of {}",
                    cfg.target_task
                );
                dropped.push(spk.to_string());
            }
        }
        let drop: HashSet<&str> = dropped.iter().map(String::as_str).collect();
        eval.retain(|r| !drop.contains(r.speaker_id.as_str()));
        pool.retain(|r| !drop.contains(r.speaker_id.as_str()));
    }
    if eval.is_empty() {
        return Err(Error::BadConfig(format!("no usable recordings of task {}", cfg.target_task)));
    }
    Ok(Cohort { pool, eval, dropped })
}

fn unit_of(split: SplitLevel, r: &SampleRecord) -> &str {
    match split {
        SplitLevel::Speaker => &r.speaker_id,
        SplitLevel::Record => &r.sample_id,
    }
}

fn units(split: SplitLevel, recs: &[&SampleRecord]) -> Vec<(String, Gender)> {
    let mut seen = BTreeMap::new();
    for r in recs {
        seen.entry(unit_of(split, r).to_string()).or_insert(r.gender);
    }
    seen.into_iter().collect()
}

fn labels_of(recs: &[&SampleRecord]) -> Vec<State> {
    recs.iter().map(|r| r.state).collect()
}

/// Standardizer fit on the population selected by `mode`.
fn fit_normalizer(
    mode: Normalization,
    rows: &[ArrayView1<f64>],
    states: &[State],
    dim: usize,
) -> Result<StandardizationParams> {
    match mode {
        Normalization::None => Ok(StandardizationParams::identity(dim)),
        Normalization::Global => fit_standardizer_rows(rows),
        Normalization::OnReference => {
            let on: Vec<ArrayView1<f64>> = rows
                .iter()
                .zip(states)
                .filter(|(_, s)| **s == State::On)
                .map(|(r, _)| *r)
                .collect();
            fit_standardizer_rows(&on)
        }
    }
}

fn stack(rows: &[ArrayView1<f64>]) -> Array2<f64> {
    let d = rows.first().map_or(0, |r| r.len());
    let mut out = Array2::zeros((rows.len(), d));
    for (mut o, r) in out.rows_mut().into_iter().zip(rows) {
        o.assign(r);
    }
    out
}

/// Standardize -> PCA (largest requested k) -> one SVM per (k, C).
/// Returns validation F1 per grid point in `grid` order.
fn svm_grid_scores(
    cfg: &ExperimentConfig,
    train: (&[ArrayView1<f64>], &[State]),
    val: (&[ArrayView1<f64>], &[State]),
    grid: &[(usize, f64)],
) -> Result<Vec<f64>> {
    let (train_rows, train_states) = train;
    let (val_rows, val_states) = val;
    let dim = train_rows[0].len();
    let norm = fit_normalizer(cfg.normalization, train_rows, train_states, dim)?;
    let xt = norm.apply_rows(&stack(train_rows))?;
    let xv = norm.apply_rows(&stack(val_rows))?;
    let k_max = grid.iter().map(|g| g.0).max().expect("non-empty grid");
    let pca = fit_pca(&xt, k_max)?;
    let zt_full = pca.transform_rows(&xt)?;
    let zv_full = pca.transform_rows(&xv)?;
    let y: Vec<f64> = train_states.iter().map(|s| s.sign()).collect();
    let mut scores = Vec::with_capacity(grid.len());
    for &(k, c) in grid {
        let zt = zt_full.slice(ndarray::s![.., ..k]).to_owned();
        let fit = train_svm(&zt, &y, &cfg.svm_params(c))?;
        let preds: Vec<State> = zv_full
            .rows()
            .into_iter()
            .map(|row| fit.model.predict(row.slice(ndarray::s![..k])))
            .collect::<Result<_>>()?;
        scores.push(f1_score(cfg.f1_variant, &preds, val_states)?);
    }
    Ok(scores)
}

struct FoldJob<'a> {
    cfg: &'a ExperimentConfig,
    cohort: &'a Cohort,
    plan: &'a FoldPlan,
    seed: u64,
    fold: usize,
}

struct FoldOutput {
    result: FoldResult,
    log: Vec<AccessEvent>,
}

impl FoldJob<'_> {
    fn run(&self, inputs: &Inputs, trace: bool) -> Result<FoldOutput> {
        let cfg = self.cfg;
        let split = cfg.split;
        let in_test = |r: &SampleRecord| self.plan.fold_of(unit_of(split, r)) == Some(self.fold);
        let train: Vec<&SampleRecord> = self.cohort.pool.iter().filter(|r| !in_test(r)).collect();
        let test: Vec<&SampleRecord> = self.cohort.eval.iter().filter(|r| in_test(r)).collect();
        let held_out: HashSet<&str> = self
            .cohort
            .pool
            .iter()
            .chain(&self.cohort.eval)
            .filter(|r| in_test(r))
            .map(|r| r.sample_id.as_str())
            .collect();

        if split == SplitLevel::Speaker {
            let train_spk: HashSet<&str> = train.iter().map(|r| r.speaker_id.as_str()).collect();
            if let Some(r) = test.iter().find(|r| train_spk.contains(r.speaker_id.as_str())) {
                return Err(Error::Leakage(format!(
                    "speaker {} on both sides of outer fold {}",
                    r.speaker_id, self.fold
                )));
            }
        }
        if test.is_empty() {
            return Err(Error::BadConfig(format!("outer fold {} has no test recordings", self.fold)));
        }

        let mut tracer = Tracer {
            seed: self.seed,
            fold: self.fold,
            inputs,
            inner_touched: HashSet::new(),
            log: trace.then(Vec::new),
        };
        let (predictions, hyper) = match cfg.model {
            ModelKind::Svm => self.run_svm(&mut tracer, &train, &test)?,
            ModelKind::Adnn => (self.run_adnn(&mut tracer, &train, &test)?, Vec::new()),
        };
        if let Some(id) = tracer.inner_touched.iter().find(|id| held_out.contains(id.as_str())) {
            return Err(Error::Leakage(format!(
                "inner selection read held-out recording {id} in outer fold {}",
                self.fold
            )));
        }

        let truth = labels_of(&test);
        let f1 = f1_score(cfg.f1_variant, &predictions, &truth)?;
        let records: Vec<Prediction> = test
            .iter()
            .zip(&predictions)
            .map(|(r, &p)| Prediction {
                sample_id: r.sample_id.clone(),
                speaker_id: r.speaker_id.clone(),
                gender: r.gender,
                truth: r.state,
                predicted: p,
            })
            .collect();
        Ok(FoldOutput {
            result: FoldResult {
                seed: self.seed,
                fold: self.fold,
                f1,
                n_train: train.len(),
                n_test: test.len(),
                hyperparameters: hyper,
                male_f1: gender_f1(cfg.f1_variant, &records, Gender::Male)?,
                female_f1: gender_f1(cfg.f1_variant, &records, Gender::Female)?,
                predictions: records,
            },
            log: tracer.log.unwrap_or_default(),
        })
    }

    fn run_svm(
        &self,
        tracer: &mut Tracer<'_>,
        train: &[&SampleRecord],
        test: &[&SampleRecord],
    ) -> Result<(Vec<State>, Vec<Hyperparameters>)> {
        let cfg = self.cfg;
        let split = cfg.split;
        let inner_plan = build_folds(
            &units(split, train),
            cfg.k_inner,
            sub_seed(self.seed, self.fold, Purpose::InnerFolds),
        )?;
        let dim = match tracer.inputs {
            Inputs::Utterance(m) => m.values().next().map_or(0, |v| v.len()),
            Inputs::Frames(_) => 0,
        };

        // Grid points must be feasible for the smallest training split.
        let mut splits = Vec::with_capacity(cfg.k_inner);
        for j in 0..cfg.k_inner {
            let in_val = |r: &SampleRecord| inner_plan.fold_of(unit_of(split, r)) == Some(j);
            let itrain: Vec<&SampleRecord> = train.iter().copied().filter(|r| !in_val(r)).collect();
            let ival: Vec<&SampleRecord> = train
                .iter()
                .copied()
                .filter(|r| in_val(r) && r.task == cfg.target_task)
                .collect();
            if !ival.is_empty() {
                splits.push((itrain, ival));
            }
        }
        let min_train = splits.iter().map(|(t, _)| t.len()).chain([train.len()]).min().unwrap_or(0);
        let k_cap = min_train.saturating_sub(1).min(dim);
        let mut ks: Vec<usize> = cfg.pca_grid.clone();
        ks.sort_unstable();
        ks.dedup();
        let (ks, skipped): (Vec<usize>, Vec<usize>) = ks.into_iter().partition(|&k| k <= k_cap);
        if !skipped.is_empty() {
            log::warn!("skipping PCA sizes {skipped:?}: at most {k_cap} components available");
        }
        if ks.is_empty() {
            return Err(Error::BadK {
                k: *cfg.pca_grid.iter().min().unwrap_or(&0),
                max: k_cap,
            });
        }
        let mut cs = cfg.c_grid.clone();
        cs.sort_by(f64::total_cmp);
        cs.dedup();
        let grid: Vec<(usize, f64)> = ks.iter().flat_map(|&k| cs.iter().map(move |&c| (k, c))).collect();

        let mut totals = vec![0.0; grid.len()];
        for (itrain, ival) in &splits {
            let train_rows: Vec<_> = itrain
                .iter()
                .map(|r| tracer.utterance(Phase::InnerTrain, &r.sample_id))
                .collect();
            let val_rows: Vec<_> = ival
                .iter()
                .map(|r| tracer.utterance(Phase::InnerValidation, &r.sample_id))
                .collect();
            let scores = svm_grid_scores(
                cfg,
                (&train_rows, &labels_of(itrain)),
                (&val_rows, &labels_of(ival)),
                &grid,
            )?;
            for (t, s) in totals.iter_mut().zip(scores) {
                *t += s;
            }
        }
        // Grid is ordered by (k, C) ascending; strict improvement keeps the simpler model on ties.
        let mut best = 0;
        for (i, t) in totals.iter().enumerate() {
            if *t > totals[best] {
                best = i;
            }
        }
        let (pca_k, c) = grid[best];
        let inner_f1 = totals[best] / splits.len().max(1) as f64;

        let train_rows: Vec<_> = train
            .iter()
            .map(|r| tracer.utterance(Phase::OuterTrain, &r.sample_id))
            .collect();
        let test_rows: Vec<_> = test
            .iter()
            .map(|r| tracer.utterance(Phase::OuterTest, &r.sample_id))
            .collect();
        let train_states = labels_of(train);
        let norm = fit_normalizer(cfg.normalization, &train_rows, &train_states, dim)?;
        let xt = norm.apply_rows(&stack(&train_rows))?;
        let pca = fit_pca(&xt, pca_k)?;
        let zt = pca.transform_rows(&xt)?;
        let y: Vec<f64> = train_states.iter().map(|s| s.sign()).collect();
        let model = train_svm(&zt, &y, &cfg.svm_params(c))?.model;
        let preds = test_rows
            .iter()
            .map(|row| {
                let z = pca.transform(norm.apply(*row)?.view())?;
                model.predict(z.view())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((preds, vec![Hyperparameters { pca_k, c, inner_f1 }]))
    }

    fn run_adnn(
        &self,
        tracer: &mut Tracer<'_>,
        train: &[&SampleRecord],
        test: &[&SampleRecord],
    ) -> Result<Vec<State>> {
        let cfg = self.cfg;
        let train_frames: Vec<ArrayView2<f64>> = train
            .iter()
            .map(|r| tracer.frames(Phase::OuterTrain, &r.sample_id))
            .collect();
        let test_frames: Vec<ArrayView2<f64>> = test
            .iter()
            .map(|r| tracer.frames(Phase::OuterTest, &r.sample_id))
            .collect();
        let dim = train_frames[0].ncols();

        // Frame-level standardization: every frame of a selected recording is one row.
        let mut rows = Vec::new();
        let mut states = Vec::new();
        for (m, r) in train_frames.iter().zip(train) {
            for row in m.rows() {
                rows.push(row);
                states.push(r.state);
            }
        }
        let norm = fit_normalizer(cfg.normalization, &rows, &states, dim)?;

        let period = 1.0;
        let train_set = train_frames
            .iter()
            .zip(train)
            .map(|(m, r)| Ok((FrameFeatures::new(norm.apply_rows(&m.to_owned())?, period)?, r.state)))
            .collect::<Result<Vec<_>>>()?;
        let adnn_cfg = TrainConfig {
            seed: sub_seed(self.seed, self.fold, Purpose::AdnnTraining),
            ..cfg.adnn.clone()
        };
        let model = train_adnn(&adnn_cfg, &train_set)?;
        let test_std = test_frames
            .iter()
            .map(|m| norm.apply_rows(&m.to_owned()))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<ArrayView2<f64>> = test_std.iter().map(|m| m.view()).collect();
        model.predict(&views, cfg.adnn.batch_size)
    }
}

fn gender_f1(variant: F1Variant, preds: &[Prediction], gender: Gender) -> Result<Option<f64>> {
    let (p, t): (Vec<State>, Vec<State>) = preds
        .iter()
        .filter(|r| r.gender == gender)
        .map(|r| (r.predicted, r.truth))
        .unzip();
    if p.is_empty() {
        Ok(None)
    } else {
        f1_score(variant, &p, &t).map(Some)
    }
}

fn summarize(folds: &[FoldResult]) -> (MeanStd, Option<MeanStd>, Option<MeanStd>) {
    let all: Vec<f64> = folds.iter().map(|f| f.f1).collect();
    let male: Vec<f64> = folds.iter().filter_map(|f| f.male_f1).collect();
    let female: Vec<f64> = folds.iter().filter_map(|f| f.female_f1).collect();
    (
        MeanStd::of(&all).expect("at least one fold"),
        MeanStd::of(&male),
        MeanStd::of(&female),
    )
}

/// Runs the full nested cross-validation for `cfg` on `records`.
pub fn run_nested_cv(
    cfg: &ExperimentConfig,
    records: &[SampleRecord],
    store: &FeatureStore,
) -> Result<ExperimentResult> {
    run_nested_cv_with(cfg, records, store, &RunOptions::default())
}

/// Execution knobs that do not affect results.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; defaults to [`worker_count`].
    pub jobs: Option<usize>,
    /// Keep the full per-phase access log in [`ExperimentResult::access_log`].
    pub trace: bool,
}

pub fn run_nested_cv_with(
    cfg: &ExperimentConfig,
    records: &[SampleRecord],
    store: &FeatureStore,
    opts: &RunOptions,
) -> Result<ExperimentResult> {
    let started = Instant::now();
    cfg.validate()?;
    let cohort = build_cohort(cfg, records)?;
    let inputs = prepare_inputs(cfg, &cohort.pool, store)?;

    let all: Vec<&SampleRecord> = cohort.pool.iter().chain(&cohort.eval).collect();
    let unit_list = units(cfg.split, &all);
    let plans = (1..=cfg.n_seeds)
        .map(|seed| build_folds(&unit_list, cfg.k_outer, sub_seed(seed, 0, Purpose::OuterFolds)).map(|p| (seed, p)))
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<FoldJob> = plans
        .iter()
        .flat_map(|(seed, plan)| {
            (0..cfg.k_outer).map(|fold| FoldJob {
                cfg,
                cohort: &cohort,
                plan,
                seed: *seed,
                fold,
            })
        })
        .collect();

    let width = opts.jobs.unwrap_or_else(worker_count).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(width)
        .build()
        .map_err(|e| Error::BadConfig(format!("worker pool: {e}")))?;
    let outputs: Vec<Result<FoldOutput>> =
        pool.install(|| jobs.par_iter().map(|j| j.run(&inputs, opts.trace)).collect());

    let mut folds = Vec::with_capacity(outputs.len());
    let mut access_log = Vec::new();
    for (job, out) in jobs.iter().zip(outputs) {
        let out = out.map_err(|e| Error::Fold {
            seed: job.seed,
            fold: job.fold,
            source: Box::new(e),
        })?;
        folds.push(out.result);
        access_log.extend(out.log);
    }
    let (summary, male, female) = summarize(&folds);
    Ok(ExperimentResult {
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        dropped_speakers: cohort.dropped,
        folds,
        summary,
        male,
        female,
        elapsed: started.elapsed(),
        access_log,
    })
}

/// All / Male / Female F1 summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderTable {
    pub mode: GenderMode,
    pub all: MeanStd,
    pub male: Option<MeanStd>,
    pub female: Option<MeanStd>,
}

impl GenderTable {
    pub fn from_result(r: &ExperimentResult) -> GenderTable {
        GenderTable {
            mode: r.config.gender_mode,
            all: r.summary,
            male: r.male,
            female: r.female,
        }
    }
}

/// Runs the experiment in `cfg.gender_mode` and returns the merged result.
///
/// In dependent mode one model family is trained per gender; fold `f` of
/// seed `s` then pools the predictions of both gender-specific models, so the
/// All column covers every subject.
pub fn run_gender_experiment(
    cfg: &ExperimentConfig,
    records: &[SampleRecord],
    store: &FeatureStore,
    opts: &RunOptions,
) -> Result<ExperimentResult> {
    match cfg.gender_mode {
        GenderMode::Independent => run_nested_cv_with(cfg, records, store, opts),
        GenderMode::Dependent => {
            let started = Instant::now();
            let mut runs = Vec::with_capacity(2);
            for gender in [Gender::Male, Gender::Female] {
                let subset: Vec<SampleRecord> =
                    records.iter().filter(|r| r.gender == gender).cloned().collect();
                let speakers: BTreeSet<&str> = subset
                    .iter()
                    .filter(|r| r.task == cfg.target_task)
                    .map(|r| r.speaker_id.as_str())
                    .collect();
                if speakers.len() < cfg.k_outer {
                    return Err(Error::TooFewSpeakers {
                        needed: cfg.k_outer,
                        got: speakers.len(),
                    });
                }
                runs.push(run_nested_cv_with(cfg, &subset, store, opts)?);
            }
            let female = runs.pop().expect("two runs");
            let male = runs.pop().expect("two runs");
            let mut folds = Vec::with_capacity(male.folds.len());
            for (m, f) in male.folds.iter().zip(&female.folds) {
                let predictions: Vec<Prediction> =
                    m.predictions.iter().chain(&f.predictions).cloned().collect();
                let (p, t): (Vec<State>, Vec<State>) =
                    predictions.iter().map(|r| (r.predicted, r.truth)).unzip();
                folds.push(FoldResult {
                    seed: m.seed,
                    fold: m.fold,
                    f1: f1_score(cfg.f1_variant, &p, &t)?,
                    n_train: m.n_train + f.n_train,
                    n_test: m.n_test + f.n_test,
                    hyperparameters: m
                        .hyperparameters
                        .iter()
                        .chain(&f.hyperparameters)
                        .copied()
                        .collect(),
                    male_f1: Some(m.f1),
                    female_f1: Some(f.f1),
                    predictions,
                });
            }
            let (summary, male_summary, female_summary) = summarize(&folds);
            let mut dropped = male.dropped_speakers;
            dropped.extend(female.dropped_speakers);
            let mut access_log = male.access_log;
            access_log.extend(female.access_log);
            Ok(ExperimentResult {
                library_version: env!("CARGO_PKG_VERSION").to_string(),
                config: cfg.clone(),
                dropped_speakers: dropped,
                folds,
                summary,
                male: male_summary,
                female: female_summary,
                elapsed: started.elapsed(),
                access_log,
            })
        }
    }
}

/// All / Male / Female summary for `cfg.gender_mode`.
pub fn gender_breakdown(
    cfg: &ExperimentConfig,
    records: &[SampleRecord],
    store: &FeatureStore,
) -> Result<GenderTable> {
    let result = run_gender_experiment(cfg, records, store, &RunOptions::default())?;
    Ok(GenderTable::from_result(&result))
}
