//! Three-phase training with feature uncertainty representation, and the
//! phenomena checks on trained models.
//!
//! 1. Train the feature network and classifier on the long-tailed data.
//! 2. Freeze the feature network. Match every tail class to its most similar
//!    head class, take head geometries from the cached embeddings, and tune
//!    the classifier on balanced batches with FUR-augmented tail features.
//! 3. Freeze the classifier and fine-tune the feature network on the
//!    long-tailed data.
//!
//! An optional fourth phase repeats the matching and classifier tuning on the
//! phase-3 features with phase-3 epochs and learning rate.
//!
//! Each phase draws from its own ChaCha8 stream, so disabling a later phase
//! never changes an earlier one.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::FeatureSet;
use crate::error::{Error, Result};
use crate::fur::{BalancedSampler, FurConfig, HeadDonors};
use crate::geometry::{
    class_geometries, class_similarity_from_logits, geometry_similarity, most_similar_head, spearman,
    top_k_eigenvalue_ratio, ClassSimilarityTable, GeometryBasis, HeadTailSplit, ScoreMode, DEFAULT_TOP_P,
};
use crate::linalg::Matrix;
use crate::model::{evaluate_predictions, subset_accuracy, AccuracyGroups, AccuracyReport, FrozenGroups, Model, ModelConfig, Sgd};
use crate::randvec::random_basis_similarity;
use crate::scalar::Scalar;

const STREAM_INIT: u64 = 0;
const STREAM_PHASE1: u64 = 1;
const STREAM_FUR: u64 = 2;
const STREAM_PHASE3: u64 = 3;
const STREAM_PHASE4: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrDecay {
    #[default]
    Cosine,
    Linear,
    None,
}

impl LrDecay {
    /// Learning rate for `epoch` (0-based) of `epochs`.
    pub fn at(self, base: f64, epoch: usize, epochs: usize) -> f64 {
        let t = if epochs == 0 { 0.0 } else { epoch as f64 / epochs as f64 };
        match self {
            LrDecay::Cosine => base * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()),
            LrDecay::Linear => base * (1.0 - t),
            LrDecay::None => base,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub m1: usize,
    pub m2: usize,
    pub m3: usize,
    pub lr1: f64,
    pub lr2: f64,
    pub lr3: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Schedule for phase 1.
    pub lr_decay: LrDecay,
    /// Schedule for the fine-tuning phases.
    pub finetune_lr_decay: LrDecay,
    /// Run the extra re-matching phase after phase 3.
    pub fourth_phase: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            m1: 30,
            m2: 10,
            m3: 10,
            lr1: 0.05,
            lr2: 0.01,
            lr3: 5e-5,
            momentum: 0.9,
            batch_size: 64,
            lr_decay: LrDecay::Cosine,
            finetune_lr_decay: LrDecay::None,
            fourth_phase: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [("lr1", self.lr1), ("lr2", self.lr2), ("lr3", self.lr3)] {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must be in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        Ok(())
    }
}

/// Network shape; input width and class count come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig { hidden: vec![64], feature_dim: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub fur: FurConfig,
    pub split: HeadTailSplit,
    pub score_mode: ScoreMode,
    /// Mean-center class features before estimating head geometries.
    pub centered_geometry: bool,
    /// Scales the 100 / 20 sample thresholds of the head/middle/tail report buckets.
    pub group_factor: f64,
    pub top_p: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            fur: FurConfig { n_t: 8, n_a: 3, k_top: None, scale: 0.15, ..FurConfig::default() },
            split: HeadTailSplit::default(),
            score_mode: ScoreMode::Probabilities,
            centered_geometry: true,
            group_factor: 1.0,
            top_p: DEFAULT_TOP_P,
        }
    }
}

impl PipelineConfig {
    /// Sets both the training and the augmentation seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.fur.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.fur.validate(self.network.feature_dim)?;
        if self.top_p == 0 || self.top_p > self.network.feature_dim {
            return Err(Error::config(format!("top_p must be in 1..={}", self.network.feature_dim)));
        }
        if !(self.group_factor > 0.0) || !self.group_factor.is_finite() {
            return Err(Error::config("group_factor must be positive"));
        }
        Ok(())
    }
}

/// Test-set accuracy after a phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Head/middle/tail buckets by training count.
    pub accuracy: AccuracyReport,
    /// Accuracy on the classes treated as tail for augmentation.
    pub split_tail: Option<f64>,
    /// Accuracy on the classes treated as head for augmentation.
    pub split_head: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub name: String,
    pub epochs: usize,
    pub base_lr: f64,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
    pub evaluation: Evaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryDiagnostics {
    /// Top-`top_p` spectral ratio per class of the final training embeddings.
    pub top_ratio: BTreeMap<u32, f64>,
    /// Pairwise geometry similarity, rows and columns in `classes` order.
    pub classes: Vec<u32>,
    pub similarity: Vec<Vec<f64>>,
}

/// How far tail-class embeddings moved during phase 3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailShift {
    /// Geometry similarity (top `top_p`) between each tail class's embeddings
    /// before and after phase 3.
    pub geometry_similarity: BTreeMap<u32, f64>,
    /// `‖μ_after − μ_before‖ / ‖μ_before‖` per tail class.
    pub relative_mean_shift: BTreeMap<u32, f64>,
    pub mean_geometry_similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub class_counts: Vec<usize>,
    pub head_classes: Vec<u32>,
    pub tail_classes: Vec<u32>,
    pub groups: AccuracyGroups,
    pub phases: Vec<PhaseReport>,
    /// Evaluation of the returned model.
    pub final_evaluation: Evaluation,
    /// Class similarity after phase 1, when a FUR phase ran.
    pub similarity_table: Option<ClassSimilarityTable>,
    /// Tail class to matched head class, fixed after phase 1.
    pub matched_head: BTreeMap<u32, u32>,
    /// Matching recomputed for the fourth phase.
    pub rematched_head: Option<BTreeMap<u32, u32>>,
    pub geometry: GeometryDiagnostics,
    pub tail_shift: Option<TailShift>,
}

impl RunReport {
    /// Evaluation recorded after the named phase.
    pub fn phase(&self, name: &str) -> Option<&Evaluation> {
        self.phases.iter().find(|p| p.name == name).map(|p| &p.evaluation)
    }

    /// Per-phase loss curves as CSV: `phase,epoch,loss`.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("phase,epoch,loss\n");
        for p in &self.phases {
            for (e, l) in p.loss_curve.iter().enumerate() {
                s.push_str(&format!("{},{e},{l}\n", p.name));
            }
        }
        s
    }

    /// Accuracy table as CSV: `phase,overall,head,middle,tail,split_head,split_tail`.
    pub fn accuracy_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let mut s = String::from("phase,overall,head,middle,tail,split_head,split_tail\n");
        for p in &self.phases {
            let e = &p.evaluation;
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                p.name,
                e.accuracy.overall,
                opt(e.accuracy.head),
                opt(e.accuracy.middle),
                opt(e.accuracy.tail),
                opt(e.split_head),
                opt(e.split_tail)
            ));
        }
        s
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput<T> {
    pub report: RunReport,
    pub model: Model<T>,
    /// Parameters at the end of each phase, for isolation checks.
    pub snapshots: Vec<(String, Vec<T>)>,
}

fn to_matrix<T: Scalar>(set: &FeatureSet<T>) -> Result<Matrix<T>> {
    set.to_matrix()
}

fn evaluate_on<T: Scalar>(
    model: &Model<T>,
    test_x: &Matrix<T>,
    test: &FeatureSet<T>,
    groups: &AccuracyGroups,
    head: &[u32],
    tail: &[u32],
) -> Result<Evaluation> {
    let pred = model.predict(test_x)?;
    Ok(Evaluation {
        accuracy: evaluate_predictions(&pred, test.labels(), model.classes(), groups)?,
        split_tail: subset_accuracy(&pred, test.labels(), tail),
        split_head: subset_accuracy(&pred, test.labels(), head),
    })
}

/// Shuffled minibatch epochs on raw inputs with the model's current freeze state.
fn minibatch_epochs<T: Scalar>(
    model: &mut Model<T>,
    opt: &mut Sgd<T>,
    train: &FeatureSet<T>,
    epochs: usize,
    base_lr: f64,
    decay: LrDecay,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let n = train.len();
    let mut curve = Vec::with_capacity(epochs);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..epochs {
        let lr = T::lit(decay.at(base_lr, epoch, epochs));
        order.shuffle(rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(batch_size) {
            let b = train.select(chunk);
            let x = to_matrix(&b)?;
            total += opt.train_step(model, &x, b.labels(), lr)?.to_f64_lossless();
            batches += 1;
        }
        curve.push(total / batches.max(1) as f64);
    }
    Ok(curve)
}

/// Tail-to-head matching and head geometries from embeddings.
fn head_donors<T: Scalar>(
    model: &Model<T>,
    embedded: &FeatureSet<T>,
    head: &[u32],
    tail: &[u32],
    cfg: &PipelineConfig,
) -> Result<(ClassSimilarityTable, HeadDonors<T>)> {
    let logits = model.logits_from_features(&embedded.to_matrix()?)?;
    let table = class_similarity_from_logits(&logits, embedded.labels(), cfg.score_mode)?;
    let mut matching = BTreeMap::new();
    for &t in tail {
        matching.insert(t, most_similar_head(t, &table, head)?);
    }
    let mut geometries = BTreeMap::new();
    for &h in matching.values() {
        if let Entry::Vacant(slot) = geometries.entry(h) {
            let rows = embedded.rows_of(h);
            slot.insert(GeometryBasis::from_rows(h, &rows, embedded.dim(), cfg.centered_geometry)?);
        }
    }
    Ok((table, HeadDonors { matching, geometries }))
}

/// Classifier tuning on FUR-balanced batches over cached embeddings.
fn fur_epochs<T: Scalar>(
    model: &mut Model<T>,
    opt: &mut Sgd<T>,
    embedded: &FeatureSet<T>,
    head: &[u32],
    tail: &[u32],
    donors: &HeadDonors<T>,
    cfg: &PipelineConfig,
    epochs: usize,
    base_lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let sampler = BalancedSampler::new(embedded, tail, head, donors, &cfg.fur)?;
    let iters = (embedded.len() / cfg.fur.batch_size()).max(1);
    let mut curve = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let lr = T::lit(cfg.train.finetune_lr_decay.at(base_lr, epoch, epochs));
        let mut total = 0.0;
        for _ in 0..iters {
            let batch = sampler.compose(rng)?;
            total += opt.train_classifier_step(model, &batch.features, &batch.labels, lr)?.to_f64_lossless();
        }
        curve.push(total / iters as f64);
    }
    Ok(curve)
}

fn tail_shift<T: Scalar>(
    before: &FeatureSet<T>,
    after: &FeatureSet<T>,
    tail: &[u32],
    cfg: &PipelineConfig,
) -> Result<TailShift> {
    let mut geometry = BTreeMap::new();
    let mut shift = BTreeMap::new();
    for &t in tail {
        let (rb, ra) = (before.rows_of(t), after.rows_of(t));
        if rb.is_empty() {
            continue;
        }
        let gb = GeometryBasis::from_rows(t, &rb, before.dim(), cfg.centered_geometry)?;
        let ga = GeometryBasis::from_rows(t, &ra, after.dim(), cfg.centered_geometry)?;
        geometry.insert(t, geometry_similarity(&gb, &ga, cfg.top_p)?.to_f64_lossless());
        let mean = |rows: &[&[T]]| -> Vec<f64> {
            let n = rows.len() as f64;
            (0..before.dim()).map(|j| rows.iter().map(|r| r[j].to_f64_lossless()).sum::<f64>() / n).collect()
        };
        let (mb, ma) = (mean(&rb), mean(&ra));
        let diff: f64 = mb.iter().zip(&ma).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = mb.iter().map(|a| a * a).sum::<f64>().sqrt();
        shift.insert(t, if norm > 0.0 { diff / norm } else { diff });
    }
    let mean_geometry_similarity = geometry.values().sum::<f64>() / geometry.len().max(1) as f64;
    Ok(TailShift { geometry_similarity: geometry, relative_mean_shift: shift, mean_geometry_similarity })
}

fn diagnostics<T: Scalar>(embedded: &FeatureSet<T>, top_p: usize, centered: bool) -> Result<GeometryDiagnostics> {
    let geoms = class_geometries(embedded, centered)?;
    let mut top_ratio = BTreeMap::new();
    for g in &geoms {
        // A class whose embeddings collapsed to one point has no spectrum to report.
        if let Ok(r) = top_k_eigenvalue_ratio(g, top_p) {
            top_ratio.insert(g.class_id(), r.to_f64_lossless());
        }
    }
    let classes: Vec<u32> = geoms.iter().map(GeometryBasis::class_id).collect();
    let mut similarity = vec![vec![0.0; geoms.len()]; geoms.len()];
    for i in 0..geoms.len() {
        for j in i..geoms.len() {
            let s = geometry_similarity(&geoms[i], &geoms[j], top_p)?.to_f64_lossless();
            similarity[i][j] = s;
            similarity[j][i] = s;
        }
    }
    Ok(GeometryDiagnostics { top_ratio, classes, similarity })
}

/// Runs all configured phases on `train` and evaluates on `test` after each.
///
/// With `m2 = m3 = 0` this is plain empirical risk minimisation; with `m3 = 0`
/// it is decoupled training with FUR.
pub fn run_three_stage<T: Scalar>(
    train: &FeatureSet<T>,
    test: &FeatureSet<T>,
    cfg: &PipelineConfig,
) -> Result<RunOutput<T>> {
    cfg.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyInput("training or test set"));
    }
    if test.dim() != train.dim() {
        return Err(Error::DimensionMismatch { expected: train.dim(), found: test.dim() });
    }
    let counts = train.class_counts();
    let classes = counts.len().max(test.num_classes());
    let fur_needed = cfg.train.m2 > 0 || cfg.train.fourth_phase;
    let (head, tail) = match cfg.split.split(&counts) {
        Ok(ht) => ht,
        Err(e) if fur_needed => return Err(e),
        Err(_) => (vec![], vec![]),
    };
    let groups = AccuracyGroups::from_counts(&counts, cfg.group_factor);
    let test_x = test.to_matrix()?;
    let seed = cfg.train.seed;

    let model_cfg = ModelConfig {
        input_dim: train.dim(),
        hidden: cfg.network.hidden.clone(),
        feature_dim: cfg.network.feature_dim,
        classes,
    };
    let mut model: Model<T> = Model::new(&model_cfg, &mut stream(seed, STREAM_INIT))?;
    let mut opt = Sgd::new(cfg.train.momentum)?;
    let mut phases = Vec::new();
    let mut snapshots = Vec::new();
    let train_x = train.to_matrix()?;

    // Phase 1: both groups on the long-tailed data.
    model.set_frozen(FrozenGroups::NONE);
    let curve = minibatch_epochs(
        &mut model,
        &mut opt,
        train,
        cfg.train.m1,
        cfg.train.lr1,
        cfg.train.lr_decay,
        cfg.train.batch_size,
        &mut stream(seed, STREAM_PHASE1),
    )?;
    phases.push(PhaseReport {
        name: "phase1".into(),
        epochs: cfg.train.m1,
        base_lr: cfg.train.lr1,
        loss_curve: curve,
        evaluation: evaluate_on(&model, &test_x, test, &groups, &head, &tail)?,
    });
    snapshots.push(("phase1".to_string(), model.params()));

    let mut similarity_table = None;
    let mut matched_head = BTreeMap::new();
    let mut fur_rng = stream(cfg.fur.seed, STREAM_FUR);

    // Phase 2: classifier on FUR-balanced batches, feature network frozen.
    if cfg.train.m2 > 0 {
        let embedded = train.with_features(model.embed(&train_x)?)?;
        let (table, donors) = head_donors(&model, &embedded, &head, &tail, cfg)?;
        matched_head = donors.matching.clone();
        similarity_table = Some(table);
        opt.reset();
        model.set_frozen(FrozenGroups::FEATURES);
        let curve = fur_epochs(
            &mut model,
            &mut opt,
            &embedded,
            &head,
            &tail,
            &donors,
            cfg,
            cfg.train.m2,
            cfg.train.lr2,
            &mut fur_rng,
        )?;
        phases.push(PhaseReport {
            name: "phase2".into(),
            epochs: cfg.train.m2,
            base_lr: cfg.train.lr2,
            loss_curve: curve,
            evaluation: evaluate_on(&model, &test_x, test, &groups, &head, &tail)?,
        });
        snapshots.push(("phase2".to_string(), model.params()));
    }

    // Phase 3: feature network on the long-tailed data, classifier frozen.
    let mut shift = None;
    if cfg.train.m3 > 0 {
        let before = train.with_features(model.embed(&train_x)?)?;
        opt.reset();
        model.set_frozen(FrozenGroups::CLASSIFIER);
        let curve = minibatch_epochs(
            &mut model,
            &mut opt,
            train,
            cfg.train.m3,
            cfg.train.lr3,
            cfg.train.finetune_lr_decay,
            cfg.train.batch_size,
            &mut stream(seed, STREAM_PHASE3),
        )?;
        phases.push(PhaseReport {
            name: "phase3".into(),
            epochs: cfg.train.m3,
            base_lr: cfg.train.lr3,
            loss_curve: curve,
            evaluation: evaluate_on(&model, &test_x, test, &groups, &head, &tail)?,
        });
        snapshots.push(("phase3".to_string(), model.params()));
        if !tail.is_empty() {
            let after = train.with_features(model.embed(&train_x)?)?;
            shift = Some(tail_shift(&before, &after, &tail, cfg)?);
        }
    }

    // Optional phase 4: re-match on the new features and retune the classifier.
    let mut rematched = None;
    if cfg.train.fourth_phase {
        let embedded = train.with_features(model.embed(&train_x)?)?;
        let (_, donors) = head_donors(&model, &embedded, &head, &tail, cfg)?;
        rematched = Some(donors.matching.clone());
        opt.reset();
        model.set_frozen(FrozenGroups::FEATURES);
        let mut rng4 = stream(cfg.fur.seed, STREAM_PHASE4);
        let curve = fur_epochs(
            &mut model,
            &mut opt,
            &embedded,
            &head,
            &tail,
            &donors,
            cfg,
            cfg.train.m3,
            cfg.train.lr3,
            &mut rng4,
        )?;
        phases.push(PhaseReport {
            name: "phase4".into(),
            epochs: cfg.train.m3,
            base_lr: cfg.train.lr3,
            loss_curve: curve,
            evaluation: evaluate_on(&model, &test_x, test, &groups, &head, &tail)?,
        });
        snapshots.push(("phase4".to_string(), model.params()));
    }
    model.set_frozen(FrozenGroups::NONE);

    let embedded = train.with_features(model.embed(&train_x)?)?;
    let geometry = diagnostics(&embedded, cfg.top_p, cfg.centered_geometry)?;
    let final_evaluation = phases.last().expect("phase 1 always runs").evaluation.clone();
    let report = RunReport {
        config: cfg.clone(),
        class_counts: counts,
        head_classes: head,
        tail_classes: tail,
        groups,
        phases,
        final_evaluation,
        similarity_table,
        matched_head,
        rematched_head: rematched,
        geometry,
        tail_shift: shift,
    };
    Ok(RunOutput { report, model, snapshots })
}

/// Spectral concentration of class features against the isotropic value `k/P`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralCheck {
    pub k: usize,
    pub ratios: BTreeMap<u32, f64>,
    pub mean_ratio: f64,
    /// `k / P`, the ratio of a flat spectrum.
    pub isotropic_control: f64,
    /// Every class exceeds the isotropic control.
    pub above_control: bool,
    /// Every class carries at least 80% of its spectral mass in the top `k`.
    pub above_eighty_percent: bool,
}

pub fn spectral_check<T: Scalar>(features: &FeatureSet<T>, k: usize, centered: bool) -> Result<SpectralCheck> {
    let mut ratios = BTreeMap::new();
    for g in class_geometries(features, centered)? {
        ratios.insert(g.class_id(), top_k_eigenvalue_ratio(&g, k)?.to_f64_lossless());
    }
    if ratios.is_empty() {
        return Err(Error::EmptyInput("feature set"));
    }
    let control = k as f64 / features.dim() as f64;
    let mean_ratio = ratios.values().sum::<f64>() / ratios.len() as f64;
    Ok(SpectralCheck {
        k,
        above_control: ratios.values().all(|&r| r > control + 1e-12),
        above_eighty_percent: ratios.values().all(|&r| r >= 0.8),
        ratios,
        mean_ratio,
        isotropic_control: control,
    })
}

/// Agreement between "which classes the model confuses with c" and "which
/// classes share c's geometry".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCheck {
    /// Spearman correlation per class between averaged scores and geometry
    /// similarity over the other classes.
    pub per_class: BTreeMap<u32, f64>,
    pub mean_correlation: f64,
    pub positive: bool,
}

pub fn similarity_rank_check<T: Scalar>(
    features: &FeatureSet<T>,
    table: &ClassSimilarityTable,
    top_p: usize,
    centered: bool,
) -> Result<RankCheck> {
    let geoms = class_geometries(features, centered)?;
    let by_class: BTreeMap<u32, &GeometryBasis<T>> = geoms.iter().map(|g| (g.class_id(), g)).collect();
    let mut per_class = BTreeMap::new();
    for (&c, g) in &by_class {
        let mut scores = Vec::new();
        let mut sims = Vec::new();
        for &(k, s) in table.ranking(c)? {
            if let Some(gk) = by_class.get(&k) {
                scores.push(s);
                sims.push(geometry_similarity(g, gk, top_p)?.to_f64_lossless());
            }
        }
        if let Some(r) = spearman(&scores, &sims) {
            per_class.insert(c, r);
        }
    }
    let mean_correlation = per_class.values().sum::<f64>() / per_class.len().max(1) as f64;
    Ok(RankCheck { positive: !per_class.is_empty() && mean_correlation > 0.0, per_class, mean_correlation })
}

/// Same-class geometry similarity across independently trained models versus
/// random orthonormal bases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossModelCheck {
    pub top_p: usize,
    /// `(model i, model j, class) -> S`.
    pub pairs: Vec<(usize, usize, u32, f64)>,
    pub mean_similarity: f64,
    pub baseline_mean: f64,
    pub baseline_std: f64,
    /// `(mean_similarity − baseline_mean) / baseline_std`.
    pub z_score: f64,
    pub within_two_sigma: bool,
}

/// `embeddings[m]` holds the same samples embedded by model `m`.
pub fn cross_model_check<T: Scalar, R: Rng + ?Sized>(
    embeddings: &[FeatureSet<T>],
    top_p: usize,
    centered: bool,
    baseline_trials: usize,
    rng: &mut R,
) -> Result<CrossModelCheck> {
    if embeddings.len() < 2 {
        return Err(Error::InsufficientModels(embeddings.len()));
    }
    let geoms: Vec<Vec<GeometryBasis<T>>> =
        embeddings.iter().map(|e| class_geometries(e, centered)).collect::<Result<_>>()?;
    let mut pairs = Vec::new();
    for i in 0..geoms.len() {
        for j in i + 1..geoms.len() {
            for a in &geoms[i] {
                if let Some(b) = geoms[j].iter().find(|b| b.class_id() == a.class_id()) {
                    pairs.push((i, j, a.class_id(), geometry_similarity(a, b, top_p)?.to_f64_lossless()));
                }
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyInput("shared classes across models"));
    }
    let mean_similarity = pairs.iter().map(|p| p.3).sum::<f64>() / pairs.len() as f64;
    let baseline = random_basis_similarity(embeddings[0].dim(), top_p, baseline_trials, rng)?;
    let z = if baseline.std_dev > 0.0 { baseline.z_score(mean_similarity) } else { 0.0 };
    Ok(CrossModelCheck {
        top_p,
        pairs,
        mean_similarity,
        baseline_mean: baseline.mean,
        baseline_std: baseline.std_dev,
        z_score: z,
        within_two_sigma: z.abs() <= 2.0,
    })
}

/// Whether tail classes look most like head classes, and whether the ranking
/// survives rebalancing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSimilarityCheck {
    pub most_similar: BTreeMap<u32, u32>,
    pub fraction_head: f64,
    /// Mean Spearman correlation between each class's row in the long-tailed
    /// table and in the balanced table.
    pub balanced_rank_agreement: Option<f64>,
}

pub fn head_similarity_check(
    table: &ClassSimilarityTable,
    head: &[u32],
    tail: &[u32],
    balanced: Option<&ClassSimilarityTable>,
) -> Result<HeadSimilarityCheck> {
    let mut most_similar = BTreeMap::new();
    for &t in tail {
        if let Some(k) = table.most_similar(t)? {
            most_similar.insert(t, k);
        }
    }
    let hits = most_similar.values().filter(|k| head.contains(k)).count();
    let fraction_head = hits as f64 / most_similar.len().max(1) as f64;
    let balanced_rank_agreement = match balanced {
        None => None,
        Some(b) => {
            let mut rs = Vec::new();
            for c in 0..table.num_classes().min(b.num_classes()) as u32 {
                let lt: BTreeMap<u32, f64> = table.ranking(c)?.iter().copied().collect();
                let bal: BTreeMap<u32, f64> = b.ranking(c)?.iter().copied().collect();
                let keys: Vec<u32> = lt.keys().filter(|k| bal.contains_key(k)).copied().collect();
                let x: Vec<f64> = keys.iter().map(|k| lt[k]).collect();
                let y: Vec<f64> = keys.iter().map(|k| bal[k]).collect();
                if let Some(r) = spearman(&x, &y) {
                    rs.push(r);
                }
            }
            (!rs.is_empty()).then(|| rs.iter().sum::<f64>() / rs.len() as f64)
        }
    };
    Ok(HeadSimilarityCheck { most_similar, fraction_head, balanced_rank_agreement })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhenomenaConfig {
    pub top_k: usize,
    pub top_p: usize,
    pub centered: bool,
    pub score_mode: ScoreMode,
    pub split: HeadTailSplit,
    pub baseline_trials: usize,
    pub seed: u64,
}

impl Default for PhenomenaConfig {
    fn default() -> Self {
        PhenomenaConfig {
            top_k: 5,
            top_p: DEFAULT_TOP_P,
            centered: true,
            score_mode: ScoreMode::Probabilities,
            split: HeadTailSplit::default(),
            baseline_trials: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhenomenaReport {
    pub spectral: SpectralCheck,
    pub rank_correlation: RankCheck,
    /// Absent with fewer than two models.
    pub cross_model: Option<CrossModelCheck>,
    pub cross_model_note: Option<String>,
    pub head_similarity: HeadSimilarityCheck,
}

/// Runs the four checks on models trained on `data`. `balanced` is an optional
/// rebalanced counterpart of `data` for the rank-agreement part of check 4.
pub fn validate_phenomena<T: Scalar>(
    data: &FeatureSet<T>,
    balanced: Option<&FeatureSet<T>>,
    models: &[Model<T>],
    cfg: &PhenomenaConfig,
) -> Result<PhenomenaReport> {
    let first = models.first().ok_or(Error::InsufficientModels(0))?;
    let x = data.to_matrix()?;
    let embed = |m: &Model<T>| -> Result<FeatureSet<T>> { data.with_features(m.embed(&x)?) };
    let features = embed(first)?;
    let table_for = |m: &Model<T>, set: &FeatureSet<T>| -> Result<ClassSimilarityTable> {
        let logits = m.logits_from_features(&m.embed(&set.to_matrix()?)?)?;
        class_similarity_from_logits(&logits, set.labels(), cfg.score_mode)
    };
    let table = table_for(first, data)?;

    let spectral = spectral_check(&features, cfg.top_k, cfg.centered)?;
    let rank_correlation = similarity_rank_check(&features, &table, cfg.top_p, cfg.centered)?;
    let (cross_model, cross_model_note) = if models.len() >= 2 {
        let all: Vec<FeatureSet<T>> = models.iter().map(embed).collect::<Result<_>>()?;
        let mut rng = stream(cfg.seed, 0);
        (Some(cross_model_check(&all, cfg.top_p, cfg.centered, cfg.baseline_trials, &mut rng)?), None)
    } else {
        (None, Some(Error::InsufficientModels(models.len()).to_string()))
    };
    let (head, tail) = cfg.split.split(&data.class_counts())?;
    let balanced_table = balanced.map(|b| table_for(first, b)).transpose()?;
    let head_similarity = head_similarity_check(&table, &head, &tail, balanced_table.as_ref())?;
    Ok(PhenomenaReport { spectral, rank_correlation, cross_model, cross_model_note, head_similarity })
}
