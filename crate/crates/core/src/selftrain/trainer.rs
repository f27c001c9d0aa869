use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::entropy::{entropy_aggregate, sample_uncertainty};
use super::gate::{SigmaGate, SigmaMode};
use super::loss::{cross_entropy_sum, softmax};
use super::optim::{optimizer_step, AdamWConfig, LrSchedule, OptimizerState};
use super::pseudo::{acceptance, check_proportion, class_thresholds, generate_pseudolabels, Acceptance, ProbMap};
use crate::concat::{concatenate, ConcatTemplate};
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::network::{encode_input, Backbone, Real, Tensor};
use crate::pointcloud::{
    augment_cloud, backproject_labels, project_to_rv, AugmentConfig, ClassId, LabelMap, PointCloud, Projection,
    RangeImage, RvSample, EMPTY,
};
use crate::synth::{scene_seed, Dataset};

pub const ROUNDS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PseudoLabelConfig {
    /// Class-threshold proportion per round.
    pub k: [f64; ROUNDS],
    /// Fraction of target samples kept by the round-1 entropy ranking.
    pub varpi: f64,
    /// Probability of using the intermediate domain on a step.
    pub sigma: f64,
    pub sigma_mode: SigmaMode,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        PseudoLabelConfig {
            k: [0.25, 0.5],
            varpi: 0.5,
            sigma: 0.25,
            sigma_mode: SigmaMode::Gate,
        }
    }
}

impl PseudoLabelConfig {
    pub fn validate(&self) -> Result<()> {
        for k in self.k {
            check_proportion("k", k)?;
        }
        check_proportion("ϖ", self.varpi)?;
        SigmaGate::new(self.sigma, self.sigma_mode)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoundPlan {
    pub rounds: usize,
    pub pretrain_epochs: usize,
    pub round_epochs: [usize; ROUNDS],
    pub source_batch: usize,
    pub target_batch: usize,
    pub pretrain_lr: f64,
    pub selftrain_lr: f64,
    /// Self-training lr is multiplied by `step_gamma` after this fraction of a round.
    pub step_fraction: f64,
    pub step_gamma: f64,
    pub optimizer: AdamWConfig,
    pub augment: AugmentConfig,
}

impl Default for RoundPlan {
    fn default() -> Self {
        RoundPlan {
            rounds: ROUNDS,
            pretrain_epochs: 20,
            round_epochs: [20, 20],
            source_batch: 4,
            target_batch: 4,
            pretrain_lr: 1e-3,
            selftrain_lr: 1e-4,
            step_fraction: 0.7,
            step_gamma: 0.1,
            optimizer: AdamWConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

impl RoundPlan {
    pub fn validate(&self) -> Result<()> {
        if self.rounds != ROUNDS {
            return Err(Error::Config(format!("the procedure has exactly {ROUNDS} rounds, got {}", self.rounds)));
        }
        if self.source_batch == 0 || self.target_batch == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if !(self.pretrain_lr > 0.0 && self.selftrain_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.step_fraction > 0.0 && self.step_fraction <= 1.0) || !(self.step_gamma > 0.0) {
            return Err(Error::Config("step decay needs fraction in (0, 1] and gamma > 0".into()));
        }
        self.optimizer.validate()?;
        self.augment.validate()
    }
}

/// Where target pseudo-labels enter the loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixingMode {
    /// Concatenated source/target samples, gated by σ.
    Concat(ConcatTemplate),
    /// Plain pseudo-labeled target batches added every step; σ is unused.
    Separate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainConfig {
    pub pseudo: PseudoLabelConfig,
    pub mixing: MixingMode,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Round(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub phase: Phase,
    pub epoch: usize,
    pub steps: usize,
    /// Mean over steps of the realized combined loss.
    pub loss: f64,
    pub source_loss: f64,
    /// Mean target-side loss over steps where it was computed.
    pub target_loss: Option<f64>,
    pub target_steps: usize,
    pub lr: f64,
}

/// Pseudo-labels of one round, in range-view form.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    pub round: usize,
    pub k: f64,
    /// Target ids in ranking order (round 1) or id order (round 2).
    pub retained: Vec<usize>,
    pub labels: Vec<LabelMap>,
    /// `+inf` for classes that were never predicted.
    pub thresholds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    pub retained: Vec<usize>,
    /// Median entropy per target sample; empty in rounds without ranking.
    pub uncertainty: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub acceptance: Acceptance,
    pub epochs: Vec<EpochLog>,
}

pub struct CondaOutcome<T> {
    pub weights: Backbone<T>,
    pub reports: Vec<RoundReport>,
}

/// Hooks for logging, checkpoints and per-epoch evaluation.
pub trait TrainObserver<T: Real> {
    fn on_epoch(&mut self, _log: &EpochLog, _net: &Backbone<T>) -> Result<()> {
        Ok(())
    }

    fn on_pseudo_labels(&mut self, _set: &PseudoLabelSet) -> Result<()> {
        Ok(())
    }
}

pub struct NoopObserver;

impl<T: Real> TrainObserver<T> for NoopObserver {}

/// Augment, project and grid the labels of one labeled cloud.
pub fn prepare_sample(cloud: &PointCloud, projection: Projection, augment: &AugmentConfig, seed: u64) -> Result<RvSample> {
    let cloud = augment_cloud(cloud, seed, augment)?;
    let (image, labels) = project_to_rv(&cloud, projection)?;
    let labels = labels.ok_or_else(|| Error::InvalidInput("training cloud carries no labels".into()))?;
    RvSample::new(image, labels)
}

/// Mean cross-entropy over all labeled pixels of the batch and its gradient.
/// Per-sample work runs in parallel; the reduction order is fixed.
pub fn batch_loss_grads<T: Real>(net: &Backbone<T>, batch: &[RvSample]) -> Result<(f64, Vec<Tensor<T>>)> {
    let zero = || net.params().iter().map(|p| Tensor::zeros(p.shape())).collect::<Vec<_>>();
    let n: usize = batch.iter().map(|s| s.labels.labeled_count()).sum();
    if n == 0 {
        log::warn!("batch of {} samples has no labeled pixels", batch.len());
        return Ok((0.0, zero()));
    }
    let scale = 1.0 / n as f64;
    let norm = &net.config().input_norm;
    let parts = batch
        .par_iter()
        .map(|s| {
            let (logits, tape) = net.forward(&encode_input(&s.image, norm))?;
            let (sum, g, _) = cross_entropy_sum(&logits, &s.labels, scale)?;
            Ok((sum, net.backward(&tape, &g)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    let mut grads = zero();
    for (sum, g) in parts {
        total += sum;
        for (acc, gi) in grads.iter_mut().zip(&g) {
            acc.add_assign(gi);
        }
    }
    Ok((total * scale, grads))
}

/// Softmax map of one range image.
pub fn predict_probs<T: Real>(net: &Backbone<T>, image: &RangeImage) -> Result<ProbMap> {
    let logits = net.infer(&encode_input(image, &net.config().input_norm))?;
    let &[c, h, w] = logits.shape() else { unreachable!("head output is rank 3") };
    let occupied = image.point_index().iter().map(|&i| i != EMPTY).collect();
    ProbMap::new(c, h, w, softmax(&logits), occupied)
}

/// Per-pixel argmax (lowest class on ties) over every pixel.
pub fn predict_labels<T: Real>(net: &Backbone<T>, image: &RangeImage) -> Result<LabelMap> {
    let logits = net.infer(&encode_input(image, &net.config().input_norm))?;
    let &[c, h, w] = logits.shape() else { unreachable!("head output is rank 3") };
    let z = logits.data();
    let hw = h * w;
    let data = (0..hw)
        .map(|i| {
            let mut best = 0;
            for k in 1..c {
                if z[k * hw + i] > z[best * hw + i] {
                    best = k;
                }
            }
            best as ClassId
        })
        .collect();
    LabelMap::from_vec(h, w, data)
}

/// Point-level confusion matrix: every point takes the prediction of the
/// pixel it projects to.
pub fn evaluate<T: Real>(net: &Backbone<T>, set: &Dataset, projection: Projection) -> Result<ConfusionMatrix> {
    let classes = net.config().num_classes;
    let parts = set
        .clouds()
        .par_iter()
        .enumerate()
        .map(|(i, _)| {
            let cloud = set.evaluation_cloud(i);
            let truth = cloud
                .labels()
                .ok_or_else(|| Error::InvalidInput(format!("evaluation cloud {i} has no labels")))?;
            let (image, _) = project_to_rv(cloud, projection)?;
            let pred = backproject_labels(&predict_labels(net, &image)?, &image, cloud)?;
            let mut cm = ConfusionMatrix::new(classes);
            cm.accumulate(truth, &pred)?;
            Ok(cm)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cm = ConfusionMatrix::new(classes);
    for p in &parts {
        cm.merge(p)?;
    }
    Ok(cm)
}

fn check_training_set(set: &Dataset, what: &str) -> Result<()> {
    if set.is_empty() {
        return Err(Error::InvalidInput(format!("{what} set is empty")));
    }
    set.training_cloud(0).map(|_| ())
}

fn apply_step<T: Real>(
    net: &mut Backbone<T>,
    state: &mut OptimizerState,
    grads: &[Tensor<T>],
    lr: f64,
) -> Result<()> {
    let kinds: Vec<_> = net.param_layout().into_iter().map(|(_, k)| k).collect();
    let mut params = net.params_mut();
    optimizer_step(&mut params, grads, &kinds, state, lr)
}

fn epoch_order(len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut v: Vec<usize> = (0..len).collect();
    v.shuffle(rng);
    v
}

/// Source-only training with a one-cycle schedule.
pub fn pretrain<T: Real>(
    net: &mut Backbone<T>,
    source: &Dataset,
    projection: Projection,
    plan: &RoundPlan,
    seed: u64,
    observer: &mut dyn TrainObserver<T>,
) -> Result<Vec<EpochLog>> {
    plan.validate()?;
    check_training_set(source, "source")?;
    let steps_per_epoch = source.len().div_ceil(plan.source_batch);
    let schedule = LrSchedule::one_cycle(plan.pretrain_lr, plan.pretrain_epochs * steps_per_epoch);
    let mut state = OptimizerState::new(plan.optimizer, &net.params())?;
    let mut rng = ChaCha8Rng::seed_from_u64(scene_seed(seed, 10, 0));
    let mut logs = Vec::new();
    let mut step = 0;
    for epoch in 0..plan.pretrain_epochs {
        let order = epoch_order(source.len(), &mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(plan.source_batch) {
            let batch = chunk
                .iter()
                .map(|&i| {
                    let aug = scene_seed(seed, 11 + epoch as u64, i as u64);
                    prepare_sample(source.training_cloud(i)?, projection, &plan.augment, aug)
                })
                .collect::<Result<Vec<_>>>()?;
            let (loss, grads) = batch_loss_grads(net, &batch)?;
            apply_step(net, &mut state, &grads, schedule.lr_at(step))?;
            loss_sum += loss;
            step += 1;
        }
        let log = EpochLog {
            phase: Phase::Pretrain,
            epoch,
            steps: steps_per_epoch,
            loss: loss_sum / steps_per_epoch as f64,
            source_loss: loss_sum / steps_per_epoch as f64,
            target_loss: None,
            target_steps: 0,
            lr: schedule.lr_at(step.saturating_sub(1)),
        };
        log::info!("pretrain epoch {epoch}: loss {:.4}", log.loss);
        observer.on_epoch(&log, net)?;
        logs.push(log);
    }
    Ok(logs)
}

/// Pseudo-labels for `round` from the current weights. Round 1 keeps the
/// `ϖ` least uncertain targets; round 2 labels every target.
pub fn round_pseudo_labels<T: Real>(
    net: &Backbone<T>,
    images: &[RangeImage],
    round: usize,
    cfg: &PseudoLabelConfig,
) -> Result<(PseudoLabelSet, Vec<f64>, Acceptance)> {
    if !(1..=ROUNDS).contains(&round) {
        return Err(Error::InvalidInput(format!("round {round} outside 1..={ROUNDS}")));
    }
    let classes = net.config().num_classes;
    let probs = images.par_iter().map(|im| predict_probs(net, im)).collect::<Result<Vec<_>>>()?;
    let (retained, uncertainty) = if round == 1 {
        let u = probs.par_iter().map(sample_uncertainty).collect::<Result<Vec<_>>>()?;
        (entropy_aggregate(&u, cfg.varpi)?, u)
    } else {
        ((0..probs.len()).collect(), Vec::new())
    };
    let k = cfg.k[round - 1];
    let thresholds = class_thresholds(retained.iter().map(|&t| &probs[t]), classes, k)?;
    let labels = retained
        .iter()
        .map(|&t| generate_pseudolabels(&probs[t], &thresholds))
        .collect::<Result<Vec<_>>>()?;
    let acc = acceptance(retained.iter().map(|&t| &probs[t]), &labels, classes);
    Ok((
        PseudoLabelSet {
            round,
            k,
            retained,
            labels,
            thresholds,
        },
        uncertainty,
        acc,
    ))
}

/// The two-round self-training procedure starting from `w_pre`. Target
/// labels are never read: targets enter only through `unlabeled_cloud`.
pub fn run_conda<T: Real>(
    w_pre: &Backbone<T>,
    source: &Dataset,
    target: &Dataset,
    projection: Projection,
    plan: &RoundPlan,
    cfg: &SelfTrainConfig,
    observer: &mut dyn TrainObserver<T>,
) -> Result<CondaOutcome<T>> {
    plan.validate()?;
    cfg.pseudo.validate()?;
    check_training_set(source, "source")?;
    if target.is_empty() {
        return Err(Error::InvalidInput("target set is empty".into()));
    }
    if let MixingMode::Concat(t) = &cfg.mixing {
        t.check_fits(projection.h, projection.w)?;
    }
    let gate = SigmaGate::new(cfg.pseudo.sigma, cfg.pseudo.sigma_mode)?;
    let clouds: Vec<PointCloud> = (0..target.len()).map(|i| target.unlabeled_cloud(i)).collect();
    let images = clouds
        .par_iter()
        .map(|c| project_to_rv(c, projection).map(|(im, _)| im))
        .collect::<Result<Vec<_>>>()?;

    let mut net = w_pre.clone();
    let mut reports = Vec::new();
    for round in 1..=ROUNDS {
        let epochs = plan.round_epochs[round - 1];
        if epochs == 0 {
            continue;
        }
        let (set, uncertainty, acc) = round_pseudo_labels(&net, &images, round, &cfg.pseudo)?;
        log::info!(
            "round {round}: {} targets, thresholds {:?}",
            set.retained.len(),
            set.thresholds
        );
        observer.on_pseudo_labels(&set)?;
        let pseudo_clouds = set
            .retained
            .iter()
            .zip(&set.labels)
            .map(|(&t, lm)| clouds[t].relabeled(backproject_labels(lm, &images[t], &clouds[t])?))
            .collect::<Result<Vec<_>>>()?;
        let epoch_logs = train_round(&mut net, source, &pseudo_clouds, projection, plan, cfg, &gate, round, observer)?;
        reports.push(RoundReport {
            round,
            retained: set.retained,
            uncertainty,
            thresholds: set.thresholds,
            acceptance: acc,
            epochs: epoch_logs,
        });
    }
    Ok(CondaOutcome { weights: net, reports })
}

#[allow(clippy::too_many_arguments)]
fn train_round<T: Real>(
    net: &mut Backbone<T>,
    source: &Dataset,
    pseudo: &[PointCloud],
    projection: Projection,
    plan: &RoundPlan,
    cfg: &SelfTrainConfig,
    gate: &SigmaGate,
    round: usize,
    observer: &mut dyn TrainObserver<T>,
) -> Result<Vec<EpochLog>> {
    let epochs = plan.round_epochs[round - 1];
    let steps_per_epoch = source.len().div_ceil(plan.source_batch);
    let schedule = LrSchedule::step_at_fraction(plan.selftrain_lr, epochs * steps_per_epoch, plan.step_fraction, plan.step_gamma);
    let mut state = OptimizerState::new(plan.optimizer, &net.params())?;
    let seed = cfg.seed;
    let stream = 100 * round as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(scene_seed(seed, stream, 0));
    let mut target_order = epoch_order(pseudo.len(), &mut rng);
    let mut target_pos = 0;
    let mut target_epoch = 0u64;
    let mut logs = Vec::new();
    let mut step = 0;
    for epoch in 0..epochs {
        let order = epoch_order(source.len(), &mut rng);
        let (mut loss_sum, mut src_sum, mut tgt_sum, mut tgt_steps) = (0.0, 0.0, 0.0, 0);
        for chunk in order.chunks(plan.source_batch) {
            let weight = match cfg.mixing {
                MixingMode::Concat(_) => gate.draw(&mut rng),
                MixingMode::Separate => 1.0,
            };
            let mix_seed: u64 = rng.random();
            let aug_stream = stream + 1 + epoch as u64;
            let src = chunk
                .iter()
                .map(|&i| {
                    prepare_sample(source.training_cloud(i)?, projection, &plan.augment, scene_seed(seed, aug_stream, i as u64))
                })
                .collect::<Result<Vec<_>>>()?;
            let (ls, mut grads) = batch_loss_grads(net, &src)?;
            let mut loss = ls;
            if weight > 0.0 {
                let mut tgt = Vec::with_capacity(plan.target_batch);
                for _ in 0..plan.target_batch {
                    if target_pos == target_order.len() {
                        target_order = epoch_order(pseudo.len(), &mut rng);
                        target_pos = 0;
                        target_epoch += 1;
                    }
                    let t = target_order[target_pos];
                    target_pos += 1;
                    let aug = scene_seed(seed, stream + 50 + target_epoch, t as u64);
                    tgt.push(prepare_sample(&pseudo[t], projection, &plan.augment, aug)?);
                }
                let batch = match &cfg.mixing {
                    MixingMode::Concat(template) => concatenate(&src, &tgt, template, mix_seed)?,
                    MixingMode::Separate => tgt,
                };
                let (lt, gt) = batch_loss_grads(net, &batch)?;
                let w = T::cast(weight);
                for (g, t) in grads.iter_mut().zip(&gt) {
                    for (a, &b) in g.data_mut().iter_mut().zip(t.data()) {
                        *a += w * b;
                    }
                }
                loss += weight * lt;
                tgt_sum += lt;
                tgt_steps += 1;
            }
            apply_step(net, &mut state, &grads, schedule.lr_at(step))?;
            loss_sum += loss;
            src_sum += ls;
            step += 1;
        }
        let n = steps_per_epoch as f64;
        let log = EpochLog {
            phase: Phase::Round(round),
            epoch,
            steps: steps_per_epoch,
            loss: loss_sum / n,
            source_loss: src_sum / n,
            target_loss: (tgt_steps > 0).then(|| tgt_sum / tgt_steps as f64),
            target_steps: tgt_steps,
            lr: schedule.lr_at(step.saturating_sub(1)),
        };
        log::info!("round {round} epoch {epoch}: loss {:.4}", log.loss);
        observer.on_epoch(&log, net)?;
        logs.push(log);
    }
    Ok(logs)
}
