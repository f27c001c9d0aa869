//! Losses, class-balanced pseudo-labels, entropy ranking of target samples,
//! AdamW with its schedules, and the two-round self-training procedure.

mod entropy;
mod gate;
mod loss;
mod optim;
mod pseudo;
mod trainer;

pub use entropy::{entropy_aggregate, entropy_map, median, sample_uncertainty};
pub use gate::{combined_step_loss, SigmaGate, SigmaMode};
pub use loss::{cross_entropy, cross_entropy_sum, softmax};
pub use optim::{optimizer_step, AdamWConfig, LrSchedule, OptimizerState};
pub use pseudo::{acceptance, class_thresholds, generate_pseudolabels, proportion_count, Acceptance, ProbMap};
pub use trainer::{
    batch_loss_grads, evaluate, predict_labels, predict_probs, prepare_sample, pretrain, round_pseudo_labels, run_conda,
    CondaOutcome, EpochLog, MixingMode, NoopObserver, Phase, PseudoLabelConfig, PseudoLabelSet, RoundPlan, RoundReport,
    SelfTrainConfig, TrainObserver, ROUNDS,
};
