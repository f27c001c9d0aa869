use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{MixingChoice, Precision, RunConfig, TemplateChoice};
use super::data::{load_domains, write_domains, Domains, Manifest};
use super::render::{render_correctness, render_labels};
use crate::concat::concatenate;
use crate::error::{Error, Result};
use crate::metrics::Scores;
use crate::network::checkpoint::{encode_checkpoint, read_checkpoint, write_checkpoint};
use crate::network::{Backbone, Real};
use crate::pointcloud::io::{read_cloud, write_label_map, write_range_image};
use crate::pointcloud::{occupancy_stats, project_to_rv, LabelMap, OccupancyStats, RvSample, IGNORE};
use crate::selftrain::{
    evaluate, predict_labels, prepare_sample, pretrain, run_conda, EpochLog, Phase, PseudoLabelSet, RoundReport,
    TrainObserver,
};
use crate::synth::{Dataset, CLASS_NAMES};

pub const CONFIG_ECHO: &str = "config.json";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Create the run directory and echo the resolved config into it.
pub fn open_run_dir(cfg: &RunConfig, out: &Path) -> Result<()> {
    create_dir(out)?;
    write_text(&out.join(CONFIG_ECHO), &cfg.to_json())
}

fn class_name(c: usize) -> String {
    CLASS_NAMES.get(c).map_or_else(|| format!("class{c}"), |s| s.to_string())
}

/// Header of the metrics CSV for `classes` classes.
pub fn csv_header(classes: usize) -> String {
    let mut cols = vec!["epoch".to_string(), "phase".into(), "split".into()];
    cols.extend((0..classes).map(|c| format!("iou_{}", class_name(c))));
    cols.extend(["miou".into(), "fiou".into(), "loss".into()]);
    cols.join(",")
}

fn phase_name(p: Phase) -> String {
    match p {
        Phase::Pretrain => "pretrain".into(),
        Phase::Round(r) => format!("round{r}"),
    }
}

/// One CSV row; an IoU excluded from the mean is left empty.
pub fn csv_row(epoch: &str, phase: &str, split: &str, scores: &Scores, loss: Option<f64>) -> String {
    let mut cols = vec![epoch.to_string(), phase.to_string(), split.to_string()];
    cols.extend(scores.iou.iter().map(|v| v.map_or(String::new(), |x| x.to_string())));
    cols.push(scores.miou.to_string());
    cols.push(scores.fiou.to_string());
    cols.push(loss.map_or(String::new(), |l| l.to_string()));
    cols.join(",")
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn score_net<T: Real>(net: &Backbone<T>, set: &Dataset, cfg: &RunConfig) -> Result<Scores> {
    let mut folded = net.clone();
    folded.fold()?;
    evaluate(&folded, set, cfg.projection()?)?.scores()
}

/// Writes one CSV row per epoch scored on the held-out target set, pseudo-label
/// caches per round, and the round-1 checkpoint.
struct RunObserver<'a> {
    cfg: &'a RunConfig,
    eval: &'a Dataset,
    csv: PathBuf,
    out: PathBuf,
    weights_digest: String,
}

impl<T: Real> TrainObserver<T> for RunObserver<'_> {
    fn on_epoch(&mut self, log: &EpochLog, net: &Backbone<T>) -> Result<()> {
        let scores = score_net(net, self.eval, self.cfg)?;
        append_line(
            &self.csv,
            &csv_row(&log.epoch.to_string(), &phase_name(log.phase), "target_val", &scores, Some(log.loss)),
        )?;
        if let Phase::Round(1) = log.phase {
            if log.epoch + 1 == self.cfg.train.round_epochs[0] {
                write_checkpoint(&self.out.join("w_r1.ckpt"), net)?;
            }
        }
        Ok(())
    }

    fn on_pseudo_labels(&mut self, set: &PseudoLabelSet) -> Result<()> {
        let dir = self.out.join(format!("round{}", set.round));
        let labels_dir = dir.join("pseudo");
        create_dir(&labels_dir)?;
        for (&t, lm) in set.retained.iter().zip(&set.labels) {
            write_label_map(&labels_dir.join(format!("{t:05}.lbl")), lm)?;
        }
        let sidecar = PseudoSidecar {
            round: set.round,
            k: set.k,
            varpi: (set.round == 1).then_some(self.cfg.pseudo.varpi),
            thresholds: set.thresholds.iter().map(|&t| t.is_finite().then_some(t)).collect(),
            retained: set.retained.clone(),
            weights_digest: self.weights_digest.clone(),
        };
        write_text(&dir.join("pseudo.json"), &serde_json::to_string_pretty(&sidecar)?)
    }
}

/// JSON written next to each round's pseudo-label cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoSidecar {
    pub round: usize,
    pub k: f64,
    /// Only round 1 filters by entropy.
    pub varpi: Option<f64>,
    /// `null` marks a class that was never predicted (threshold +inf).
    pub thresholds: Vec<Option<f64>>,
    pub retained: Vec<usize>,
    /// SHA-256 of the checkpoint bytes that produced the labels.
    pub weights_digest: String,
}

pub fn cmd_synth_gen(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    open_run_dir(cfg, out)?;
    let domains = super::data::generate_domains(cfg)?;
    write_domains(out, &domains, cfg.seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectSummary {
    pub points: usize,
    pub occupied: usize,
    pub files: Vec<PathBuf>,
}

/// Project one PCRV cloud with the configured sensor; writes the range image,
/// the label grid when the cloud is labeled, and a PPM preview.
pub fn cmd_project(cfg: &RunConfig, input: &Path, out: &Path) -> Result<ProjectSummary> {
    create_dir(out)?;
    let cloud = read_cloud(input)?;
    let (image, labels) = project_to_rv(&cloud, cfg.projection()?)?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("cloud").to_string();
    let mut files = vec![out.join(format!("{stem}.rv"))];
    write_range_image(&files[0], &image)?;
    if let Some(lm) = &labels {
        let p = out.join(format!("{stem}.lbl"));
        write_label_map(&p, lm)?;
        files.push(p);
    }
    let preview = labels.unwrap_or_else(|| LabelMap::filled(image.height(), image.width(), IGNORE));
    let p = out.join(format!("{stem}.ppm"));
    render_labels(&image, &preview).write(&p)?;
    files.push(p);
    Ok(ProjectSummary {
        points: cloud.len(),
        occupied: image.occupied_count(),
        files,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub epochs: Vec<EpochLog>,
    pub target_val: Scores,
}

pub fn cmd_pretrain(cfg: &RunConfig, out: &Path) -> Result<TrainSummary> {
    match cfg.precision {
        Precision::F32 => pretrain_impl::<f32>(cfg, out),
        Precision::F64 => pretrain_impl::<f64>(cfg, out),
    }
}

fn pretrain_impl<T: Real>(cfg: &RunConfig, out: &Path) -> Result<TrainSummary> {
    open_run_dir(cfg, out)?;
    let domains = load_domains(cfg)?;
    let csv = out.join("pretrain.csv");
    write_text(&csv, &format!("{}\n", csv_header(cfg.model.num_classes)))?;
    let mut net = Backbone::<T>::init(&cfg.model, cfg.seed)?;
    let mut obs = RunObserver {
        cfg,
        eval: &domains.target_val,
        csv,
        out: out.to_path_buf(),
        weights_digest: String::new(),
    };
    let epochs = pretrain(&mut net, &domains.source, cfg.projection()?, &cfg.train, cfg.seed, &mut obs)?;
    let checkpoint = out.join("w_r0.ckpt");
    write_checkpoint(&checkpoint, &net)?;
    Ok(TrainSummary {
        checkpoint,
        epochs,
        target_val: score_net(&net, &domains.target_val, cfg)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub retained: Vec<usize>,
    pub uncertainty: Vec<f64>,
    pub thresholds: Vec<Option<f64>>,
    pub accepted: Vec<usize>,
    pub predicted: Vec<usize>,
    pub epochs: Vec<EpochLog>,
}

impl From<RoundReport> for RoundSummary {
    fn from(r: RoundReport) -> Self {
        RoundSummary {
            round: r.round,
            retained: r.retained,
            uncertainty: r.uncertainty,
            thresholds: r.thresholds.iter().map(|&t| t.is_finite().then_some(t)).collect(),
            accepted: r.acceptance.accepted,
            predicted: r.acceptance.predicted,
            epochs: r.epochs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftrainSummary {
    pub checkpoint: PathBuf,
    pub rounds: Vec<RoundSummary>,
    pub target_val: Scores,
}

pub fn cmd_selftrain(cfg: &RunConfig, w_pre: &Path, out: &Path) -> Result<SelftrainSummary> {
    match cfg.precision {
        Precision::F32 => selftrain_impl::<f32>(cfg, w_pre, out, None),
        Precision::F64 => selftrain_impl::<f64>(cfg, w_pre, out, None),
    }
}

fn selftrain_impl<T: Real>(
    cfg: &RunConfig,
    w_pre: &Path,
    out: &Path,
    domains: Option<&Domains>,
) -> Result<SelftrainSummary> {
    open_run_dir(cfg, out)?;
    let owned;
    let domains = match domains {
        Some(d) => d,
        None => {
            owned = load_domains(cfg)?;
            &owned
        }
    };
    let net = read_checkpoint::<T>(w_pre, &cfg.model)?;
    let csv = out.join("selftrain.csv");
    write_text(&csv, &format!("{}\n", csv_header(cfg.model.num_classes)))?;
    let mut obs = RunObserver {
        cfg,
        eval: &domains.target_val,
        csv: csv.clone(),
        out: out.to_path_buf(),
        weights_digest: hex_digest(&encode_checkpoint(&net)),
    };
    let outcome = run_conda(
        &net,
        &domains.source,
        &domains.target,
        cfg.projection()?,
        &cfg.train,
        &cfg.selftrain_config()?,
        &mut obs,
    )?;
    let checkpoint = out.join("w_r2.ckpt");
    write_checkpoint(&checkpoint, &outcome.weights)?;
    let scores = score_net(&outcome.weights, &domains.target_val, cfg)?;
    append_line(&csv, &csv_row("final", "final", "target_val", &scores, None))?;
    let summary = SelftrainSummary {
        checkpoint,
        rounds: outcome.reports.into_iter().map(RoundSummary::from).collect(),
        target_val: scores,
    };
    write_text(&out.join("report.json"), &serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Source,
    Target,
    TargetVal,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Split::Source),
            "target" => Ok(Split::Target),
            "target_val" | "target-val" => Ok(Split::TargetVal),
            _ => Err(Error::UnknownName(format!("split '{s}', expected source, target or target_val"))),
        }
    }
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Source => "source",
            Split::Target => "target",
            Split::TargetVal => "target_val",
        }
    }

    fn pick(self, d: &Domains) -> &Dataset {
        match self {
            Split::Source => &d.source,
            Split::Target => &d.target,
            Split::TargetVal => &d.target_val,
        }
    }
}

/// Score a checkpoint on one split; `overlays` renders correctness maps
/// for the first that many scenes.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, split: Split, out: &Path, overlays: usize) -> Result<Scores> {
    match cfg.precision {
        Precision::F32 => eval_impl::<f32>(cfg, checkpoint, split, out, overlays),
        Precision::F64 => eval_impl::<f64>(cfg, checkpoint, split, out, overlays),
    }
}

fn eval_impl<T: Real>(cfg: &RunConfig, checkpoint: &Path, split: Split, out: &Path, overlays: usize) -> Result<Scores> {
    let mut net = read_checkpoint::<T>(checkpoint, &cfg.model)?;
    open_run_dir(cfg, out)?;
    net.fold()?;
    let domains = load_domains(cfg)?;
    let set = split.pick(&domains);
    let projection = cfg.projection()?;
    let scores = evaluate(&net, set, projection)?.scores()?;
    write_text(
        &out.join("eval.csv"),
        &format!(
            "{}\n{}\n",
            csv_header(cfg.model.num_classes),
            csv_row("eval", "eval", split.name(), &scores, None)
        ),
    )?;
    for i in 0..overlays.min(set.len()) {
        let (image, truth) = project_to_rv(set.evaluation_cloud(i), projection)?;
        let truth = truth.ok_or_else(|| Error::InvalidInput(format!("scene {i} has no labels")))?;
        let pred = predict_labels(&net, &image)?;
        render_correctness(&image, &truth, &pred).write(&out.join(format!("overlay_{i:05}.ppm")))?;
    }
    Ok(scores)
}

/// Hyperparameter swept by [`cmd_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    K,
    Sigma,
    Varpi,
    Template,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k" => Ok(SweepAxis::K),
            "sigma" | "σ" => Ok(SweepAxis::Sigma),
            "varpi" | "ϖ" => Ok(SweepAxis::Varpi),
            "template" => Ok(SweepAxis::Template),
            _ => Err(Error::UnknownName(format!("sweep axis '{s}', expected k, sigma, varpi or template"))),
        }
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Config(format!("'{s}' is not a number")))
}

/// Apply one sweep value. `k` accepts `a` (both rounds) or `a:b` (per round).
pub fn apply_sweep_value(cfg: &RunConfig, axis: SweepAxis, value: &str) -> Result<RunConfig> {
    let mut c = cfg.clone();
    match axis {
        SweepAxis::K => {
            c.pseudo.k = match value.split_once(':') {
                Some((a, b)) => [parse_f64(a)?, parse_f64(b)?],
                None => [parse_f64(value)?; 2],
            }
        }
        SweepAxis::Sigma => c.pseudo.sigma = parse_f64(value)?,
        SweepAxis::Varpi => c.pseudo.varpi = parse_f64(value)?,
        SweepAxis::Template => {
            c.concat.template = TemplateChoice::Named(value.to_string());
            c.concat.mixing = MixingChoice::Concat;
        }
    }
    c.validate()?;
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub scores: Scores,
}

/// One self-training run per value from the same pre-trained weights;
/// writes `sweep.csv` with one row per value.
pub fn cmd_sweep(cfg: &RunConfig, w_pre: &Path, axis: SweepAxis, values: &[String], out: &Path) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|v| apply_sweep_value(cfg, axis, v))
        .collect::<Result<Vec<_>>>()?;
    open_run_dir(cfg, out)?;
    let domains = load_domains(cfg)?;
    let mut rows = Vec::new();
    for (i, (v, c)) in values.iter().zip(&configs).enumerate() {
        let dir = out.join(format!("run{i:02}"));
        let s = match c.precision {
            Precision::F32 => selftrain_impl::<f32>(c, w_pre, &dir, Some(&domains))?,
            Precision::F64 => selftrain_impl::<f64>(c, w_pre, &dir, Some(&domains))?,
        };
        rows.push(SweepRow {
            value: v.clone(),
            scores: s.target_val,
        });
    }
    let classes = cfg.model.num_classes;
    let mut text = format!(
        "axis,value,{},miou,fiou\n",
        (0..classes).map(|c| format!("iou_{}", class_name(c))).collect::<Vec<_>>().join(",")
    );
    let axis_name = serde_json::to_value(axis)?.as_str().unwrap_or_default().to_string();
    for r in &rows {
        let ious: Vec<String> = r.scores.iou.iter().map(|v| v.map_or(String::new(), |x| x.to_string())).collect();
        text.push_str(&format!("{axis_name},{},{},{},{}\n", r.value, ious.join(","), r.scores.miou, r.scores.fiou));
    }
    write_text(&out.join("sweep.csv"), &text)?;
    Ok(rows)
}

/// Render a source batch, an (unlabeled) target batch and their
/// concatenation as PPM images.
pub fn cmd_concat_demo(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    open_run_dir(cfg, out)?;
    let domains = load_domains(cfg)?;
    let projection = cfg.projection()?;
    let template = cfg.concat.template()?;
    let b_s = cfg.train.source_batch.min(domains.source.len());
    let b_t = cfg.train.target_batch.min(domains.target.len());
    let source = (0..b_s)
        .map(|i| prepare_sample(domains.source.training_cloud(i)?, projection, &cfg.train.augment, i as u64))
        .collect::<Result<Vec<_>>>()?;
    let target = (0..b_t)
        .map(|j| {
            let (image, _) = project_to_rv(&domains.target.unlabeled_cloud(j), projection)?;
            let labels = LabelMap::filled(image.height(), image.width(), IGNORE);
            RvSample::new(image, labels)
        })
        .collect::<Result<Vec<_>>>()?;
    let mixed = concatenate(&source, &target, &template, cfg.seed)?;
    let mut files = Vec::new();
    for (prefix, batch) in [("source", &source), ("target", &target), ("mixed", &mixed)] {
        for (i, s) in batch.iter().enumerate() {
            let p = out.join(format!("{prefix}_{i:02}.ppm"));
            render_labels(&s.image, &s.labels).write(&p)?;
            files.push(p);
        }
    }
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetStats {
    pub name: String,
    pub scenes: usize,
    pub mean_points: f64,
    pub mean_empty_fraction: f64,
    /// Label counts per template region, summed over the set (labeled sets only).
    pub region_histograms: Vec<Vec<u64>>,
}

/// Occupancy statistics of the source and target sets.
pub fn cmd_stats(cfg: &RunConfig, out: &Path) -> Result<Vec<SetStats>> {
    open_run_dir(cfg, out)?;
    let domains = load_domains(cfg)?;
    let projection = cfg.projection()?;
    let t = cfg.concat.template()?;
    let classes = cfg.model.num_classes;
    let mut report = Vec::new();
    for (name, set, labeled) in [("source", &domains.source, true), ("target", &domains.target, false)] {
        let mut empty = 0.0;
        let mut points = 0usize;
        let mut hist = vec![vec![0u64; classes]; if labeled { t.regions() } else { 0 }];
        for i in 0..set.len() {
            let cloud = if labeled { set.training_cloud(i)?.clone() } else { set.unlabeled_cloud(i) };
            points += cloud.len();
            let (image, labels) = project_to_rv(&cloud, projection)?;
            let st: OccupancyStats = occupancy_stats(&image, (t.m, t.n), labels.as_ref().map(|l| (l, classes)))?;
            empty += st.empty_fraction;
            for (acc, h) in hist.iter_mut().zip(&st.region_histograms) {
                for (a, b) in acc.iter_mut().zip(h) {
                    *a += b;
                }
            }
        }
        let n = set.len().max(1) as f64;
        report.push(SetStats {
            name: name.into(),
            scenes: set.len(),
            mean_points: points as f64 / n,
            mean_empty_fraction: empty / n,
            region_histograms: hist,
        });
    }
    write_text(&out.join("stats.json"), &serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}
