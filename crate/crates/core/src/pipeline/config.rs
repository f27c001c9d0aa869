use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::concat::{strategy, ConcatTemplate, DEFAULT_STRATEGY};
use crate::error::{Error, Result};
use crate::network::BackboneConfig;
use crate::pointcloud::Projection;
use crate::selftrain::{MixingMode, PseudoLabelConfig, RoundPlan, SelfTrainConfig};
use crate::synth::{DomainShift, DomainSpec, SensorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Where the domains come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainsConfig {
    pub source: DomainSpec,
    /// Target = source shifted by this.
    pub shift: DomainShift,
    /// Scenes per domain used for training.
    pub scenes: usize,
    /// Held-out labeled target scenes for evaluation.
    pub eval_scenes: usize,
    /// Read sets written by `synth-gen` instead of generating in memory.
    pub data_dir: Option<PathBuf>,
}

impl Default for DomainsConfig {
    fn default() -> Self {
        DomainsConfig {
            source: DomainSpec::default(),
            shift: desk_shift(),
            scenes: 200,
            eval_scenes: 100,
            data_dir: None,
        }
    }
}

/// Documented desk domain shift: the target sensor has noisier ranges
/// (0.15 m) and target streets carry 1.5x as many objects.
pub fn desk_shift() -> DomainShift {
    DomainShift {
        intensity_shift: 0.0,
        noise_sigma: 0.15,
        density_scale: 1.5,
        class_mixture: None,
    }
}

/// Template by catalog name, or spelled out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TemplateChoice {
    Named(String),
    Explicit(ConcatTemplate),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixingChoice {
    #[default]
    Concat,
    Separate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConcatConfig {
    pub template: TemplateChoice,
    pub mixing: MixingChoice,
}

impl Default for ConcatConfig {
    fn default() -> Self {
        ConcatConfig {
            template: TemplateChoice::Named(DEFAULT_STRATEGY.into()),
            mixing: MixingChoice::Concat,
        }
    }
}

impl ConcatConfig {
    pub fn template(&self) -> Result<ConcatTemplate> {
        let t = match &self.template {
            TemplateChoice::Named(n) => strategy(n)?,
            TemplateChoice::Explicit(t) => t.clone(),
        };
        t.validate()?;
        Ok(t)
    }
}

/// Everything a run needs. Every field has a default; a `"preset"` key in
/// the JSON picks the base the remaining keys are merged onto.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub sensor: SensorSpec,
    pub domains: DomainsConfig,
    pub model: BackboneConfig,
    pub train: RoundPlan,
    pub pseudo: PseudoLabelConfig,
    pub concat: ConcatConfig,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

pub const PRESETS: [&str; 2] = ["desk", "tiny"];

impl RunConfig {
    /// 32x256 views, five classes, 200 scenes per domain, 5 pre-training
    /// epochs and 3 epochs per round.
    pub fn desk() -> Self {
        let sensor = SensorSpec::default();
        let mut train = RoundPlan {
            pretrain_epochs: 5,
            round_epochs: [3, 3],
            ..RoundPlan::default()
        };
        train.source_batch = 4;
        train.target_batch = 4;
        RunConfig {
            model: BackboneConfig::desk(sensor.rings, sensor.azimuth_steps, 5),
            sensor,
            domains: DomainsConfig::default(),
            train,
            pseudo: PseudoLabelConfig::default(),
            concat: ConcatConfig::default(),
            seed: 0,
            precision: Precision::F32,
        }
    }

    /// Seconds-scale smoke configuration: 8x32 views, a handful of scenes.
    pub fn tiny() -> Self {
        let mut c = Self::desk();
        c.sensor.rings = 8;
        c.sensor.azimuth_steps = 32;
        c.domains.scenes = 6;
        c.domains.eval_scenes = 3;
        c.domains.source.object_density = 6.0;
        c.domains.source.ground_extent = 25.0;
        c.model = BackboneConfig::desk(8, 32, 5).with_channels([4, 8, 8, 8, 8, 8, 8]);
        c.train.pretrain_epochs = 1;
        c.train.round_epochs = [1, 1];
        c.train.source_batch = 2;
        c.train.target_batch = 2;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "tiny" => Ok(Self::tiny()),
            _ => Err(Error::UnknownName(format!("preset '{name}', expected one of {PRESETS:?}"))),
        }
    }

    /// Parse a JSON document, merging it over its preset (default `desk`).
    pub fn from_json(text: &str) -> Result<Self> {
        let mut user: Value = serde_json::from_str(text)?;
        let preset = match user.as_object_mut().and_then(|o| o.remove("preset")) {
            None => "desk".to_string(),
            Some(Value::String(s)) => s,
            Some(v) => return Err(Error::Config(format!("preset must be a string, got {v}"))),
        };
        let mut base = serde_json::to_value(Self::preset(&preset)?)?;
        merge(&mut base, user);
        let cfg: RunConfig = serde_json::from_value(base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Domain specs with the run's sensor installed.
    pub fn source_spec(&self) -> DomainSpec {
        let mut s = self.domains.source.clone();
        s.sensor = self.sensor.clone();
        s
    }

    pub fn target_spec(&self) -> Result<DomainSpec> {
        self.source_spec().shifted(&self.domains.shift)
    }

    pub fn projection(&self) -> Result<Projection> {
        self.sensor.projection()
    }

    pub fn selftrain_config(&self) -> Result<SelfTrainConfig> {
        let mixing = match self.concat.mixing {
            MixingChoice::Concat => MixingMode::Concat(self.concat.template()?),
            MixingChoice::Separate => MixingMode::Separate,
        };
        Ok(SelfTrainConfig {
            pseudo: self.pseudo.clone(),
            mixing,
            seed: self.seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.source_spec().validate()?;
        self.target_spec()?;
        self.model.validate()?;
        if (self.model.input_height, self.model.input_width) != (self.sensor.rings, self.sensor.azimuth_steps) {
            return Err(Error::Config(format!(
                "model input {}x{} does not match the {}x{} sensor grid",
                self.model.input_height, self.model.input_width, self.sensor.rings, self.sensor.azimuth_steps
            )));
        }
        if self.model.num_classes != self.domains.source.num_classes {
            return Err(Error::Config(format!(
                "model predicts {} classes, domains have {}",
                self.model.num_classes, self.domains.source.num_classes
            )));
        }
        self.train.validate()?;
        self.pseudo.validate()?;
        self.concat.template()?.check_fits(self.sensor.rings, self.sensor.azimuth_steps)
    }
}

/// Recursive object merge; non-object values in `over` replace those in `base`.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
