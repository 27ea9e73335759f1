//! Flat `section.key = value` configuration covering every run setting.

use std::fmt::Display;
use std::str::FromStr;

use crate::data::{SynthConfig, View};
use crate::error::{Error, Result};
use crate::eval::{FinetuneConfig, ProbeConfig};
use crate::train::TrainConfig;

/// Everything a CLI run can be configured with.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: SynthConfig,
    pub probe: ProbeConfig,
    pub finetune: FinetuneConfig,
    pub view: View,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::paper()
    }
}

pub const PRESETS: [&str; 3] = ["paper", "desk", "tiny"];

const TRAIN_SECTIONS: [&str; 4] = ["train", "encoder", "augment", "loss"];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.parse().map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_switch(key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected on|off, got {value:?}"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect()
}

fn switch(b: bool) -> String {
    if b { "on" } else { "off" }.to_string()
}

fn list(xs: &[usize]) -> String {
    xs.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn paper() -> Self {
        Self {
            train: TrainConfig::paper(),
            data: SynthConfig::default(),
            probe: ProbeConfig::default(),
            finetune: FinetuneConfig::default(),
            view: View::Joint,
        }
    }

    pub fn desk() -> Self {
        let mut finetune = FinetuneConfig::default();
        finetune.schedule.epochs = 50;
        finetune.schedule.lr_decay_epochs = vec![31, 44];
        Self { train: TrainConfig::desk(), finetune, ..Self::paper() }
    }

    pub fn tiny() -> Self {
        let mut finetune = FinetuneConfig::default();
        finetune.schedule.epochs = 1;
        finetune.schedule.lr_decay_epochs = vec![];
        finetune.schedule.batch_size = 2;
        Self {
            train: TrainConfig::tiny(),
            data: SynthConfig { classes: 2, per_class: 4, test_per_class: 2, frames: 8, joints: 6, ..SynthConfig::default() },
            probe: ProbeConfig { epochs: 5, lr_decay_epochs: vec![], batch_size: 4, ..ProbeConfig::default() },
            finetune,
            view: View::Joint,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            "tiny" => Ok(Self::tiny()),
            _ => Err(Error::Config(format!("unknown preset {name:?} (valid: {})", PRESETS.join(", ")))),
        }
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let e = &t.encoder;
        let a = &t.augment;
        let d = &self.data;
        let p = &self.probe;
        let f = &self.finetune.schedule;
        vec![
            ("train.epochs", t.epochs.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.lr", t.lr.to_string()),
            ("train.lr_decay_epochs", list(&t.lr_decay_epochs)),
            ("train.lr_decay_factor", t.lr_decay_factor.to_string()),
            ("train.sgd_momentum", t.sgd_momentum.to_string()),
            ("train.weight_decay", t.weight_decay.to_string()),
            ("train.queue_capacity", t.queue_capacity.to_string()),
            ("train.tau", t.tau.to_string()),
            ("train.key_momentum", t.key_momentum.to_string()),
            ("train.seed", t.seed.to_string()),
            ("encoder.C", e.channels.to_string()),
            ("encoder.L", e.levels.to_string()),
            ("encoder.hidden", e.hidden.to_string()),
            ("encoder.s2s", e.s2s.as_str().to_string()),
            ("encoder.out_frames", e.out_frames.to_string()),
            ("encoder.J", e.joints.to_string()),
            ("encoder.branches", e.branches.to_string()),
            ("encoder.fusion", e.fusion.to_string()),
            ("encoder.udm", e.udm.to_string()),
            ("augment.shear_amplitude", a.shear_amplitude.to_string()),
            ("augment.jitter_joint_fraction", a.jitter_joint_fraction.to_string()),
            ("augment.jitter_magnitude", a.jitter_magnitude.to_string()),
            ("augment.crop_ratio_min", a.crop_ratio_min.to_string()),
            ("loss.instance", switch(t.loss.instance)),
            ("loss.domain", switch(t.loss.domain)),
            ("loss.clip_part", switch(t.loss.clip_part)),
            ("data.classes", d.classes.to_string()),
            ("data.per_class", d.per_class.to_string()),
            ("data.test_per_class", d.test_per_class.to_string()),
            ("data.frames", d.frames.to_string()),
            ("data.joints", d.joints.to_string()),
            ("data.amplitude", d.amplitude.to_string()),
            ("data.noise", d.noise.to_string()),
            ("data.seed", d.seed.to_string()),
            ("probe.epochs", p.epochs.to_string()),
            ("probe.lr", p.lr.to_string()),
            ("probe.lr_decay_epochs", list(&p.lr_decay_epochs)),
            ("probe.lr_decay_factor", p.lr_decay_factor.to_string()),
            ("probe.momentum", p.momentum.to_string()),
            ("probe.batch_size", p.batch_size.to_string()),
            ("probe.weight_decay", p.weight_decay.to_string()),
            ("probe.seed", p.seed.to_string()),
            ("finetune.epochs", f.epochs.to_string()),
            ("finetune.lr", f.lr.to_string()),
            ("finetune.lr_decay_epochs", list(&f.lr_decay_epochs)),
            ("finetune.lr_decay_factor", f.lr_decay_factor.to_string()),
            ("finetune.momentum", f.momentum.to_string()),
            ("finetune.batch_size", f.batch_size.to_string()),
            ("finetune.weight_decay", f.weight_decay.to_string()),
            ("finetune.seed", f.seed.to_string()),
            ("finetune.label_fraction", self.finetune.label_fraction.to_string()),
            ("eval.view", self.view.as_str().to_string()),
        ]
    }

    pub fn keys() -> Vec<&'static str> {
        Self::paper().entries().into_iter().map(|(k, _)| k).collect()
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries().into_iter().find(|(k, _)| *k == key).map(|(_, v)| v)
    }

    /// Sets one key. `encoder.out_frames` also sets the augmentation output
    /// length, which must agree with it.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let t = &mut self.train;
        let p = &mut self.probe;
        let f = &mut self.finetune.schedule;
        match key {
            "train.epochs" => t.epochs = parse(key, v)?,
            "train.batch_size" => t.batch_size = parse(key, v)?,
            "train.lr" => t.lr = parse(key, v)?,
            "train.lr_decay_epochs" => t.lr_decay_epochs = parse_list(key, v)?,
            "train.lr_decay_factor" => t.lr_decay_factor = parse(key, v)?,
            "train.sgd_momentum" => t.sgd_momentum = parse(key, v)?,
            "train.weight_decay" => t.weight_decay = parse(key, v)?,
            "train.queue_capacity" => t.queue_capacity = parse(key, v)?,
            "train.tau" => t.tau = parse(key, v)?,
            "train.key_momentum" => t.key_momentum = parse(key, v)?,
            "train.seed" => t.seed = parse(key, v)?,
            "encoder.C" => t.encoder.channels = parse(key, v)?,
            "encoder.L" => t.encoder.levels = parse(key, v)?,
            "encoder.hidden" => t.encoder.hidden = parse(key, v)?,
            "encoder.s2s" => t.encoder.s2s = parse(key, v)?,
            "encoder.out_frames" => {
                t.encoder.out_frames = parse(key, v)?;
                t.augment.out_frames = t.encoder.out_frames;
            }
            "encoder.J" => t.encoder.joints = parse(key, v)?,
            "encoder.branches" => t.encoder.branches = parse(key, v)?,
            "encoder.fusion" => t.encoder.fusion = parse(key, v)?,
            "encoder.udm" => t.encoder.udm = parse(key, v)?,
            "augment.shear_amplitude" => t.augment.shear_amplitude = parse(key, v)?,
            "augment.jitter_joint_fraction" => t.augment.jitter_joint_fraction = parse(key, v)?,
            "augment.jitter_magnitude" => t.augment.jitter_magnitude = parse(key, v)?,
            "augment.crop_ratio_min" => t.augment.crop_ratio_min = parse(key, v)?,
            "loss.instance" => t.loss.instance = parse_switch(key, v)?,
            "loss.domain" => t.loss.domain = parse_switch(key, v)?,
            "loss.clip_part" => t.loss.clip_part = parse_switch(key, v)?,
            "data.classes" => self.data.classes = parse(key, v)?,
            "data.per_class" => self.data.per_class = parse(key, v)?,
            "data.test_per_class" => self.data.test_per_class = parse(key, v)?,
            "data.frames" => self.data.frames = parse(key, v)?,
            "data.joints" => self.data.joints = parse(key, v)?,
            "data.amplitude" => self.data.amplitude = parse(key, v)?,
            "data.noise" => self.data.noise = parse(key, v)?,
            "data.seed" => self.data.seed = parse(key, v)?,
            "probe.epochs" => p.epochs = parse(key, v)?,
            "probe.lr" => p.lr = parse(key, v)?,
            "probe.lr_decay_epochs" => p.lr_decay_epochs = parse_list(key, v)?,
            "probe.lr_decay_factor" => p.lr_decay_factor = parse(key, v)?,
            "probe.momentum" => p.momentum = parse(key, v)?,
            "probe.batch_size" => p.batch_size = parse(key, v)?,
            "probe.weight_decay" => p.weight_decay = parse(key, v)?,
            "probe.seed" => p.seed = parse(key, v)?,
            "finetune.epochs" => f.epochs = parse(key, v)?,
            "finetune.lr" => f.lr = parse(key, v)?,
            "finetune.lr_decay_epochs" => f.lr_decay_epochs = parse_list(key, v)?,
            "finetune.lr_decay_factor" => f.lr_decay_factor = parse(key, v)?,
            "finetune.momentum" => f.momentum = parse(key, v)?,
            "finetune.batch_size" => f.batch_size = parse(key, v)?,
            "finetune.weight_decay" => f.weight_decay = parse(key, v)?,
            "finetune.seed" => f.seed = parse(key, v)?,
            "finetune.label_fraction" => self.finetune.label_fraction = parse(key, v)?,
            "eval.view" => self.view = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}; valid keys: {}", Self::keys().join(", ")))),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair.split_once('=').ok_or_else(|| Error::Config(format!("expected section.key=value, got {pair:?}")))?;
        self.set(k.trim(), v)
    }

    /// Applies every line of a config file on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.set_pair(line).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", n + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        render(self.entries().into_iter())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::paper();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Checks every part, plus agreement between the data and encoder shapes.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.probe.validate()?;
        self.finetune.schedule.validate()?;
        let d = &self.data;
        if d.classes == 0 || d.per_class == 0 || d.frames == 0 || d.joints == 0 || !(d.noise >= 0.0) {
            return Err(Error::Config(format!("invalid synthetic data settings {d:?}")));
        }
        if self.data.joints != self.train.encoder.joints {
            return Err(Error::Config(format!("data.joints {} differs from encoder.J {}", self.data.joints, self.train.encoder.joints)));
        }
        Ok(())
    }
}

fn render<'a>(entries: impl Iterator<Item = (&'a str, String)>) -> String {
    entries.map(|(k, v)| format!("{k} = {v}\n")).collect()
}

fn in_train_sections(key: &str) -> bool {
    TRAIN_SECTIONS.iter().any(|s| key.split('.').next() == Some(s))
}

/// Pre-training keys only, as stored in checkpoints.
pub fn train_to_text(cfg: &TrainConfig) -> String {
    let run = RunConfig { train: cfg.clone(), ..RunConfig::paper() };
    render(run.entries().into_iter().filter(|(k, _)| in_train_sections(k)))
}

pub fn train_from_text(text: &str) -> Result<TrainConfig> {
    Ok(RunConfig::from_text(text)?.train)
}
