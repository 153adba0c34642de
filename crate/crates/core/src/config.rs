//! Experiment configuration.
//!
//! Every field of [`DetectionConfig`] has a flat text key (see [`KEYS`]); the
//! companion crate maps those keys 1:1 onto config-file lines and CLI flags.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::head::HeadWidths;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionConfig {
    /// Memory slots per attention block.
    pub d: usize,
    /// Number of stacked attention blocks.
    pub depth: usize,
    /// Box enlargement for regression-branch crops.
    pub reg_scale: f32,
    pub use_double_head: bool,
    pub use_pos_encoding: bool,
    pub attach_attention_cls: bool,
    pub attach_attention_reg: bool,
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub epochs: usize,
    /// Epochs after which the learning rate is multiplied by 0.1.
    pub lr_decay_epochs: Vec<usize>,
    /// Linear warm-up length in SGD steps (0 disables).
    pub warmup_steps: usize,
    pub seed: u64,
    pub train_scenes: usize,
    pub val_scenes: usize,
    /// Scenes per SGD step.
    pub batch_size: usize,
    pub channels: usize,
    pub roi_size: usize,
    pub reg_mid: usize,
    pub reg_out: usize,
    pub fc_hidden: usize,
    /// RoIAlign samples per bin along each axis.
    pub sampling: usize,
    pub smooth_l1_beta: f32,
    pub score_threshold: f32,
    pub nms_iou: f32,
    pub max_detections: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            d: 10,
            depth: 1,
            reg_scale: 1.3,
            use_double_head: true,
            use_pos_encoding: true,
            attach_attention_cls: true,
            attach_attention_reg: true,
            lr: 0.005,
            momentum: 0.9,
            weight_decay: 0.0001,
            epochs: 12,
            lr_decay_epochs: vec![8, 11],
            warmup_steps: 100,
            seed: 0,
            train_scenes: 512,
            val_scenes: 128,
            batch_size: 2,
            channels: 32,
            roi_size: 7,
            reg_mid: 32,
            reg_out: 64,
            fc_hidden: 256,
            sampling: 2,
            smooth_l1_beta: 1.0 / 9.0,
            score_threshold: 0.05,
            nms_iou: 0.5,
            max_detections: 100,
        }
    }
}

/// Every configuration key, in canonical order.
pub const KEYS: &[&str] = &[
    "d",
    "depth",
    "reg_scale",
    "use_double_head",
    "use_pos_encoding",
    "attach_attention_cls",
    "attach_attention_reg",
    "lr",
    "momentum",
    "weight_decay",
    "epochs",
    "lr_decay_epochs",
    "warmup_steps",
    "seed",
    "train_scenes",
    "val_scenes",
    "batch_size",
    "channels",
    "roi_size",
    "reg_mid",
    "reg_out",
    "fc_hidden",
    "sampling",
    "smooth_l1_beta",
    "score_threshold",
    "nms_iou",
    "max_detections",
];

fn parse<T: core::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for key {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for key {key}"))),
    }
}

fn fmt_f32(v: f32) -> String {
    format!("{v}")
}

impl DetectionConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "d" => self.d = parse(key, value)?,
            "depth" => self.depth = parse(key, value)?,
            "reg_scale" => self.reg_scale = parse(key, value)?,
            "use_double_head" => self.use_double_head = parse_bool(key, value)?,
            "use_pos_encoding" => self.use_pos_encoding = parse_bool(key, value)?,
            "attach_attention_cls" => self.attach_attention_cls = parse_bool(key, value)?,
            "attach_attention_reg" => self.attach_attention_reg = parse_bool(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "lr_decay_epochs" => {
                self.lr_decay_epochs = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_>>()?
            }
            "warmup_steps" => self.warmup_steps = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "train_scenes" => self.train_scenes = parse(key, value)?,
            "val_scenes" => self.val_scenes = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "channels" => self.channels = parse(key, value)?,
            "roi_size" => self.roi_size = parse(key, value)?,
            "reg_mid" => self.reg_mid = parse(key, value)?,
            "reg_out" => self.reg_out = parse(key, value)?,
            "fc_hidden" => self.fc_hidden = parse(key, value)?,
            "sampling" => self.sampling = parse(key, value)?,
            "smooth_l1_beta" => self.smooth_l1_beta = parse(key, value)?,
            "score_threshold" => self.score_threshold = parse(key, value)?,
            "nms_iou" => self.nms_iou = parse(key, value)?,
            "max_detections" => self.max_detections = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "d" => self.d.to_string(),
            "depth" => self.depth.to_string(),
            "reg_scale" => fmt_f32(self.reg_scale),
            "use_double_head" => self.use_double_head.to_string(),
            "use_pos_encoding" => self.use_pos_encoding.to_string(),
            "attach_attention_cls" => self.attach_attention_cls.to_string(),
            "attach_attention_reg" => self.attach_attention_reg.to_string(),
            "lr" => fmt_f32(self.lr),
            "momentum" => fmt_f32(self.momentum),
            "weight_decay" => fmt_f32(self.weight_decay),
            "epochs" => self.epochs.to_string(),
            "lr_decay_epochs" => self
                .lr_decay_epochs
                .iter()
                .map(|e| e.to_string())
                .collect::<Vec<_>>()
                .join(","),
            "warmup_steps" => self.warmup_steps.to_string(),
            "seed" => self.seed.to_string(),
            "train_scenes" => self.train_scenes.to_string(),
            "val_scenes" => self.val_scenes.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "channels" => self.channels.to_string(),
            "roi_size" => self.roi_size.to_string(),
            "reg_mid" => self.reg_mid.to_string(),
            "reg_out" => self.reg_out.to_string(),
            "fc_hidden" => self.fc_hidden.to_string(),
            "sampling" => self.sampling.to_string(),
            "smooth_l1_beta" => fmt_f32(self.smooth_l1_beta),
            "score_threshold" => fmt_f32(self.score_threshold),
            "nms_iou" => fmt_f32(self.nms_iou),
            "max_detections" => self.max_detections.to_string(),
            _ => return None,
        })
    }

    pub fn widths(&self) -> HeadWidths {
        HeadWidths {
            channels: self.channels,
            roi_size: self.roi_size,
            reg_mid: self.reg_mid,
            reg_out: self.reg_out,
            fc_hidden: self.fc_hidden,
        }
    }

    /// Whether any attention block is instantiated.
    pub fn uses_attention(&self) -> bool {
        self.attach_attention_cls || self.attach_attention_reg
    }

    /// Learning rate for a 1-based epoch, after step decay.
    pub fn lr_at_epoch(&self, epoch: usize) -> f32 {
        let decays = self.lr_decay_epochs.iter().filter(|&&e| epoch > e).count();
        let mut lr = self.lr;
        for _ in 0..decays {
            lr *= 0.1;
        }
        lr
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("train_scenes", self.train_scenes),
            ("val_scenes", self.val_scenes),
            ("batch_size", self.batch_size),
            ("channels", self.channels),
            ("roi_size", self.roi_size),
            ("reg_mid", self.reg_mid),
            ("reg_out", self.reg_out),
            ("fc_hidden", self.fc_hidden),
            ("sampling", self.sampling),
            ("max_detections", self.max_detections),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if self.uses_attention() && self.d == 0 {
            return Err(Error::Config("d must be positive when attention is attached".into()));
        }
        if !(self.reg_scale > 0.0) {
            return Err(Error::Config("reg_scale must be positive".into()));
        }
        let non_negative = [
            ("lr", self.lr),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("smooth_l1_beta", self.smooth_l1_beta),
            ("score_threshold", self.score_threshold),
        ];
        if let Some((k, _)) = non_negative.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("{k} must be a finite non-negative number")));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err(Error::Config("nms_iou must lie in (0, 1]".into()));
        }
        if self.use_pos_encoding && !self.use_double_head {
            return Err(Error::Config(
                "use_pos_encoding requires use_double_head (only regression-branch features are encoded)".into(),
            ));
        }
        Ok(())
    }

    /// Flat `key = value` rendering in canonical key order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&self.get(key).expect("known key"));
            out.push('\n');
        }
        out
    }
}

/// The head configurations compared in the structural ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Single 2fc head, no attention.
    Baseline,
    /// Single head with RoI attention.
    Attention,
    /// Double head, attention on the classification branch only.
    OnlyCls,
    /// Double head, attention on the regression branch only.
    OnlyReg,
    /// Double head, attention on both branches.
    Both,
    /// `Both` plus positional encoding of the regression features.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Baseline,
        Variant::Attention,
        Variant::OnlyCls,
        Variant::OnlyReg,
        Variant::Both,
        Variant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Attention => "+roi_attention",
            Variant::OnlyCls => "only_cls",
            Variant::OnlyReg => "only_reg",
            Variant::Both => "both",
            Variant::Full => "full",
        }
    }

    /// Reference AP reported for this row of the structural ablation.
    pub fn reference_ap(self) -> f32 {
        match self {
            Variant::Baseline => 44.5,
            Variant::Attention => 45.4,
            Variant::OnlyCls => 45.4,
            Variant::OnlyReg => 45.4,
            Variant::Both => 45.8,
            Variant::Full => 46.0,
        }
    }

    pub fn apply(self, cfg: &mut DetectionConfig) {
        let (double, pos, cls, reg) = match self {
            Variant::Baseline => (false, false, false, false),
            Variant::Attention => (false, false, true, true),
            Variant::OnlyCls => (true, false, true, false),
            Variant::OnlyReg => (true, false, false, true),
            Variant::Both => (true, false, true, true),
            Variant::Full => (true, true, true, true),
        };
        cfg.use_double_head = double;
        cfg.use_pos_encoding = pos;
        cfg.attach_attention_cls = cls;
        cfg.attach_attention_reg = reg;
    }
}

impl core::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_covers_every_key() {
        let mut cfg = DetectionConfig {
            d: 20,
            lr_decay_epochs: vec![3, 5],
            smooth_l1_beta: 0.25,
            use_pos_encoding: false,
            ..DetectionConfig::default()
        };
        cfg.seed = 99;
        let text = cfg.to_text();
        assert_eq!(text.lines().count(), KEYS.len());
        let mut back = DetectionConfig::default();
        for line in text.lines() {
            let (k, v) = line.split_once('=').unwrap();
            back.set(k.trim(), v).unwrap();
        }
        assert_eq!(back, cfg);
    }

    #[test]
    fn defaults_follow_training_recipe() {
        let cfg = DetectionConfig::default();
        assert_eq!((cfg.d, cfg.depth), (10, 1));
        assert_eq!((cfg.lr, cfg.momentum, cfg.weight_decay), (0.005, 0.9, 0.0001));
        assert_eq!(cfg.lr_decay_epochs, vec![8, 11]);
        assert_eq!(cfg.reg_scale, 1.3);
        assert_eq!(cfg.epochs, 12);
        assert_eq!(cfg.lr_at_epoch(8), 0.005);
        assert!((cfg.lr_at_epoch(9) - 0.0005).abs() < 1e-9);
        assert!((cfg.lr_at_epoch(12) - 0.00005).abs() < 1e-10);
        cfg.validate().unwrap();
    }

    #[test]
    fn bad_values_are_rejected() {
        let mut cfg = DetectionConfig::default();
        assert!(cfg.set("nope", "1").is_err());
        assert!(cfg.set("d", "ten").is_err());
        assert!(cfg.set("use_double_head", "maybe").is_err());
        cfg.use_double_head = false;
        assert!(cfg.validate().is_err());
        Variant::Baseline.apply(&mut cfg);
        cfg.validate().unwrap();
    }
}
