//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Every other line must
//! be `key = value`. Keys are documented on [`RunConfig`]; unknown keys are
//! errors. Command-line overrides are applied after the file, so flags win.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::cascade::{CascadeArch, CascadeVariant, SegmentOptions};
use crate::dataio::{AugmentConfig, NormScope};
use crate::error::{Error, Result};
use crate::model::UpsampleMode;
use crate::tensor::Precision;
use crate::train::{Conditioning, TrainingConfig};

/// Splits `key = value` lines; returns `(line number, key, value)`.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, found {line:?}", i + 1)))?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub(crate) fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

pub(crate) fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, found {value:?}"))),
    }
}

pub(crate) fn parse_upsample(key: &str, value: &str) -> Result<UpsampleMode> {
    match value {
        "transposed" => Ok(UpsampleMode::Transposed),
        "nearest" => Ok(UpsampleMode::NearestConv),
        _ => Err(Error::Config(format!("{key}: expected transposed or nearest, found {value:?}"))),
    }
}

pub(crate) fn upsample_name(mode: UpsampleMode) -> &'static str {
    match mode {
        UpsampleMode::Transposed => "transposed",
        UpsampleMode::NearestConv => "nearest",
    }
}

/// Everything a command needs, with defaults matching the library defaults.
///
/// | key | meaning | default |
/// |---|---|---|
/// | `variant` | `mres-multi`, `mres-single` or `unet-baseline` | `mres-multi` |
/// | `depth`, `base_channels`, `channel_multiplier` | network size | 4, 16, 2 |
/// | `use_norm` | batch norm inside blocks | true |
/// | `upsample` | `transposed` or `nearest` | transposed |
/// | `learning_rate`, `batch_size`, `epochs` | optimizer schedule | 0.0005, 5, 50 |
/// | `seed` | master seed | 0 |
/// | `augment` | random rotation / translation / flip | true |
/// | `max_rotation_deg`, `max_translation`, `hflip_probability`, `vflip` | augmentation ranges | 10, 10, 0.5, false |
/// | `stage2_conditioning` | `ground_truth` or `predicted` | ground_truth |
/// | `lr_decay` | per-epoch learning-rate factor (1 = off) | 1 |
/// | `early_stopping_patience` | epochs without val improvement (0 = off) | 0 |
/// | `precision` | `single` or `double` arithmetic | single |
/// | `crop` | in-plane crop size, or `none` | none |
/// | `norm_scope` | `slice` or `volume` z-normalization | slice |
/// | `largest_component` | keep the largest 3D prostate component | false |
/// | `threads` | slices predicted concurrently | 1 |
/// | `manifest`, `out` | paths | unset |
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub variant: CascadeVariant,
    pub arch: CascadeArch,
    pub training: TrainingConfig,
    pub segment: SegmentOptions,
    pub precision: Precision,
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variant: CascadeVariant::MultiChannel,
            arch: CascadeArch::default(),
            training: TrainingConfig::default(),
            segment: SegmentOptions::default(),
            precision: Precision::Single,
            manifest: None,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.training;
        let aug: &mut AugmentConfig = &mut t.augmentation;
        match key {
            "variant" => self.variant = value.parse()?,
            "depth" => self.arch.depth = parse_value(key, value)?,
            "base_channels" => self.arch.base_channels = parse_value(key, value)?,
            "channel_multiplier" => self.arch.channel_multiplier = parse_value(key, value)?,
            "use_norm" => self.arch.use_norm = parse_bool(key, value)?,
            "upsample" => self.arch.upsample = parse_upsample(key, value)?,
            "learning_rate" => t.learning_rate = parse_value(key, value)?,
            "batch_size" => t.batch_size = parse_value(key, value)?,
            "epochs" => t.epochs = parse_value(key, value)?,
            "seed" => t.seed = parse_value(key, value)?,
            "augment" => t.augment = parse_bool(key, value)?,
            "max_rotation_deg" => aug.max_rotation_deg = parse_value(key, value)?,
            "max_translation" => aug.max_translation = parse_value(key, value)?,
            "hflip_probability" => aug.hflip_probability = parse_value(key, value)?,
            "vflip" => aug.vflip = parse_bool(key, value)?,
            "stage2_conditioning" => t.stage2_conditioning = value.parse()?,
            "lr_decay" => t.lr_decay = parse_value(key, value)?,
            "early_stopping_patience" => t.early_stopping_patience = parse_value(key, value)?,
            "precision" => {
                self.precision = match value {
                    "single" => Precision::Single,
                    "double" => Precision::Double,
                    _ => return Err(Error::Config(format!("precision: expected single or double, found {value:?}"))),
                }
            }
            "crop" => {
                self.segment.crop = if value == "none" { None } else { Some(parse_value(key, value)?) };
            }
            "norm_scope" => {
                self.segment.norm_scope = match value {
                    "slice" => NormScope::Slice,
                    "volume" => NormScope::Volume,
                    _ => return Err(Error::Config(format!("norm_scope: expected slice or volume, found {value:?}"))),
                }
            }
            "largest_component" => self.segment.largest_component = parse_bool(key, value)?,
            "threads" => self.segment.threads = parse_value(key, value)?,
            "manifest" => self.manifest = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (line, k, v) in parse_pairs(text)? {
            cfg.set(&k, &v).map_err(|e| Error::Config(format!("line {line}: {e}")))?;
        }
        Ok(cfg)
    }

    /// Reads a file (if given), then applies `overrides` in order. Relative
    /// `manifest` / `out` paths in the file resolve against its directory.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let mut c = Self::parse(&std::fs::read_to_string(p)?)?;
                let base = p.parent().unwrap_or(Path::new("."));
                for slot in [&mut c.manifest, &mut c.out] {
                    if let Some(rel) = slot.as_mut().filter(|r| r.is_relative()) {
                        *rel = base.join(&*rel);
                    }
                }
                c
            }
            None => RunConfig::default(),
        };
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key with its current value, in a form [`RunConfig::parse`]
    /// reads back to an equal configuration.
    pub fn to_text(&self) -> String {
        let (t, a, s) = (&self.training, &self.arch, &self.segment);
        let aug = &t.augmentation;
        let mut lines = vec![
            format!("variant = {}", self.variant),
            format!("depth = {}", a.depth),
            format!("base_channels = {}", a.base_channels),
            format!("channel_multiplier = {}", a.channel_multiplier),
            format!("use_norm = {}", a.use_norm),
            format!("upsample = {}", upsample_name(a.upsample)),
            format!("learning_rate = {}", t.learning_rate),
            format!("batch_size = {}", t.batch_size),
            format!("epochs = {}", t.epochs),
            format!("seed = {}", t.seed),
            format!("augment = {}", t.augment),
            format!("max_rotation_deg = {}", aug.max_rotation_deg),
            format!("max_translation = {}", aug.max_translation),
            format!("hflip_probability = {}", aug.hflip_probability),
            format!("vflip = {}", aug.vflip),
            format!("stage2_conditioning = {}", match t.stage2_conditioning {
                Conditioning::GroundTruth => "ground_truth",
                Conditioning::Predicted => "predicted",
            }),
            format!("lr_decay = {}", t.lr_decay),
            format!("early_stopping_patience = {}", t.early_stopping_patience),
            format!("precision = {}", match self.precision {
                Precision::Single => "single",
                Precision::Double => "double",
            }),
            format!("crop = {}", s.crop.map_or("none".to_string(), |c| c.to_string())),
            format!("norm_scope = {}", match s.norm_scope {
                NormScope::Slice => "slice",
                NormScope::Volume => "volume",
            }),
            format!("largest_component = {}", s.largest_component),
            format!("threads = {}", s.threads),
        ];
        for (k, v) in [("manifest", &self.manifest), ("out", &self.out)] {
            if let Some(p) = v {
                lines.push(format!("{k} = {}", p.display()));
            }
        }
        lines.join("\n") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        self.arch.network_configs(self.variant).0.validate()?;
        if self.segment.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        Ok(())
    }
}

impl FromStr for Conditioning {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ground_truth" => Ok(Conditioning::GroundTruth),
            "predicted" => Ok(Conditioning::Predicted),
            _ => Err(Error::Config(format!("stage2_conditioning: expected ground_truth or predicted, found {s:?}"))),
        }
    }
}
