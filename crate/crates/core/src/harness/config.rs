use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::{LossWeights, NcsMode};
use crate::mix::{OcclusionLabel, PlanConfig, DEFAULT_SIDE_FRAC};
use crate::segmentor::DEFAULT_BASE_CHANNELS;
use crate::tensor::CeReduction;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MixStrategy {
    None,
    Mixup,
    Cutmix,
    #[default]
    Puzzle,
}

impl fmt::Display for MixStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MixStrategy::None => "none",
            MixStrategy::Mixup => "mixup",
            MixStrategy::Cutmix => "cutmix",
            MixStrategy::Puzzle => "puzzle",
        })
    }
}

impl FromStr for MixStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(MixStrategy::None),
            "mixup" => Ok(MixStrategy::Mixup),
            "cutmix" => Ok(MixStrategy::Cutmix),
            "puzzle" => Ok(MixStrategy::Puzzle),
            _ => Err(Error::Parse(format!(
                "mix strategy {s:?}, expected none|mixup|cutmix|puzzle"
            ))),
        }
    }
}

/// Every knob of a training run. Serializes to flat `key=value` text.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub data: PathBuf,
    pub epochs: usize,
    pub lr: f64,
    pub weights: LossWeights,
    pub strategy: MixStrategy,
    pub occlusion: bool,
    pub side_frac: f64,
    pub stopgrad: bool,
    pub occlusion_label: OcclusionLabel,
    pub seed: u64,
    pub plan: PlanConfig,
    pub base_channels: usize,
    pub ce_reduction: CeReduction,
    pub ncs: NcsMode,
    pub mixup_alpha: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            data: PathBuf::from("data"),
            epochs: 200,
            lr: 1e-4,
            weights: LossWeights::default(),
            strategy: MixStrategy::Puzzle,
            occlusion: true,
            side_frac: DEFAULT_SIDE_FRAC,
            stopgrad: false,
            occlusion_label: OcclusionLabel::Background,
            seed: 0,
            plan: PlanConfig::default(),
            base_channels: DEFAULT_BASE_CHANNELS,
            ce_reduction: CeReduction::Mean,
            ncs: NcsMode::Flat,
            mixup_alpha: 1.0,
        }
    }
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => Err(Error::Parse(format!("{key}: expected on|off, got {v:?}"))),
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Parse(format!("{key}: cannot parse {v:?}")))
}

impl TrainConfig {
    /// Sets one key. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "data" => self.data = PathBuf::from(v),
            "epochs" => self.epochs = parse_num(key, v)?,
            "pairing" if v == "shuffle-adjacent" => {}
            "pairing" => {
                return Err(Error::Parse(format!(
                    "pairing {v:?}, only shuffle-adjacent exists"
                )))
            }
            "lr" => self.lr = parse_num(key, v)?,
            "lambda_unmix" => self.weights.unmix = parse_num(key, v)?,
            "lambda_mix" => self.weights.mix = parse_num(key, v)?,
            "lambda_con_g" => self.weights.con_global = parse_num(key, v)?,
            "lambda_con_l" => self.weights.con_local = parse_num(key, v)?,
            "mix_strategy" => self.strategy = v.parse()?,
            "occlusion" => self.occlusion = parse_bool(key, v)?,
            "side_frac" => self.side_frac = parse_num(key, v)?,
            "stopgrad" => self.stopgrad = parse_bool(key, v)?,
            "occlusion_label" => self.occlusion_label = v.parse()?,
            "seed" => self.seed = parse_num(key, v)?,
            "block_size" => self.plan.block_size = parse_num(key, v)?,
            "window_radius" => self.plan.window_radius = parse_num(key, v)?,
            "n_iter" => self.plan.n_iter = parse_num(key, v)?,
            "base_channels" => self.base_channels = parse_num(key, v)?,
            "ce_reduction" => {
                self.ce_reduction = match v {
                    "sum" => CeReduction::Sum,
                    "mean" => CeReduction::Mean,
                    _ => {
                        return Err(Error::Parse(format!(
                            "ce_reduction {v:?}, expected sum|mean"
                        )))
                    }
                }
            }
            "ncs" => {
                self.ncs = match v {
                    "flat" => NcsMode::Flat,
                    "per_class" => NcsMode::PerClass,
                    _ => return Err(Error::Parse(format!("ncs {v:?}, expected flat|per_class"))),
                }
            }
            "mixup_alpha" => self.mixup_alpha = parse_num(key, v)?,
            other => return Err(Error::Parse(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("config line {}: expected key=value", n + 1))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies `key=value` overrides, e.g. from the command line.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("override {o:?} is not key=value")))?;
            self.set(k, v)?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.epochs == 0 {
            return Err(Error::Invalid("epochs must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Invalid(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(self.side_frac > 0.0 && self.side_frac < 1.0) {
            return Err(Error::Invalid(format!(
                "side_frac must be in (0,1), got {}",
                self.side_frac
            )));
        }
        if self.plan.block_size == 0 || self.plan.n_iter == 0 {
            return Err(Error::Invalid("block_size and n_iter must be >= 1".into()));
        }
        if self.mixup_alpha.is_nan() || self.mixup_alpha <= 0.0 {
            return Err(Error::Invalid(format!(
                "mixup_alpha must be > 0, got {}",
                self.mixup_alpha
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let w = &self.weights;
        let lines = [
            format!("data={}", self.data.display()),
            format!("epochs={}", self.epochs),
            "pairing=shuffle-adjacent".to_string(),
            format!("lr={}", self.lr),
            format!("lambda_unmix={}", w.unmix),
            format!("lambda_mix={}", w.mix),
            format!("lambda_con_g={}", w.con_global),
            format!("lambda_con_l={}", w.con_local),
            format!("mix_strategy={}", self.strategy),
            format!("occlusion={}", on_off(self.occlusion)),
            format!("side_frac={}", self.side_frac),
            format!("stopgrad={}", on_off(self.stopgrad)),
            format!("occlusion_label={}", self.occlusion_label),
            format!("seed={}", self.seed),
            format!("block_size={}", self.plan.block_size),
            format!("window_radius={}", self.plan.window_radius),
            format!("n_iter={}", self.plan.n_iter),
            format!("base_channels={}", self.base_channels),
            format!(
                "ce_reduction={}",
                match self.ce_reduction {
                    CeReduction::Sum => "sum",
                    CeReduction::Mean => "mean",
                }
            ),
            format!(
                "ncs={}",
                match self.ncs {
                    NcsMode::Flat => "flat",
                    NcsMode::PerClass => "per_class",
                }
            ),
            format!("mixup_alpha={}", self.mixup_alpha),
        ];
        let mut s = lines.join("\n");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.apply_overrides(&[
            "lr=0.00031",
            "mix_strategy=cutmix",
            "stopgrad=on",
            "lambda_con_g=0.123456789",
        ])
        .unwrap();
        assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn comments_and_errors() {
        let cfg = TrainConfig::parse("# run\nepochs = 3 # short\n\nseed=9\n").unwrap();
        assert_eq!((cfg.epochs, cfg.seed), (3, 9));
        assert!(TrainConfig::parse("epochs=0").is_err());
        assert!(TrainConfig::parse("bogus=1").is_err());
        assert!(TrainConfig::parse("epochs").is_err());
        assert!(TrainConfig::parse("occlusion=maybe").is_err());
    }
}
