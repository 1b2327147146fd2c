use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    Batch,
    None,
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormKind::Batch => "batch",
            NormKind::None => "none",
        })
    }
}

impl FromStr for NormKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(NormKind::Batch),
            "none" => Ok(NormKind::None),
            other => Err(Error::Config(format!("unknown norm kind {other:?} (batch|none)"))),
        }
    }
}

/// Shape hyperparameters shared by the generator and the critic.
#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub image_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_width: usize,
    pub width_cap: usize,
    pub critic_levels: usize,
    /// Spatial resolutions of the critic's patch heads, e.g. `[64, 16]`.
    pub critic_patch_levels: Vec<usize>,
    pub critic_norm: NormKind,
    /// Whether the critic sees the condition image next to the candidate.
    pub critic_conditioned: bool,
    pub dropout_layers: usize,
    pub dropout_rate: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl NetConfig {
    /// 256×256 configuration with pix2pix widths and two patch heads.
    pub fn full() -> Self {
        NetConfig {
            image_size: 256,
            in_channels: 3,
            out_channels: 3,
            base_width: 64,
            width_cap: 512,
            critic_levels: 4,
            critic_patch_levels: vec![64, 16],
            critic_norm: NormKind::Batch,
            critic_conditioned: true,
            dropout_layers: 3,
            dropout_rate: 0.5,
        }
    }

    /// Same topology scaled to `image_size`, with narrower layers.
    /// Patch heads sit at `size/4` and `size/16` like 64 and 16 at 256.
    pub fn desk(image_size: usize) -> Self {
        NetConfig {
            image_size,
            base_width: 8,
            width_cap: 32,
            critic_patch_levels: vec![image_size / 4, image_size / 16],
            ..Self::full()
        }
    }

    /// Number of stride-2 encoder layers, `log2(image_size)`.
    pub fn encoder_depth(&self) -> usize {
        self.image_size.trailing_zeros() as usize
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_width
            .saturating_mul(1usize.checked_shl(level as u32).unwrap_or(usize::MAX))
            .min(self.width_cap)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !self.image_size.is_power_of_two() || self.image_size < 32 {
            return bad(format!(
                "image_size must be a power of two >= 32, got {}",
                self.image_size
            ));
        }
        if self.in_channels == 0 || self.out_channels == 0 || self.base_width == 0 || self.width_cap == 0 {
            return bad("channel counts and widths must be positive".into());
        }
        if self.critic_levels == 0 || self.critic_levels > self.encoder_depth() {
            return bad(format!(
                "critic_levels must lie in 1..={}, got {}",
                self.encoder_depth(),
                self.critic_levels
            ));
        }
        if self.critic_patch_levels.is_empty() {
            return bad("critic needs at least one patch head".into());
        }
        for &r in &self.critic_patch_levels {
            if self.patch_head_level(r).is_none() {
                return bad(format!(
                    "patch resolution {r} is not image_size/2^k for 1 <= k <= {}",
                    self.critic_levels
                ));
            }
        }
        if self.dropout_layers >= self.encoder_depth() {
            return bad(format!(
                "dropout_layers must be below the decoder depth {}",
                self.encoder_depth()
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        Ok(())
    }

    /// Trunk level (1-based count of stride-2 blocks) producing resolution `r`.
    pub fn patch_head_level(&self, r: usize) -> Option<usize> {
        if r == 0 || !r.is_power_of_two() || r >= self.image_size {
            return None;
        }
        let k = (self.image_size / r).trailing_zeros() as usize;
        (self.image_size >> k == r && (1..=self.critic_levels).contains(&k)).then_some(k)
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let patches = self
            .critic_patch_levels
            .iter()
            .map(|r| r.to_string())
            .collect::<Vec<_>>()
            .join(",");
        vec![
            ("image_size", self.image_size.to_string()),
            ("in_channels", self.in_channels.to_string()),
            ("out_channels", self.out_channels.to_string()),
            ("base_width", self.base_width.to_string()),
            ("width_cap", self.width_cap.to_string()),
            ("critic_levels", self.critic_levels.to_string()),
            ("critic_patch_levels", patches),
            ("critic_norm", self.critic_norm.to_string()),
            ("critic_conditioned", self.critic_conditioned.to_string()),
            ("dropout_layers", self.dropout_layers.to_string()),
            ("dropout_rate", self.dropout_rate.to_string()),
        ]
    }

    /// Applies one `key=value` setting; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "image_size" => self.image_size = num(key, value)?,
            "in_channels" => self.in_channels = num(key, value)?,
            "out_channels" => self.out_channels = num(key, value)?,
            "base_width" => self.base_width = num(key, value)?,
            "width_cap" => self.width_cap = num(key, value)?,
            "critic_levels" => self.critic_levels = num(key, value)?,
            "critic_patch_levels" => {
                self.critic_patch_levels = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| num(key, s))
                    .collect::<Result<_>>()?
            }
            "critic_norm" => self.critic_norm = value.trim().parse()?,
            "critic_conditioned" => self.critic_conditioned = num(key, value)?,
            "dropout_layers" => self.dropout_layers = num(key, value)?,
            "dropout_rate" => self.dropout_rate = num(key, value)?,
            other => return Err(Error::Config(format!("unknown net key {other:?}"))),
        }
        Ok(())
    }

    pub fn keys() -> Vec<&'static str> {
        Self::full().to_pairs().into_iter().map(|(k, _)| k).collect()
    }

    /// `key=value` lines, one per field.
    pub fn to_kv(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// Parses the `net.`-prefixed entries of a header map.
    pub fn from_header(entries: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = Self::full();
        let mut seen = 0;
        for (k, v) in entries {
            if let Some(key) = k.strip_prefix("net.") {
                cfg.set(key, v)?;
                seen += 1;
            }
        }
        if seen != Self::keys().len() {
            return Err(Error::Checkpoint(format!(
                "header describes {seen} of {} network fields",
                Self::keys().len()
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
