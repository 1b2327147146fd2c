//! Plain-text `key=value` run configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use psyn_core::nn::NetConfig;
use psyn_core::train::{jitter_size, LossWeights, TrainConfig};
use psyn_core::{Error, Result};

/// Every accepted key with its default and a one-line description.
/// `auto` and the empty string mean "unset".
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "seed for every random stream of the run"),
    ("run.out", "runs", "parent of the timestamped run directories"),
    ("net.preset", "desk", "desk | full; supplies every net key not set explicitly"),
    ("net.image_size", "auto", "frame side, a power of two >= 32; dataset frame size, else 64"),
    ("net.in_channels", "preset", "condition channels"),
    ("net.out_channels", "preset", "generated channels"),
    ("net.base_width", "preset", "width of the first encoder layer"),
    ("net.width_cap", "preset", "maximum layer width"),
    ("net.critic_levels", "preset", "stride-2 layers in the critic trunk"),
    ("net.critic_patch_levels", "preset", "comma list of critic score map sides"),
    ("net.critic_norm", "preset", "batch | none"),
    ("net.critic_conditioned", "preset", "critic sees the condition image"),
    ("net.dropout_layers", "preset", "decoder layers with dropout"),
    ("net.dropout_rate", "preset", "dropout probability"),
    ("train.lr", "0.0002", "Adam learning rate"),
    ("train.beta1", "0.5", "Adam beta1"),
    ("train.beta2", "0.999", "Adam beta2"),
    ("train.batch_size", "1", "frames per batch"),
    ("train.critic_iters_per_gen", "5", "critic updates per generator update"),
    ("train.total_steps", "2000", "generator updates"),
    ("train.jitter_resize", "auto", "resize side before the random crop; 312/256 of the frame side"),
    ("train.checkpoint_every", "0", "save a checkpoint every N steps; 0 keeps only the final one"),
    ("loss.lambda_reconst", "100", "weight of the L1 reconstruction term"),
    ("loss.lambda_gp", "10", "gradient penalty weight"),
    ("loss.patch_weights", "auto", "comma list, one weight per critic head; all 1"),
    ("data.images", "", "directory of PNG frames"),
    ("data.masks", "", "directory of binary PNG masks named like the frames"),
    ("data.id_map", "", "CSV filename,polyp_id; without it each frame is its own polyp"),
    ("data.dilation", "10", "mask dilation radius for polyp-to-negative inference"),
    ("fixtures.n", "8", "number of synthetic fixture frames"),
    ("fixtures.size", "64", "fixture frame side"),
    ("fixtures.ids", "auto", "distinct polyp ids among the fixtures; fixtures.n"),
    ("gen.p2n", "", "polyp-to-negative checkpoint"),
    ("gen.n2p", "", "negative-to-polyp checkpoint"),
    ("gen.negatives", "", "directory of negative frames; used instead of data.images as sources"),
    ("gen.library", "", "directory of mask PNGs to draw shapes from; data.masks"),
    ("gen.count", "10", "number of samples to generate"),
    ("gen.value", "assigned", "identity grey value: assigned (uniform over the identity values) or a fixed 0-255"),
    ("eval.counts", "", "prematched counts CSV label,tp,fp,fn,tn"),
    ("eval.detections", "", "detections CSV frame_id,x1,y1,x2,y2,score"),
    ("eval.gt", "", "directory of ground-truth mask PNGs"),
    ("eval.pred", "", "directory of predicted mask or score PNGs"),
    ("eval.threshold", "0.5", "score threshold for predicted masks, inclusive"),
    ("eval.sweep", "", "CSV of n_synthetic with counts or metrics"),
    ("bench.sizes", "64,256", "comma list of frame sides to benchmark"),
    ("bench.runs", "10", "timed forward passes per size, at least 10"),
    ("bench.warmup", "2", "untimed passes before timing"),
];

pub fn is_known(key: &str) -> bool {
    KEYS.iter().any(|(k, ..)| *k == key)
}

/// Listing for `--help`.
pub fn keys_help() -> String {
    let width = KEYS.iter().map(|(k, ..)| k.len()).max().unwrap_or(0);
    let mut out = String::from(
        "Configuration keys (config file lines or --set KEY=VALUE; flags win over --set, which wins over the file):\n",
    );
    for (k, default, help) in KEYS {
        let default = if default.is_empty() { "unset" } else { default };
        out.push_str(&format!("  {k:width$}  [{default}] {help}\n"));
    }
    out.push_str("\nEnvironment: PSYN_THREADS caps worker threads.\n");
    out.push_str("Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.");
    out
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Parses `key=value` lines; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
            if cfg.values.contains_key(k.trim()) {
                return Err(Error::Config(format!("line {}: {} set twice", i + 1, k.trim())));
            }
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !is_known(key) {
            return Err(Error::Config(format!("unknown key {key:?}")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `KEY=VALUE` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {pair:?}")))?;
        self.set(k.trim(), v.trim())
    }

    /// The explicit value of `key`, `None` when unset or `auto`.
    pub fn get(&self, key: &str) -> Option<&str> {
        debug_assert!(is_known(key), "{key}");
        self.values
            .get(key)
            .map(|v| v.trim())
            .filter(|v| !v.is_empty() && *v != "auto")
    }

    /// The explicit value, else the table default (`None` when that is unset).
    fn raw(&self, key: &str) -> Option<&str> {
        self.get(key).or_else(|| {
            KEYS.iter()
                .find(|(k, ..)| *k == key)
                .map(|(_, d, _)| *d)
                .filter(|d| !d.is_empty() && *d != "auto" && *d != "preset")
        })
    }

    pub fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}"))))
            .transpose()
    }

    /// Value of a key that has a default.
    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        self.parse_opt(key)?
            .ok_or_else(|| Error::Config(format!("{key} is required")))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key).ok_or_else(|| Error::Config(format!("{key} is required")))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| {
                        s.trim()
                            .parse()
                            .map_err(|_| Error::Config(format!("{key}: cannot parse {s:?}")))
                    })
                    .collect()
            })
            .transpose()
    }

    /// Records a value the run derived, unless the key was set explicitly.
    pub fn resolve(&mut self, key: &str, value: impl ToString) {
        if self.get(key).is_none() {
            self.values.insert(key.to_string(), value.to_string());
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse("seed")
    }

    /// Network for frames of side `size_hint` unless `net.image_size` is set.
    pub fn net(&mut self, size_hint: Option<usize>) -> Result<NetConfig> {
        let size = match self.parse_opt::<usize>("net.image_size")? {
            Some(s) => s,
            None => size_hint.unwrap_or(64),
        };
        let mut net = self.preset(size)?;
        for key in NetConfig::keys() {
            if let Some(v) = self.get(&format!("net.{key}")) {
                net.set(key, v)?;
            }
        }
        net.validate()?;
        self.resolve("net.preset", "desk");
        for (k, v) in net.to_pairs() {
            self.resolve(&format!("net.{k}"), v);
        }
        Ok(net)
    }

    /// Preset network at `size`, ignoring explicit `net.*` fields.
    pub fn preset(&self, size: usize) -> Result<NetConfig> {
        Ok(match self.get("net.preset").unwrap_or("desk") {
            "desk" => NetConfig::desk(size),
            "full" => NetConfig {
                image_size: size,
                critic_patch_levels: vec![size / 4, size / 16],
                ..NetConfig::full()
            },
            other => return Err(Error::Config(format!("net.preset: unknown preset {other:?} (desk|full)"))),
        })
    }

    pub fn train(&mut self, net: &NetConfig) -> Result<TrainConfig> {
        let mut t = TrainConfig::for_size(net.image_size);
        t.lr = self.parse("train.lr")?;
        t.beta1 = self.parse("train.beta1")?;
        t.beta2 = self.parse("train.beta2")?;
        t.batch_size = self.parse("train.batch_size")?;
        t.critic_iters_per_gen = self.parse("train.critic_iters_per_gen")?;
        t.total_steps = self.parse("train.total_steps")?;
        t.jitter_resize = self
            .parse_opt("train.jitter_resize")?
            .unwrap_or_else(|| jitter_size(net.image_size));
        t.checkpoint_every = self.parse("train.checkpoint_every")?;
        t.seed = self.seed()?;
        t.validate(net.image_size)?;
        self.resolve("train.jitter_resize", t.jitter_resize);
        Ok(t)
    }

    pub fn loss(&mut self, net: &NetConfig) -> Result<LossWeights> {
        let mut w = LossWeights::for_net(net);
        w.lambda_reconst = self.parse("loss.lambda_reconst")?;
        w.lambda_gp = self.parse("loss.lambda_gp")?;
        if let Some(pw) = self.list("loss.patch_weights")? {
            w.patch_weights = pw;
        }
        w.validate()?;
        let pw: Vec<String> = w.patch_weights.iter().map(|v| v.to_string()).collect();
        self.resolve("loss.patch_weights", pw.join(","));
        Ok(w)
    }

    /// Every key in table order: explicit or resolved value, else the default.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|(k, default, _)| {
                let v = self.values.get(*k).map(String::as_str).unwrap_or(default);
                let v = if v == "preset" { "auto" } else { v };
                format!("{k}={v}\n")
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn net_keys_cover_every_network_field() {
        let listed: Vec<&str> = KEYS
            .iter()
            .filter_map(|(k, ..)| k.strip_prefix("net."))
            .filter(|k| *k != "preset")
            .collect();
        assert_eq!(listed, NetConfig::keys());
    }

    #[test]
    fn unknown_and_malformed_lines_rejected() {
        assert!(RunConfig::from_text("nope=1").is_err());
        assert!(RunConfig::from_text("seed").is_err());
        assert!(RunConfig::from_text("seed=1\nseed=2").is_err());
        let c = RunConfig::from_text("# comment\nseed = 7 # trailing\n\ngen.value=auto\n").unwrap();
        assert_eq!(c.seed().unwrap(), 7);
        assert_eq!(c.get("gen.value"), None);
    }

    #[test]
    fn archived_text_reloads_to_the_same_network_and_schedule() {
        let mut a = RunConfig::from_text("net.preset=full\ntrain.total_steps=3\nloss.lambda_gp=2").unwrap();
        let net = a.net(Some(32)).unwrap();
        let train = a.train(&net).unwrap();
        let loss = a.loss(&net).unwrap();
        assert_eq!(net.critic_patch_levels, vec![8, 2]);
        assert_eq!(train.jitter_resize, 39);

        let mut b = RunConfig::from_text(&a.to_text()).unwrap();
        let net_b = b.net(None).unwrap();
        assert_eq!(net_b, net);
        assert_eq!(b.train(&net_b).unwrap(), train);
        assert_eq!(b.loss(&net_b).unwrap(), loss);
        assert_eq!(b.to_text(), a.to_text());
    }
}
