use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Training run settings, read from a flat `key = value` file.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f32,
    pub batch: usize,
    pub steps: u64,
    pub patch: usize,
    pub scales: Vec<u32>,
    pub stride: usize,
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Feed the scale code α to the target network.
    pub scale_input: bool,
    pub log_every: u64,
    /// Save the checkpoint every this many steps (0 = only at the end).
    pub save_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch: 8,
            steps: 1000,
            patch: 32,
            scales: vec![2, 3, 4],
            stride: 16,
            seed: 0,
            dataset: None,
            checkpoint: None,
            scale_input: true,
            log_every: 50,
            save_every: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: invalid value `{value}` for `{key}`")))
}

impl TrainConfig {
    /// Parses config text. Relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut c = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config(format!("line {line}: expected `key = value`, got `{content}`")))?;
            match key {
                "lr" => c.lr = parse(key, value, line)?,
                "batch" => c.batch = parse(key, value, line)?,
                "steps" => c.steps = parse(key, value, line)?,
                "patch" => c.patch = parse(key, value, line)?,
                "stride" => c.stride = parse(key, value, line)?,
                "seed" => c.seed = parse(key, value, line)?,
                "scale_input" => c.scale_input = parse(key, value, line)?,
                "log_every" => c.log_every = parse(key, value, line)?,
                "save_every" => c.save_every = parse(key, value, line)?,
                "scales" => {
                    c.scales = value
                        .split(',')
                        .map(|s| parse(key, s.trim(), line))
                        .collect::<Result<Vec<u32>>>()?;
                }
                "dataset" => c.dataset = Some(base.join(value)),
                "checkpoint" => c.checkpoint = Some(base.join(value)),
                _ => return Err(Error::Config(format!("line {line}: unknown key `{key}`"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("learning rate {} must be finite and non-negative", self.lr)));
        }
        if self.batch == 0 || self.patch == 0 || self.stride == 0 {
            return Err(Error::Config("batch, patch and stride must be positive".into()));
        }
        if self.scales.is_empty() || self.scales.iter().any(|&s| !(1..=4).contains(&s)) {
            return Err(Error::Config(format!("scales {:?} must be a non-empty subset of 1..=4", self.scales)));
        }
        Ok(())
    }
}
