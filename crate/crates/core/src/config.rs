//! Run configuration: named presets overridden by a TOML file.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::AdamConfig;
use crate::pipeline::ModelConfig;
use crate::training::{InitConfig, TrainConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Full-scale schedule for real datasets.
    Paper,
    /// Small schedule that finishes on a laptop CPU.
    #[default]
    Desk,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            _ => Err(Error::Config(format!(
                "unknown preset {s:?} (expected paper or desk)"
            ))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub preset: Preset,
    pub model: ModelConfig,
    pub init: InitConfig,
    pub train: TrainConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config::preset(Preset::Desk)
    }
}

impl Config {
    pub fn preset(preset: Preset) -> Self {
        let adam = AdamConfig::default();
        match preset {
            Preset::Paper => Config {
                preset,
                model: ModelConfig::default(),
                init: InitConfig {
                    iterations: 100_000,
                    levels: 40,
                    source_images: 500,
                    image_size: 256,
                    adam,
                    ..InitConfig::default()
                },
                train: TrainConfig {
                    iterations: 600_000,
                    crop_size: 256,
                    adam,
                    checkpoint_every: 10_000,
                    ..TrainConfig::default()
                },
            },
            Preset::Desk => Config {
                preset,
                model: ModelConfig::default(),
                init: InitConfig {
                    iterations: 2_000,
                    levels: 9,
                    source_images: 50,
                    image_size: 64,
                    adam,
                    ..InitConfig::default()
                },
                train: TrainConfig {
                    iterations: 20_000,
                    crop_size: 128,
                    adam,
                    checkpoint_every: 2_000,
                    ..TrainConfig::default()
                },
            },
        }
    }

    /// Parses TOML; keys present in the file override the preset it names
    /// (`preset = "paper"`), or `fallback` when it names none.
    pub fn from_toml_str(text: &str, fallback: Preset) -> Result<Self> {
        let user: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let preset = match user.get("preset") {
            None => fallback,
            Some(toml::Value::String(s)) => s.parse()?,
            Some(other) => {
                return Err(Error::Config(format!(
                    "preset must be a string, got {other}"
                )))
            }
        };
        let mut base = toml::Table::try_from(Config::preset(preset))
            .map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, user);
        let config: Config = base
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, fallback: Preset) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text, fallback).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.init.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.init.iterations == 0 || self.init.levels < 2 || self.init.image_size == 0 {
            return Err(Error::Config(
                "init needs iterations >= 1, levels >= 2 and a positive image_size".into(),
            ));
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::InitMode;

    #[test]
    fn presets() {
        let paper = Config::preset(Preset::Paper);
        assert_eq!(paper.init.iterations, 100_000);
        assert_eq!(paper.init.levels, 40);
        assert_eq!(paper.train.iterations, 600_000);
        assert_eq!(paper.train.batch_size, 1);
        assert_eq!(paper.train.adam.lr, 5e-5);
        assert_eq!(Config::default().train.iterations, 20_000);
    }

    #[test]
    fn toml_overrides_the_named_preset() {
        let c = Config::from_toml_str(
            "preset = \"paper\"\n[train]\niterations = 7\ninit_mode = \"standard-fixed\"\n[train.loss.terms]\ntv = false\n",
            Preset::Desk,
        )
        .unwrap();
        assert_eq!(c.preset, Preset::Paper);
        assert_eq!(c.train.iterations, 7);
        assert_eq!(c.train.crop_size, 256);
        assert_eq!(c.train.init_mode, InitMode::StandardFixed);
        assert!(!c.train.loss.terms.tv);
        assert!(c.train.loss.terms.color);
        assert_eq!(c.init.levels, 40);
    }

    #[test]
    fn round_trip_and_errors() {
        let c = Config::preset(Preset::Desk);
        let back = Config::from_toml_str(&c.to_toml_string().unwrap(), Preset::Paper).unwrap();
        assert_eq!(back, c);
        assert!(Config::from_toml_str("[train]\niteratons = 3\n", Preset::Desk).is_err());
        assert!(Config::from_toml_str("[train]\niterations = 0\n", Preset::Desk).is_err());
        assert!(Config::from_toml_str("preset = \"huge\"\n", Preset::Desk).is_err());
    }
}
