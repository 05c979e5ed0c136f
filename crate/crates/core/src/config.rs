//! Plain-text `key = value` experiment files.
//!
//! ```text
//! # single content, four-slot look-ahead
//! F = 1
//! delta = 4
//! aoi_cap = 50
//! users = 2
//! rates = 0.5
//! eta = 2
//! seed = 7
//! ```
//!
//! `users` and `rates` take comma-separated per-content lists; a single value
//! is repeated for every content. Trainer keys (`episodes`, `episode_len`,
//! `target_update`, `batch`, `learning_rate`, `eps_min`, `eps_max`,
//! `eps_decay`, `replay_capacity`) are optional and default to the standard
//! training setup.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::agents::EpsilonSchedule;
use crate::dqn::TrainerConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

pub const MODEL_KEYS: &[&str] = &["F", "delta", "aoi_cap", "users", "rates", "eta", "seed"];
pub const TRAINER_KEYS: &[&str] = &[
    "episodes",
    "episode_len",
    "target_update",
    "batch",
    "learning_rate",
    "eps_min",
    "eps_max",
    "eps_decay",
    "replay_capacity",
];

/// Parsed experiment file. Keys are validated on parse; values on use.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            Self::insert(&mut entries, line, i + 1)?;
        }
        Ok(Self { entries })
    }

    /// Parses the `;`-separated form produced by [`ModelConfig::canonical`].
    pub fn parse_canonical(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, item) in text.split(';').enumerate() {
            let item = item.trim();
            if !item.is_empty() {
                Self::insert(&mut entries, item, i + 1)?;
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn insert(entries: &mut BTreeMap<String, String>, item: &str, line: usize) -> Result<()> {
        let (key, value) = item.split_once('=').ok_or_else(|| Error::ConfigParse {
            line,
            message: format!("expected `key = value`, found `{item}`"),
        })?;
        let key = key.trim();
        if !MODEL_KEYS.contains(&key) && !TRAINER_KEYS.contains(&key) {
            return Err(Error::ConfigParse {
                line,
                message: format!("unknown key `{key}`"),
            });
        }
        if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(Error::ConfigParse {
                line,
                message: format!("duplicate key `{key}`"),
            });
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    fn value<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::InvalidConfig(format!("cannot parse `{key} = {v}`")))
            })
            .transpose()
    }

    fn required<T: FromStr>(&self, key: &str) -> Result<T> {
        self.value(key)?
            .ok_or_else(|| Error::InvalidConfig(format!("missing required key `{key}`")))
    }

    fn list<T: FromStr + Clone>(&self, key: &str, len: Option<usize>) -> Result<Vec<T>> {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::InvalidConfig(format!("missing required key `{key}`")))?;
        let items = raw
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<T>()
                    .map_err(|_| Error::InvalidConfig(format!("cannot parse `{key}` entry `{v}`")))
            })
            .collect::<Result<Vec<T>>>()?;
        match len {
            Some(n) if items.len() == 1 => Ok(vec![items[0].clone(); n]),
            Some(n) if items.len() != n => Err(Error::InvalidConfig(format!(
                "`{key}` has {} entries but F = {n}",
                items.len()
            ))),
            _ => Ok(items),
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let contents: Option<usize> = self.value("F")?;
        let users: Vec<u32> = self.list("users", contents)?;
        let rates: Vec<f64> = self.list("rates", Some(contents.unwrap_or(users.len())))?;
        let users = if users.len() == 1 && rates.len() > 1 {
            vec![users[0]; rates.len()]
        } else {
            users
        };
        ModelConfig::new(
            self.required("delta")?,
            self.required("aoi_cap")?,
            users,
            rates,
            self.value("eta")?.unwrap_or(0.0),
        )
    }

    pub fn seed(&self) -> Result<Option<u64>> {
        self.value("seed")
    }

    /// Trainer settings: defaults overridden by any trainer keys present.
    pub fn trainer_config(&self) -> Result<TrainerConfig> {
        let d = TrainerConfig::default();
        let config = TrainerConfig {
            episodes: self.value("episodes")?.unwrap_or(d.episodes),
            episode_len: self.value("episode_len")?.unwrap_or(d.episode_len),
            target_update: self.value("target_update")?.unwrap_or(d.target_update),
            batch_size: self.value("batch")?.unwrap_or(d.batch_size),
            learning_rate: self.value("learning_rate")?.unwrap_or(d.learning_rate),
            epsilon: EpsilonSchedule::new(
                self.value("eps_min")?.unwrap_or(d.epsilon.min),
                self.value("eps_max")?.unwrap_or(d.epsilon.max),
                self.value("eps_decay")?.unwrap_or(d.epsilon.decay),
            )?,
            replay_capacity: self.value("replay_capacity")?.unwrap_or(d.replay_capacity),
            seed: self.seed()?.unwrap_or(d.seed),
            reference_state: None,
        };
        config.validate()?;
        Ok(config)
    }
}

impl ModelConfig {
    /// Inverse of [`ModelConfig::canonical`].
    pub fn from_canonical(text: &str) -> Result<Self> {
        ConfigFile::parse_canonical(text)?.model_config()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const OPERATING_POINT: &str = "\
# operating point
F = 1
delta = 4
aoi_cap = 50
users = 2
rates = 0.5
eta = 2   # update cost
seed = 7
";

    #[test]
    fn parses_the_operating_point() {
        let file = ConfigFile::parse(OPERATING_POINT).unwrap();
        let config = file.model_config().unwrap();
        assert_eq!(config, ModelConfig::default_operating_point(2.0).unwrap());
        assert_eq!(file.seed().unwrap(), Some(7));
        let trainer = file.trainer_config().unwrap();
        assert_eq!(trainer.seed, 7);
        assert_eq!(trainer.episodes, 200);
    }

    #[test]
    fn broadcasts_scalar_lists() {
        let file = ConfigFile::parse("F=3\ndelta=1\naoi_cap=4\nusers=1\nrates=0.2,0.3,0.4").unwrap();
        let config = file.model_config().unwrap();
        assert_eq!(config.users(), &[1, 1, 1]);
        assert_eq!(config.arrival_rates(), &[0.2, 0.3, 0.4]);
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        assert!(ConfigFile::parse("colour = red").is_err());
        assert!(ConfigFile::parse("eta = 1\neta = 2").is_err());
        assert!(ConfigFile::parse("just words").is_err());
        let missing = ConfigFile::parse("F = 1\nusers = 2\nrates = 0.5").unwrap();
        assert!(missing.model_config().is_err());
        let mismatch = ConfigFile::parse("F=2\ndelta=1\naoi_cap=4\nusers=1,2,3\nrates=0.5").unwrap();
        assert!(mismatch.model_config().is_err());
    }

    #[test]
    fn canonical_round_trip() {
        let config = ModelConfig::new(2, 9, vec![1, 3], vec![0.25, 0.7], 0.125).unwrap();
        assert_eq!(ModelConfig::from_canonical(&config.canonical()).unwrap(), config);
    }

    #[test]
    fn trainer_overrides() {
        let file = ConfigFile::parse("episodes = 3\nbatch = 8\neps_max = 0.5\nlearning_rate = 0.1").unwrap();
        let t = file.trainer_config().unwrap();
        assert_eq!((t.episodes, t.batch_size), (3, 8));
        assert_eq!(t.epsilon.max, 0.5);
        assert_eq!(t.learning_rate, 0.1);
    }
}
