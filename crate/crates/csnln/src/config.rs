//! Flat `key = value` configuration files for training runs.
//!
//! UTF-8 text; `#` starts a comment (whole-line or trailing); blank lines
//! are skipped; unknown keys are errors so typos fail loudly; a repeated
//! key takes its last value, which lets scripts append overrides to a base
//! config. Every key has a default, so the empty string parses to the
//! default run.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::network::ModelConfig;
use crate::sem::SemBranches;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Toy,
    Paper,
}

/// The training recipe: optimizer schedule, patch sampling, model preset,
/// dataset locations, and the ablation toggles.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub preset: Preset,
    pub scale: usize,
    pub batch: usize,
    /// HR crop side; the LR crop is `crop / scale`.
    pub crop: usize,
    pub lr: f64,
    pub halve_every: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub seed: u64,
    pub train_dir: PathBuf,
    pub val_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub isnl: bool,
    pub csnl: bool,
    pub local: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            preset: Preset::Toy,
            scale: 2,
            batch: 16,
            crop: 48,
            lr: 1e-4,
            halve_every: 150,
            epochs: 500,
            steps_per_epoch: 50,
            seed: 0,
            train_dir: PathBuf::from("data/train"),
            val_dir: None,
            out_dir: PathBuf::from("runs/default"),
            isnl: true,
            csnl: true,
            local: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        if self.crop == 0 || self.crop % self.scale != 0 {
            return Err(Error::Config(format!(
                "crop {} must be a positive multiple of scale {}",
                self.crop, self.scale
            )));
        }
        if self.steps_per_epoch == 0 {
            return Err(Error::Config("steps_per_epoch must be >= 1".into()));
        }
        self.model_config().validate()
    }

    /// The architecture this run trains.
    pub fn model_config(&self) -> ModelConfig {
        let mut mc = match self.preset {
            Preset::Toy => ModelConfig::toy(self.scale),
            Preset::Paper => ModelConfig::paper(self.scale),
        };
        mc.branches = SemBranches { local: self.local, isnl: self.isnl, csnl: self.csnl };
        mc
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "preset = {}", match self.preset { Preset::Toy => "toy", Preset::Paper => "paper" })?;
        writeln!(f, "scale = {}", self.scale)?;
        writeln!(f, "batch = {}", self.batch)?;
        writeln!(f, "crop = {}", self.crop)?;
        writeln!(f, "lr = {}", self.lr)?;
        writeln!(f, "halve_every = {}", self.halve_every)?;
        writeln!(f, "epochs = {}", self.epochs)?;
        writeln!(f, "steps_per_epoch = {}", self.steps_per_epoch)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "train_dir = {}", self.train_dir.display())?;
        if let Some(v) = &self.val_dir {
            writeln!(f, "val_dir = {}", v.display())?;
        }
        writeln!(f, "out_dir = {}", self.out_dir.display())?;
        writeln!(f, "isnl = {}", self.isnl)?;
        writeln!(f, "csnl = {}", self.csnl)?;
        write!(f, "local = {}", self.local)
    }
}

fn parse_key<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| {
        Error::Config(format!("cannot parse {key} value {value:?}"))
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key} must be true or false, got {value:?}"
        ))),
    }
}

/// Parse configuration text. The result is validated.
pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key = value, got {raw:?}", lineno + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "preset" => {
                cfg.preset = match value {
                    "toy" => Preset::Toy,
                    "paper" => Preset::Paper,
                    _ => {
                        return Err(Error::Config(format!(
                            "preset must be toy or paper, got {value:?}"
                        )))
                    }
                }
            }
            "scale" => cfg.scale = parse_key(key, value)?,
            "batch" => cfg.batch = parse_key(key, value)?,
            "crop" => cfg.crop = parse_key(key, value)?,
            "lr" => cfg.lr = parse_key(key, value)?,
            "halve_every" => cfg.halve_every = parse_key(key, value)?,
            "epochs" => cfg.epochs = parse_key(key, value)?,
            "steps_per_epoch" => cfg.steps_per_epoch = parse_key(key, value)?,
            "seed" => cfg.seed = parse_key(key, value)?,
            "train_dir" => cfg.train_dir = PathBuf::from(value),
            "val_dir" => cfg.val_dir = Some(PathBuf::from(value)),
            "out_dir" => cfg.out_dir = PathBuf::from(value),
            "isnl" => cfg.isnl = parse_bool(key, value)?,
            "csnl" => cfg.csnl = parse_bool(key, value)?,
            "local" => cfg.local = parse_bool(key, value)?,
            _ => {
                return Err(Error::Config(format!(
                    "line {}: unknown key {key:?}",
                    lineno + 1
                )))
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
        Error::Config(format!("cannot read {}: {e}", path.as_ref().display()))
    })?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, TrainConfig::default());
        assert_eq!(cfg.batch, 16);
        assert_eq!(cfg.crop, 48);
        assert_eq!(cfg.lr, 1e-4);
        assert_eq!(cfg.halve_every, 150);
        assert_eq!(cfg.epochs, 500);
    }

    #[test]
    fn full_file_parses() {
        let text = "
            # a training run
            preset = paper
            scale = 3
            batch = 4          # small batch
            crop = 24
            lr = 5e-5
            halve_every = 10
            epochs = 20
            steps_per_epoch = 7
            seed = 123
            train_dir = data/tr
            val_dir = data/va
            out_dir = runs/x
            isnl = true
            csnl = false
            local = true
        ";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.preset, Preset::Paper);
        assert_eq!(cfg.scale, 3);
        assert_eq!(cfg.batch, 4);
        assert_eq!(cfg.crop, 24);
        assert_eq!(cfg.lr, 5e-5);
        assert_eq!(cfg.seed, 123);
        assert_eq!(cfg.val_dir.as_deref(), Some(Path::new("data/va")));
        assert!(!cfg.csnl);
        let mc = cfg.model_config();
        assert_eq!(mc.scale, 3);
        assert!(!mc.branches.csnl && mc.branches.isnl);
    }

    #[test]
    fn unknown_key_and_syntax_errors() {
        assert!(matches!(
            parse_config("batsh = 16"),
            Err(Error::Config(m)) if m.contains("unknown key")
        ));
        assert!(matches!(
            parse_config("just words"),
            Err(Error::Config(m)) if m.contains("key = value")
        ));
        assert!(matches!(
            parse_config("batch = sixteen"),
            Err(Error::Config(m)) if m.contains("cannot parse")
        ));
        assert!(matches!(
            parse_config("csnl = yes"),
            Err(Error::Config(m)) if m.contains("true or false")
        ));
        assert!(matches!(
            parse_config("preset = huge"),
            Err(Error::Config(m)) if m.contains("preset")
        ));
    }

    #[test]
    fn appended_override_wins() {
        let cfg = parse_config("batch = 8\nbatch = 2\n").unwrap();
        assert_eq!(cfg.batch, 2);
    }

    #[test]
    fn validation_failures() {
        assert!(parse_config("batch = 0").is_err());
        assert!(parse_config("crop = 49").is_err()); // not a multiple of scale 2
        assert!(parse_config("scale = 5").is_err());
        assert!(parse_config("steps_per_epoch = 0").is_err());
        // crop 48 works for scale 3 and 4 too.
        assert!(parse_config("scale = 3").is_ok());
        assert!(parse_config("scale = 4").is_ok());
    }

    #[test]
    fn display_round_trips() {
        let mut cfg = TrainConfig::default();
        cfg.val_dir = Some(PathBuf::from("data/val"));
        cfg.csnl = false;
        cfg.seed = 7;
        let back = parse_config(&cfg.to_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn file_loading() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "epochs = 3\n").unwrap();
        assert_eq!(load_config(&path).unwrap().epochs, 3);
        assert!(load_config(dir.path().join("absent.cfg")).is_err());
    }
}
