//! JSON run configuration shared by `train`, `eval` and `ablate`.

use std::fs;
use std::path::{Path, PathBuf};

use edu4fd::corpus::{load_corpus, split_corpus, Corpus, SplitSpec};
use edu4fd::discourse::GraphMode;
use edu4fd::model::ModelConfig;
use edu4fd::pipeline::{PrepareConfig, SplitDocs};
use edu4fd::segmenter::{CueLexicon, SegmentMode};
use edu4fd::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "EDU4FD_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSet {
    pub name: String,
    pub path: PathBuf,
}

/// Either one `corpus` split by `split`, or explicit `train` and `val`
/// files. `tests` are extra held-out sets evaluated alongside.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val: Option<PathBuf>,
    pub tests: Vec<TestSet>,
    pub split: SplitSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareSection {
    pub segment: SegmentMode,
    pub graph: GraphMode,
    pub max_edu_len: usize,
    /// Cue lexicon for rule segmentation; the bundled one when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<PathBuf>,
}

impl Default for PrepareSection {
    fn default() -> Self {
        Self {
            segment: SegmentMode::Gold,
            graph: GraphMode::Provided,
            max_edu_len: 200,
            lexicon: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub prepare: PrepareSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Independent training runs averaged by `ablate`.
    pub trials: usize,
    pub min_count: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            prepare: PrepareSection::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            trials: 5,
            min_count: 1,
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Parses a config; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_json(&text).map_err(|e| e.context(path))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let base = if base.as_os_str().is_empty() { Path::new(".") } else { base };
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::invalid(e.to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let d = &mut self.data;
        for p in [&mut d.corpus, &mut d.train, &mut d.val, &mut self.prepare.lexicon]
            .into_iter()
            .flatten()
        {
            resolve(base, p);
        }
        for t in &mut d.tests {
            resolve(base, &mut t.path);
        }
    }

    /// Seed precedence: flag, then environment, then file.
    pub fn apply_seed(&mut self, flag: Option<u64>, env: Option<&str>) -> Result<(), CliError> {
        if let Some(s) = flag {
            self.train.seed = s;
        } else if let Some(v) = env {
            self.train.seed = v
                .trim()
                .parse()
                .map_err(|_| CliError::invalid(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate()?;
        self.train.validate()?;
        let bad = |m: &str| Err(CliError::invalid(format!("invalid config: {m}")));
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.min_count == 0 {
            return bad("min_count must be at least 1");
        }
        if self.prepare.max_edu_len == 0 {
            return bad("prepare.max_edu_len must be at least 1");
        }
        let d = &self.data;
        match (&d.corpus, &d.train, &d.val) {
            (Some(_), None, None) => {
                let ok = |f: f64| f > 0.0 && f < 1.0;
                if !ok(d.split.test_fraction) || !ok(d.split.val_fraction_of_rest) {
                    return bad("data.split fractions must lie in (0, 1)");
                }
            }
            (None, Some(_), Some(_)) => {}
            (None, None, None) => return bad("data needs either corpus or train and val"),
            _ => return bad("data.corpus excludes data.train and data.val, which go together"),
        }
        let mut names: Vec<&str> = d.tests.iter().map(|t| t.name.as_str()).collect();
        if d.corpus.is_some() {
            names.push("test");
        }
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return bad(&format!("test set name {:?} is used twice", w[0]));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }

    pub fn prepare_config(&self) -> Result<PrepareConfig, CliError> {
        let lexicon = match &self.prepare.lexicon {
            Some(p) => CueLexicon::load(p).map_err(|e| CliError::from(e).context(p))?,
            None => CueLexicon::default(),
        };
        Ok(PrepareConfig {
            segment: self.prepare.segment,
            graph: self.prepare.graph,
            max_edu_len: self.prepare.max_edu_len,
            granularity: self.model.granularity,
            lexicon,
        })
    }

    /// Loads the configured splits. A single corpus contributes its held-out
    /// part as the test set named `test`, ahead of any extra sets.
    pub fn load_splits(&self) -> Result<SplitDocs, CliError> {
        let load = |p: &Path| -> Result<Corpus, CliError> {
            let loaded = load_corpus(p)?;
            if loaded.dropped > 0 {
                log::info!("{}: dropped {} documents with fewer than 2 EDUs", p.display(), loaded.dropped);
            }
            Ok(loaded.corpus)
        };
        let mut tests = Vec::new();
        let (train, val) = match (&self.data.corpus, &self.data.train, &self.data.val) {
            (Some(c), _, _) => {
                let s = split_corpus(&load(c)?, &self.data.split)?;
                tests.push(("test".to_string(), s.test));
                (s.train, s.val)
            }
            (None, Some(t), Some(v)) => (load(t)?, load(v)?),
            _ => return Err(CliError::invalid("data needs either corpus or train and val")),
        };
        for t in &self.data.tests {
            tests.push((t.name.clone(), load(&t.path)?));
        }
        Ok(SplitDocs { train, val, tests })
    }
}
