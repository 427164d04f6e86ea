use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::ModelConfig;
use crate::task::TaskKind;
use crate::trainer::{Stage, StagePlan};

use super::{io_error, PipelineError};

/// Input files, relative to the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    /// Texts for pre-training: `{"id","text"}` lines.
    #[serde(default)]
    pub mlm: Option<PathBuf>,
    /// Pair-training data: `{"q","p","dataset"}` lines.
    #[serde(default)]
    pub pairs: Option<PathBuf>,
    /// Adapter data keyed by task name ("retrieval" covers both retrieval adapters).
    #[serde(default)]
    pub adapters: BTreeMap<String, PathBuf>,
    /// Pair data mixed into separation training.
    #[serde(default)]
    pub separation_pairs: Option<PathBuf>,
}

fn default_k() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    #[serde(default = "default_k")]
    pub k: usize,
    /// Dims for the MRL sweep; empty means every dim the model supports.
    #[serde(default)]
    pub dims: Vec<usize>,
    /// Stamp reports with the wall-clock time (breaks byte-reproducibility).
    #[serde(default)]
    pub timestamp: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            k: default_k(),
            dims: Vec::new(),
            timestamp: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds model initialisation and every stage; required.
    pub seed: u64,
    pub model: ModelConfig,
    pub stages: Vec<StagePlan>,
    #[serde(default)]
    pub data: DataPaths,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn same_task(a: TaskKind, b: TaskKind) -> bool {
    let retrieval = |t| matches!(t, TaskKind::RetrievalQuery | TaskKind::RetrievalPassage);
    a == b || (retrieval(a) && retrieval(b))
}

impl RunConfig {
    pub fn from_json(json: &str) -> Result<Self, PipelineError> {
        let mut cfg: RunConfig =
            serde_json::from_str(json).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.derive_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, resolves relative paths against the file's directory and validates.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(io_error(path))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn derive_seeds(&mut self) {
        self.model.seed = self.seed;
        for (i, plan) in self.stages.iter_mut().enumerate() {
            plan.seed = self
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(0x1000 * (i as u64 + 1) + plan.stage.number() as u64);
        }
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let d = &mut self.data;
        d.mlm.iter_mut().for_each(fix);
        d.pairs.iter_mut().for_each(fix);
        d.separation_pairs.iter_mut().for_each(fix);
        d.adapters.values_mut().for_each(fix);
        self.output_dir.iter_mut().for_each(fix);
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.model
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        for (i, plan) in self.stages.iter().enumerate() {
            plan.validate(&self.model)
                .map_err(|e| PipelineError::Config(format!("stage plan {i}: {e}")))?;
        }
        for stage in [Stage::Pretrain, Stage::Pairs] {
            if self.stages.iter().filter(|p| p.stage == stage).count() > 1 {
                return Err(PipelineError::Config(format!(
                    "more than one stage {stage:?} plan"
                )));
            }
        }
        let adapters: Vec<TaskKind> = self.stages.iter().filter_map(|p| p.task).collect();
        for (i, a) in adapters.iter().enumerate() {
            if adapters[..i].iter().any(|b| same_task(*a, *b)) {
                return Err(PipelineError::Config(format!(
                    "more than one adapter plan for {a}"
                )));
            }
        }
        for key in self.data.adapters.keys() {
            if key != "retrieval" && key.parse::<TaskKind>().is_err() {
                return Err(PipelineError::Config(format!(
                    "unknown adapter data key {key:?}"
                )));
            }
        }
        if self.eval.k == 0 {
            return Err(PipelineError::Config("eval.k must be positive".into()));
        }
        if let Some(d) = self
            .eval
            .dims
            .iter()
            .find(|d| !self.model.mrl_dims.contains(d))
        {
            return Err(PipelineError::Config(format!(
                "eval dim {d} is not in model.mrl_dims"
            )));
        }
        Ok(())
    }

    pub fn plan(&self, stage: Stage) -> Result<&StagePlan, PipelineError> {
        self.stages
            .iter()
            .find(|p| p.stage == stage)
            .ok_or_else(|| PipelineError::Config(format!("no stage {stage:?} plan")))
    }

    pub fn adapter_plan(&self, task: TaskKind) -> Result<&StagePlan, PipelineError> {
        self.stages
            .iter()
            .find(|p| p.task.is_some_and(|t| same_task(t, task)))
            .ok_or_else(|| PipelineError::Config(format!("no adapter plan for {task}")))
    }

    /// Data file for an adapter task; retrieval accepts either task name or "retrieval".
    pub fn adapter_data(&self, task: TaskKind) -> Result<&Path, PipelineError> {
        let keys: Vec<&str> = match task {
            TaskKind::RetrievalQuery | TaskKind::RetrievalPassage => {
                vec!["retrieval", "retrieval.query", "retrieval.passage"]
            }
            t => vec![t.as_str()],
        };
        keys.iter()
            .find_map(|k| self.data.adapters.get(*k))
            .map(PathBuf::as_path)
            .ok_or_else(|| PipelineError::Config(format!("data.adapters has no entry for {task}")))
    }

    /// Every configured input that must exist before a command runs.
    pub fn require(path: Option<&Path>, what: &str) -> Result<PathBuf, PipelineError> {
        let p = path.ok_or_else(|| PipelineError::Config(format!("data.{what} is not set")))?;
        if !p.exists() {
            return Err(PipelineError::Config(format!(
                "data.{what}: {} does not exist",
                p.display()
            )));
        }
        Ok(p.to_path_buf())
    }
}
