use serde::{Deserialize, Serialize};

use crate::data::MASK_RATIO;
use crate::encoder::ModelConfig;
use crate::objectives::Temperature;
use crate::task::TaskKind;

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "I")]
    Pretrain = 1,
    #[serde(rename = "II")]
    Pairs = 2,
    #[serde(rename = "III")]
    Adapter = 3,
}

impl Stage {
    pub fn number(self) -> u8 {
        self as u8
    }
}

/// A run of steps at one sequence length and batch size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub steps: usize,
    pub batch_size: usize,
    pub seq_len: usize,
    /// Overrides the stage's default temperature.
    #[serde(default)]
    pub temperature: Option<Temperature>,
    /// Pairs with a text shorter than this many tokens are left out of the phase.
    #[serde(default)]
    pub min_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MrlSettings {
    pub dims: Vec<usize>,
    /// Defaults to `1 / dims.len()` for every dim.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

impl MrlSettings {
    pub fn weights(&self) -> Vec<f64> {
        self.weights
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.dims.len() as f64; self.dims.len()])
    }
}

fn default_mask_ratio() -> f64 {
    MASK_RATIO
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagePlan {
    pub stage: Stage,
    /// Stages I and II: a short phase then a long one. Stage III: one phase.
    pub phases: Vec<Phase>,
    pub max_lr: f64,
    pub warmup_steps: usize,
    /// Stage III only. Either retrieval kind trains both retrieval adapters.
    #[serde(default)]
    pub task: Option<TaskKind>,
    #[serde(default)]
    pub mrl: Option<MrlSettings>,
    #[serde(default = "default_mask_ratio")]
    pub mask_ratio: f64,
    /// Prepend the task's instruction prefix to every text.
    #[serde(default)]
    pub instructions: bool,
    /// Retrieval: encode passages with the query adapter and train only that one.
    #[serde(default)]
    pub shared_retrieval_adapter: bool,
    /// Separation: alternate batches with pair data.
    #[serde(default)]
    pub mix_pairs: bool,
    #[serde(default)]
    pub seed: u64,
}

impl StagePlan {
    pub fn total_steps(&self) -> usize {
        self.phases.iter().map(|p| p.steps).sum()
    }

    /// Retrieval plans resolve to the two adapters trained jointly.
    pub fn adapter_tasks(&self) -> Vec<TaskKind> {
        match self.task {
            Some(TaskKind::RetrievalQuery | TaskKind::RetrievalPassage) => {
                if self.shared_retrieval_adapter {
                    vec![TaskKind::RetrievalQuery]
                } else {
                    vec![TaskKind::RetrievalQuery, TaskKind::RetrievalPassage]
                }
            }
            Some(t) => vec![t],
            None => Vec::new(),
        }
    }

    /// Temperature for phase `i`, falling back to the stage and task defaults.
    pub fn temperature(&self, i: usize) -> Temperature {
        if let Some(t) = self.phases[i].temperature {
            return t;
        }
        match (self.stage, self.task) {
            (Stage::Pairs, _) if i > 0 => Temperature::PAIR_LONG,
            (Stage::Adapter, Some(TaskKind::Classification)) => Temperature::CLASSIFICATION,
            (Stage::Adapter, Some(TaskKind::TextMatching)) => Temperature::TEXT_MATCHING,
            (Stage::Adapter, Some(TaskKind::Separation)) => Temperature::SEPARATION,
            (Stage::Adapter, Some(_)) => Temperature::RETRIEVAL,
            _ => Temperature::PAIR,
        }
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Plan(m));
        let expected_phases = if self.stage == Stage::Adapter { 1 } else { 2 };
        if self.phases.len() != expected_phases {
            return bad(format!(
                "stage {:?} needs {expected_phases} phase(s), got {}",
                self.stage,
                self.phases.len()
            ));
        }
        if self.stage == Stage::Adapter {
            if self.task.is_none() {
                return bad("adapter stage needs a task".into());
            }
        } else {
            if self.task.is_some() {
                return bad("only the adapter stage takes a task".into());
            }
            let (short, long) = (&self.phases[0], &self.phases[1]);
            if long.seq_len < short.seq_len || long.batch_size > short.batch_size {
                return bad("second phase must use longer sequences and no larger batches".into());
            }
        }
        for (i, p) in self.phases.iter().enumerate() {
            if p.batch_size == 0 || p.seq_len == 0 {
                return bad(format!(
                    "phase {i}: batch_size and seq_len must be positive"
                ));
            }
            if p.seq_len > config.max_seq_len {
                return bad(format!(
                    "phase {i}: seq_len {} exceeds max_seq_len {}",
                    p.seq_len, config.max_seq_len
                ));
            }
            if self.task == Some(TaskKind::Separation) && p.batch_size < 2 {
                return bad("separation batches need at least two texts".into());
            }
        }
        if !(self.max_lr.is_finite() && self.max_lr >= 0.0) {
            return bad(format!(
                "max_lr {} must be finite and non-negative",
                self.max_lr
            ));
        }
        let total = self.total_steps();
        if total > 0 && self.warmup_steps >= total {
            return bad(format!(
                "warmup_steps {} must be below the {total} total steps",
                self.warmup_steps
            ));
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return bad(format!("mask_ratio {} outside [0, 1]", self.mask_ratio));
        }
        if let Some(m) = &self.mrl {
            if self.stage == Stage::Pretrain {
                return bad("MRL applies to stages II and III only".into());
            }
            if m.dims.is_empty() {
                return bad("MRL needs at least one dim".into());
            }
            if let Some(d) = m.dims.iter().find(|d| !config.mrl_dims.contains(d)) {
                return bad(format!("MRL dim {d} is not in the model's mrl_dims"));
            }
            let w = m.weights();
            if w.len() != m.dims.len() || w.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
                return bad("MRL weights must be positive, one per dim".into());
            }
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `max_lr` over `warmup` steps, then linear decay
/// to 0 at `total`.
pub fn lr_schedule(
    step: usize,
    warmup: usize,
    total: usize,
    max_lr: f64,
) -> Result<f64, TrainError> {
    if step > total {
        return Err(TrainError::Plan(format!(
            "step {step} beyond schedule end {total}"
        )));
    }
    if warmup >= total {
        return Err(TrainError::Plan(format!(
            "warmup {warmup} must be below total {total}"
        )));
    }
    Ok(if step < warmup {
        max_lr * step as f64 / warmup as f64
    } else {
        max_lr * (total - step) as f64 / (total - warmup) as f64
    })
}
