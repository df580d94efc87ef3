//! A small configurable decision tree with noisy dense observations.
//!
//! All tasks share states, transitions and observations; they differ only in
//! which leaf pays the high reward. Task switches take effect at the next
//! `reset`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::Serialize;

use crate::error::{invalid, Error, Result};

pub type TaskId = u32;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeGraphConfig {
    pub depth: usize,
    pub branching: usize,
    pub high_reward: f64,
    pub fail_reward: f64,
    pub obs_dim: usize,
    pub obs_noise_sigma: f64,
    /// Seeds the per-state base observation vectors.
    pub env_seed: u64,
}

impl TreeGraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(invalid("tree depth must be at least 1"));
        }
        if self.branching < 2 {
            return Err(invalid("branching factor must be at least 2"));
        }
        if self.high_reward.is_nan() || self.fail_reward.is_nan() || self.high_reward <= self.fail_reward {
            return Err(invalid("high reward must exceed fail reward"));
        }
        if self.obs_dim == 0 {
            return Err(invalid("observation dimension must be at least 1"));
        }
        if !self.obs_noise_sigma.is_finite() || self.obs_noise_sigma < 0.0 {
            return Err(invalid("observation noise must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn leaf_count(&self) -> usize {
        self.branching.pow(self.depth as u32)
    }

    /// Total number of states, root through leaves.
    pub fn state_count(&self) -> usize {
        (0..=self.depth).map(|l| self.branching.pow(l as u32)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TaskSpec {
    pub task_id: TaskId,
    pub rewarded_leaf: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct TreeGraphEnv {
    config: TreeGraphConfig,
    base: Vec<Vec<f64>>,
    tasks: Vec<TaskSpec>,
    next_task: Option<TaskId>,
    episode_task: Option<TaskSpec>,
    node: usize,
    level: usize,
    active: bool,
    noise: ChaCha8Rng,
}

impl TreeGraphEnv {
    pub fn new(config: TreeGraphConfig, tasks: Vec<TaskSpec>, noise_rng: ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        for (i, t) in tasks.iter().enumerate() {
            if t.rewarded_leaf >= config.leaf_count() {
                return Err(invalid(format!(
                    "task {} rewards leaf {} but the tree has {} leaves",
                    t.task_id,
                    t.rewarded_leaf,
                    config.leaf_count()
                )));
            }
            if tasks[..i].iter().any(|o| o.task_id == t.task_id) {
                return Err(invalid(format!("task {} defined twice", t.task_id)));
            }
        }
        let mut layout = ChaCha8Rng::seed_from_u64(config.env_seed);
        let base = (0..config.state_count())
            .map(|_| {
                (0..config.obs_dim)
                    .map(|_| layout.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        Ok(Self {
            config,
            base,
            tasks,
            next_task: None,
            episode_task: None,
            node: 0,
            level: 0,
            active: false,
            noise: noise_rng,
        })
    }

    pub fn config(&self) -> &TreeGraphConfig {
        &self.config
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    /// Base (noise-free) observation of a state.
    pub fn base_observation(&self, state: usize) -> &[f64] {
        &self.base[state]
    }

    /// Selects the reward function used from the next `reset` on.
    pub fn set_task(&mut self, task_id: TaskId) -> Result<()> {
        if !self.tasks.iter().any(|t| t.task_id == task_id) {
            return Err(Error::UnknownTask(task_id));
        }
        self.next_task = Some(task_id);
        Ok(())
    }

    /// Task governing the current episode, if one has started.
    pub fn episode_task(&self) -> Option<TaskId> {
        self.episode_task.map(|t| t.task_id)
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn reset(&mut self) -> Result<Vec<f64>> {
        let id = self
            .next_task
            .ok_or_else(|| Error::InvalidState("no active task".into()))?;
        self.episode_task = self.tasks.iter().copied().find(|t| t.task_id == id);
        self.node = 0;
        self.level = 0;
        self.active = true;
        Ok(self.observe())
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if !self.active {
            return Err(Error::InvalidState("step called without an active episode".into()));
        }
        if action >= self.config.branching {
            return Err(invalid(format!(
                "action {action} out of range for branching {}",
                self.config.branching
            )));
        }
        self.node = self.node * self.config.branching + 1 + action;
        self.level += 1;
        let done = self.level == self.config.depth;
        let reward = if done {
            self.active = false;
            let first_leaf = self.config.state_count() - self.config.leaf_count();
            let leaf = self.node - first_leaf;
            let task = self.episode_task.expect("episode started with a task");
            if leaf == task.rewarded_leaf {
                self.config.high_reward
            } else {
                self.config.fail_reward
            }
        } else {
            0.0
        };
        Ok(StepOutcome {
            observation: self.observe(),
            reward,
            done,
        })
    }

    fn observe(&mut self) -> Vec<f64> {
        let sigma = self.config.obs_noise_sigma;
        let base = &self.base[self.node];
        if sigma == 0.0 {
            return base.clone();
        }
        let normal = Normal::new(0.0, sigma).expect("sigma validated");
        base.iter().map(|b| b + normal.sample(&mut self.noise)).collect()
    }
}

/// Ordered task schedule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curriculum {
    segments: Vec<(TaskId, u64)>,
}

impl Curriculum {
    pub fn new(segments: Vec<(TaskId, u64)>) -> Result<Self> {
        if segments.is_empty() {
            return Err(invalid("curriculum is empty"));
        }
        if segments.iter().any(|(_, d)| *d == 0) {
            return Err(invalid("curriculum durations must be at least 1"));
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[(TaskId, u64)] {
        &self.segments
    }

    pub fn total_steps(&self) -> u64 {
        self.segments.iter().map(|(_, d)| d).sum()
    }

    /// Task active at 1-based global step `t`; the last task persists past
    /// the end of the schedule.
    pub fn task_at(&self, t: u64) -> TaskId {
        let mut end = 0;
        for &(task, dur) in &self.segments {
            end += dur;
            if t <= end {
                return task;
            }
        }
        self.segments.last().expect("non-empty").0
    }
}
