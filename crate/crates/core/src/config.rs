//! Experiment configuration files.
//!
//! The format is line based: `key = value` pairs, `#` comments and
//! `[section]` headers. Top-level keys hold scalar settings, `[tasks]` maps
//! task ids to rewarded leaves and `[curriculum]` lists the task order. A
//! `preset = desk|paper` line loads a built-in file first; every other key
//! in the file then overrides it.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::detector::DetectorConfig;
use crate::env::{Curriculum, TaskId, TaskSpec, TreeGraphConfig};
use crate::error::{ConfigIssue, Error, Result};

pub const DESK_PRESET: &str = include_str!("../configs/desk.cfg");
pub const PAPER_PRESET: &str = include_str!("../configs/paper.cfg");

const SCALAR_KEYS: &[&str] = &[
    "history_length_LD",
    "swd_history_length_LW",
    "significance_threshold_alpha",
    "ks_adjustment_beta",
    "stable_phase_duration",
    "model_backup_freq",
    "n_projections",
    "probe_swd_samples",
    "latent_dim",
    "learning_rate",
    "episodes_per_iteration",
    "baseline_decay",
    "general_seed",
    "tree_depth",
    "branching_factor",
    "high_reward_value",
    "fail_reward_value",
    "obs_dim",
    "obs_noise_sigma",
    "master_seed",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AgentConfig {
    pub latent_dim: usize,
    pub learning_rate: f64,
    pub baseline_decay: f64,
    /// Episodes per policy update.
    pub episodes_per_iteration: usize,
    /// Policy updates between checkpoints.
    pub backup_freq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub preset: Option<String>,
    /// `master_seed` inside is replaced by the run seed.
    pub detector: DetectorConfig,
    pub env: TreeGraphConfig,
    pub tasks: Vec<TaskSpec>,
    pub curriculum: Curriculum,
    pub agent: AgentConfig,
    pub master_seed: u64,
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

#[derive(Debug, Default)]
struct Raw {
    scalars: BTreeMap<String, Entry>,
    tasks: BTreeMap<String, Entry>,
    curriculum: BTreeMap<String, Entry>,
}

fn lex(text: &str, raw: &mut Raw, issues: &mut Vec<ConfigIssue>, preset: &mut Option<Entry>) {
    let mut section = String::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            if !matches!(section.as_str(), "tasks" | "curriculum") {
                issues.push(ConfigIssue {
                    line: line_no,
                    msg: format!("unknown section [{section}]"),
                });
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            issues.push(ConfigIssue {
                line: line_no,
                msg: format!("expected `key = value`, found `{line}`"),
            });
            continue;
        };
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        let entry = Entry { value, line: line_no };
        match section.as_str() {
            "" if key == "preset" => *preset = Some(entry),
            "" if SCALAR_KEYS.contains(&key.as_str()) => {
                raw.scalars.insert(key, entry);
            }
            "" => issues.push(ConfigIssue {
                line: line_no,
                msg: format!("unknown key `{key}`"),
            }),
            "tasks" => {
                raw.tasks.insert(key, entry);
            }
            "curriculum" if key == "order" || key == "segment_steps" => {
                raw.curriculum.insert(key, entry);
            }
            "curriculum" => issues.push(ConfigIssue {
                line: line_no,
                msg: format!("unknown curriculum key `{key}`"),
            }),
            _ => {}
        }
    }
}

struct Fields<'a> {
    raw: &'a Raw,
    issues: Vec<ConfigIssue>,
}

impl Fields<'_> {
    fn get<T: std::str::FromStr>(&mut self, key: &str) -> Option<T> {
        let Some(e) = self.raw.scalars.get(key) else {
            self.issues.push(ConfigIssue {
                line: 0,
                msg: format!("missing key `{key}`"),
            });
            return None;
        };
        match e.value.parse() {
            Ok(v) => Some(v),
            Err(_) => {
                self.issues.push(ConfigIssue {
                    line: e.line,
                    msg: format!("`{key}`: cannot parse `{}`", e.value),
                });
                None
            }
        }
    }

    fn check(&mut self, key: &str, ok: bool, what: &str) {
        if !ok {
            let line = self.raw.scalars.get(key).map_or(0, |e| e.line);
            self.issues.push(ConfigIssue {
                line,
                msg: format!("`{key}` {what}"),
            });
        }
    }
}

fn list<T: std::str::FromStr>(e: &Entry, key: &str, issues: &mut Vec<ConfigIssue>) -> Option<Vec<T>> {
    let parsed: std::result::Result<Vec<T>, _> =
        e.value.split(',').map(|s| s.trim().parse::<T>()).collect();
    match parsed {
        Ok(v) if !v.is_empty() => Some(v),
        _ => {
            issues.push(ConfigIssue {
                line: e.line,
                msg: format!("`{key}`: expected a comma-separated list, found `{}`", e.value),
            });
            None
        }
    }
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        Self::parse(&format!("preset = {name}\n"))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Parses a configuration, reporting every problem found with its line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = Raw::default();
        let mut issues = Vec::new();
        let mut preset = None;
        let mut user = Raw::default();
        lex(text, &mut user, &mut issues, &mut preset);
        let preset_name = match &preset {
            Some(e) => match e.value.as_str() {
                "desk" => {
                    lex(DESK_PRESET, &mut raw, &mut issues, &mut None);
                    Some("desk".to_string())
                }
                "paper" => {
                    lex(PAPER_PRESET, &mut raw, &mut issues, &mut None);
                    Some("paper".to_string())
                }
                other => {
                    issues.push(ConfigIssue {
                        line: e.line,
                        msg: format!("unknown preset `{other}` (expected desk or paper)"),
                    });
                    None
                }
            },
            None => None,
        };
        raw.scalars.extend(user.scalars);
        if !user.tasks.is_empty() {
            raw.tasks = user.tasks;
        }
        raw.curriculum.extend(user.curriculum);
        Self::resolve(&raw, preset_name, issues)
    }

    fn resolve(raw: &Raw, preset: Option<String>, issues: Vec<ConfigIssue>) -> Result<Self> {
        let mut f = Fields { raw, issues };
        let history_len: Option<usize> = f.get("history_length_LD");
        let swd_history_len: Option<usize> = f.get("swd_history_length_LW");
        let alpha: Option<f64> = f.get("significance_threshold_alpha");
        let beta: Option<f64> = f.get("ks_adjustment_beta");
        let stable_phase: Option<u64> = f.get("stable_phase_duration");
        let backup_freq: Option<u64> = f.get("model_backup_freq");
        let n_projections: Option<usize> = f.get("n_projections");
        let probe_swd_samples: Option<usize> = f.get("probe_swd_samples");
        let latent_dim: Option<usize> = f.get("latent_dim");
        let learning_rate: Option<f64> = f.get("learning_rate");
        let episodes_per_iteration: Option<usize> = f.get("episodes_per_iteration");
        let baseline_decay: Option<f64> = f.get("baseline_decay");
        let env_seed: Option<u64> = f.get("general_seed");
        let depth: Option<usize> = f.get("tree_depth");
        let branching: Option<usize> = f.get("branching_factor");
        let high_reward: Option<f64> = f.get("high_reward_value");
        let fail_reward: Option<f64> = f.get("fail_reward_value");
        let obs_dim: Option<usize> = f.get("obs_dim");
        let obs_noise_sigma: Option<f64> = f.get("obs_noise_sigma");
        let master_seed: Option<u64> = f.get("master_seed");

        if let Some(v) = history_len {
            f.check("history_length_LD", v >= 1, "must be at least 1");
        }
        if let Some(v) = swd_history_len {
            f.check("swd_history_length_LW", v >= 1, "must be at least 1");
        }
        if let Some(v) = alpha {
            f.check("significance_threshold_alpha", v > 0.0 && v < 1.0, "must lie in (0, 1)");
        }
        if let Some(v) = beta {
            f.check("ks_adjustment_beta", v >= 1.0 && v.is_finite(), "must be >= 1");
        }
        if let Some(v) = backup_freq {
            f.check("model_backup_freq", v >= 1, "must be at least 1");
        }
        if let Some(v) = n_projections {
            f.check("n_projections", v >= 1, "must be at least 1");
        }
        if let (Some(v), Some(lw)) = (probe_swd_samples, swd_history_len) {
            f.check(
                "probe_swd_samples",
                (1..=lw).contains(&v),
                &format!("must lie in [1, {lw}]"),
            );
        }
        if let Some(v) = latent_dim {
            f.check("latent_dim", v >= 1, "must be at least 1");
        }
        if let Some(v) = learning_rate {
            f.check("learning_rate", v > 0.0 && v.is_finite(), "must be > 0");
        }
        if let Some(v) = episodes_per_iteration {
            f.check("episodes_per_iteration", v >= 1, "must be at least 1");
        }
        if let Some(v) = baseline_decay {
            f.check("baseline_decay", (0.0..=1.0).contains(&v), "must lie in [0, 1]");
        }
        if let Some(v) = depth {
            f.check("tree_depth", v >= 1, "must be at least 1");
        }
        if let Some(v) = branching {
            f.check("branching_factor", v >= 2, "must be at least 2");
        }
        if let (Some(h), Some(l)) = (high_reward, fail_reward) {
            f.check("high_reward_value", h > l, "must exceed fail_reward_value");
        }
        if let Some(v) = obs_dim {
            f.check("obs_dim", v >= 1, "must be at least 1");
        }
        if let Some(v) = obs_noise_sigma {
            f.check("obs_noise_sigma", v >= 0.0 && v.is_finite(), "must be finite and >= 0");
        }
        let mut issues = f.issues;

        let leaves = match (depth, branching) {
            (Some(d), Some(b)) if d >= 1 && b >= 2 => b.checked_pow(d as u32),
            _ => None,
        };
        let mut tasks = Vec::new();
        if raw.tasks.is_empty() {
            issues.push(ConfigIssue {
                line: 0,
                msg: "no tasks defined in [tasks]".into(),
            });
        }
        for (key, e) in &raw.tasks {
            match (key.parse::<TaskId>(), e.value.parse::<usize>()) {
                (Ok(id), Ok(leaf)) => {
                    if leaves.is_some_and(|n| leaf >= n) {
                        issues.push(ConfigIssue {
                            line: e.line,
                            msg: format!("task {id}: leaf {leaf} outside the tree"),
                        });
                    }
                    tasks.push(TaskSpec {
                        task_id: id,
                        rewarded_leaf: leaf,
                    });
                }
                _ => issues.push(ConfigIssue {
                    line: e.line,
                    msg: format!("expected `task_id = leaf`, found `{key} = {}`", e.value),
                }),
            }
        }
        tasks.sort_by_key(|t| t.task_id);

        let mut curriculum = None;
        match (raw.curriculum.get("order"), raw.curriculum.get("segment_steps")) {
            (Some(o), Some(s)) => {
                let order: Option<Vec<TaskId>> = list(o, "order", &mut issues);
                let steps: Option<Vec<u64>> = list(s, "segment_steps", &mut issues);
                if let (Some(order), Some(steps)) = (order, steps) {
                    for id in &order {
                        if !tasks.iter().any(|t| t.task_id == *id) {
                            issues.push(ConfigIssue {
                                line: o.line,
                                msg: format!("curriculum references undefined task {id}"),
                            });
                        }
                    }
                    let steps = if steps.len() == 1 {
                        vec![steps[0]; order.len()]
                    } else {
                        steps
                    };
                    if steps.len() != order.len() {
                        issues.push(ConfigIssue {
                            line: s.line,
                            msg: "segment_steps needs one value or one per task in order".into(),
                        });
                    } else if steps.contains(&0) {
                        issues.push(ConfigIssue {
                            line: s.line,
                            msg: "segment_steps must be at least 1".into(),
                        });
                    } else {
                        curriculum = Curriculum::new(order.into_iter().zip(steps).collect()).ok();
                    }
                }
            }
            (o, s) => {
                if o.is_none() {
                    issues.push(ConfigIssue {
                        line: 0,
                        msg: "missing curriculum key `order`".into(),
                    });
                }
                if s.is_none() {
                    issues.push(ConfigIssue {
                        line: 0,
                        msg: "missing curriculum key `segment_steps`".into(),
                    });
                }
            }
        }

        if !issues.is_empty() {
            issues.sort_by_key(|i| i.line);
            return Err(Error::Config(issues));
        }
        let master_seed = master_seed.expect("checked");
        Ok(Self {
            preset,
            detector: DetectorConfig {
                history_len: history_len.expect("checked"),
                swd_history_len: swd_history_len.expect("checked"),
                alpha: alpha.expect("checked"),
                beta: beta.expect("checked"),
                stable_phase: stable_phase.expect("checked"),
                n_projections: n_projections.expect("checked"),
                probe_swd_samples: probe_swd_samples.expect("checked"),
                master_seed,
            },
            env: TreeGraphConfig {
                depth: depth.expect("checked"),
                branching: branching.expect("checked"),
                high_reward: high_reward.expect("checked"),
                fail_reward: fail_reward.expect("checked"),
                obs_dim: obs_dim.expect("checked"),
                obs_noise_sigma: obs_noise_sigma.expect("checked"),
                env_seed: env_seed.expect("checked"),
            },
            tasks,
            curriculum: curriculum.expect("checked"),
            agent: AgentConfig {
                latent_dim: latent_dim.expect("checked"),
                learning_rate: learning_rate.expect("checked"),
                baseline_decay: baseline_decay.expect("checked"),
                episodes_per_iteration: episodes_per_iteration.expect("checked"),
                backup_freq: backup_freq.expect("checked"),
            },
            master_seed,
        })
    }

    /// Same settings with a curriculum holding only `task` for `steps` steps.
    pub fn stationary(&self, task: TaskId, steps: u64) -> Result<Self> {
        if !self.tasks.iter().any(|t| t.task_id == task) {
            return Err(Error::UnknownTask(task));
        }
        let mut out = self.clone();
        out.curriculum = Curriculum::new(vec![(task, steps)])?;
        Ok(out)
    }
}
