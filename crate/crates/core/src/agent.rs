//! Per-label policies with rolling checkpoints.
//!
//! A fixed random encoder maps observations to latent features shared by all
//! labels. Each label owns an independent linear-softmax policy trained by
//! REINFORCE with a running-mean baseline, plus up to two checkpoints taken
//! every `backup_freq` updates so a late detection can be undone.

use std::collections::{BTreeMap, VecDeque};
use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::detector::LabelId;
use crate::error::{invalid, Error, Result};
use crate::stream::Experience;

pub type Episode = Vec<Experience>;

/// Fixed projection `phi = tanh(P obs)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    proj: Vec<f64>,
    obs_dim: usize,
    latent_dim: usize,
}

impl Encoder {
    pub fn new<R: Rng>(obs_dim: usize, latent_dim: usize, rng: &mut R) -> Result<Self> {
        if obs_dim == 0 || latent_dim == 0 {
            return Err(invalid("encoder dimensions must be at least 1"));
        }
        let scale = 1.0 / (obs_dim as f64).sqrt();
        let proj = (0..obs_dim * latent_dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(Self {
            proj,
            obs_dim,
            latent_dim,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn encode(&self, obs: &[f64]) -> Result<Vec<f64>> {
        if obs.len() != self.obs_dim {
            return Err(invalid(format!(
                "observation has dimension {}, encoder expects {}",
                obs.len(),
                self.obs_dim
            )));
        }
        Ok(self
            .proj
            .chunks_exact(self.obs_dim)
            .map(|row| row.iter().zip(obs).map(|(w, o)| w * o).sum::<f64>().tanh())
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolicyParams {
    pub latent_dim: usize,
    pub n_actions: usize,
    pub learning_rate: f64,
    /// Step size of the running-mean return baseline.
    pub baseline_decay: f64,
}

/// Linear-softmax policy over `[phi; 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    params: PolicyParams,
    /// `(latent_dim + 1) x n_actions`, row-major.
    weights: Vec<f64>,
    baseline: f64,
    updates: u64,
}

impl Policy {
    pub fn zeros(params: PolicyParams) -> Result<Self> {
        if params.latent_dim == 0 || params.n_actions < 2 {
            return Err(invalid("policy needs latent_dim >= 1 and at least 2 actions"));
        }
        if params.learning_rate.is_nan() || params.learning_rate <= 0.0 || !(0.0..=1.0).contains(&params.baseline_decay) {
            return Err(invalid("learning rate must be > 0 and baseline decay in [0, 1]"));
        }
        Ok(Self {
            params,
            weights: vec![0.0; (params.latent_dim + 1) * params.n_actions],
            baseline: 0.0,
            updates: 0,
        })
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.weights.len() || weights.iter().any(|w| !w.is_finite()) {
            return Err(invalid("weight vector has wrong length or non-finite entries"));
        }
        self.weights = weights;
        Ok(())
    }

    pub fn baseline(&self) -> f64 {
        self.baseline
    }

    pub fn set_baseline(&mut self, baseline: f64) {
        self.baseline = baseline;
    }

    /// Number of completed updates ("iterations").
    pub fn updates(&self) -> u64 {
        self.updates
    }

    fn logits(&self, phi: &[f64]) -> Vec<f64> {
        let na = self.params.n_actions;
        let mut out = self.weights[self.params.latent_dim * na..].to_vec();
        for (j, x) in phi.iter().enumerate() {
            for (k, o) in out.iter_mut().enumerate() {
                *o += x * self.weights[j * na + k];
            }
        }
        out
    }

    pub fn probabilities(&self, phi: &[f64]) -> Vec<f64> {
        let logits = self.logits(phi);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    fn log_prob(&self, phi: &[f64], action: usize) -> f64 {
        let logits = self.logits(phi);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        logits[action] - lse
    }

    /// Samples an action from the softmax distribution.
    pub fn act<R: Rng>(&self, phi: &[f64], rng: &mut R) -> usize {
        let probs = self.probabilities(phi);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        probs.len() - 1
    }

    /// Most probable action; ties go to the lowest index.
    pub fn greedy(&self, phi: &[f64]) -> usize {
        let logits = self.logits(phi);
        let mut best = 0;
        for (k, l) in logits.iter().enumerate() {
            if *l > logits[best] {
                best = k;
            }
        }
        best
    }

    fn check_episodes(&self, episodes: &[Episode]) -> Result<()> {
        if episodes.is_empty() || episodes.iter().any(|e| e.is_empty()) {
            return Err(invalid("episodes must be non-empty"));
        }
        for step in episodes.iter().flatten() {
            if step.phi.len() != self.params.latent_dim || step.action >= self.params.n_actions {
                return Err(invalid("episode step does not match the policy shape"));
            }
        }
        Ok(())
    }

    /// Surrogate objective `mean_e (G_e - b) * sum_t log pi(a_t | phi_t)`.
    pub fn surrogate(&self, episodes: &[Episode], baseline: f64) -> Result<f64> {
        self.check_episodes(episodes)?;
        let total: f64 = episodes
            .iter()
            .map(|ep| {
                let adv = ep.iter().map(|s| s.reward).sum::<f64>() - baseline;
                adv * ep.iter().map(|s| self.log_prob(&s.phi, s.action)).sum::<f64>()
            })
            .sum();
        Ok(total / episodes.len() as f64)
    }

    /// Analytic gradient of [`Policy::surrogate`] with respect to the weights.
    pub fn gradient(&self, episodes: &[Episode], baseline: f64) -> Result<Vec<f64>> {
        self.check_episodes(episodes)?;
        let na = self.params.n_actions;
        let ld = self.params.latent_dim;
        let mut grad = vec![0.0; self.weights.len()];
        for ep in episodes {
            let adv = ep.iter().map(|s| s.reward).sum::<f64>() - baseline;
            if adv == 0.0 {
                continue;
            }
            for step in ep {
                let probs = self.probabilities(&step.phi);
                for k in 0..na {
                    let coeff = adv * (f64::from(u8::from(k == step.action)) - probs[k]);
                    for (j, x) in step.phi.iter().enumerate() {
                        grad[j * na + k] += coeff * x;
                    }
                    grad[ld * na + k] += coeff;
                }
            }
        }
        let scale = 1.0 / episodes.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        Ok(grad)
    }

    /// One gradient-ascent step over a batch of episodes, then a baseline
    /// update towards the batch mean return.
    pub fn update(&mut self, episodes: &[Episode]) -> Result<()> {
        let grad = self.gradient(episodes, self.baseline)?;
        for (w, g) in self.weights.iter_mut().zip(&grad) {
            *w += self.params.learning_rate * g;
        }
        let mean_return = episodes
            .iter()
            .map(|ep| ep.iter().map(|s| s.reward).sum::<f64>())
            .sum::<f64>()
            / episodes.len() as f64;
        self.baseline += self.params.baseline_decay * (mean_return - self.baseline);
        self.updates += 1;
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Slot {
    live: Policy,
    /// Oldest first; never more than two.
    checkpoints: VecDeque<Policy>,
}

/// Outcome of [`PolicyBank::rollback`].
#[derive(Debug, Clone, PartialEq)]
pub struct Rollback {
    pub policy: Policy,
    pub restored_iteration: Option<u64>,
    /// Set when no checkpoint existed and the live policy was kept.
    pub warning: bool,
}

#[derive(Debug, Clone)]
pub struct PolicyBank {
    params: PolicyParams,
    backup_freq: u64,
    slots: BTreeMap<LabelId, Slot>,
}

impl PolicyBank {
    pub fn new(params: PolicyParams, backup_freq: u64) -> Result<Self> {
        if backup_freq == 0 {
            return Err(invalid("backup frequency must be at least 1"));
        }
        Policy::zeros(params)?;
        Ok(Self {
            params,
            backup_freq,
            slots: BTreeMap::new(),
        })
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn backup_freq(&self) -> u64 {
        self.backup_freq
    }

    pub fn labels(&self) -> impl Iterator<Item = LabelId> + '_ {
        self.slots.keys().copied()
    }

    /// Live policy of `label`, created zero-initialized on first use.
    pub fn get_or_create(&mut self, label: LabelId) -> &mut Policy {
        let params = self.params;
        &mut self
            .slots
            .entry(label)
            .or_insert_with(|| Slot {
                live: Policy::zeros(params).expect("params validated"),
                checkpoints: VecDeque::new(),
            })
            .live
    }

    pub fn get(&self, label: LabelId) -> Result<&Policy> {
        self.slots
            .get(&label)
            .map(|s| &s.live)
            .ok_or(Error::UnknownLabel(label))
    }

    pub fn get_mut(&mut self, label: LabelId) -> Result<&mut Policy> {
        self.slots
            .get_mut(&label)
            .map(|s| &mut s.live)
            .ok_or(Error::UnknownLabel(label))
    }

    pub fn checkpoint_iterations(&self, label: LabelId) -> Result<Vec<u64>> {
        let slot = self.slots.get(&label).ok_or(Error::UnknownLabel(label))?;
        Ok(slot.checkpoints.iter().map(Policy::updates).collect())
    }

    /// Copies the live policy into the checkpoint ring when its update count
    /// has crossed a multiple of `backup_freq` since the last checkpoint.
    pub fn backup_if_due(&mut self, label: LabelId) -> Result<bool> {
        let freq = self.backup_freq;
        let slot = self.slots.get_mut(&label).ok_or(Error::UnknownLabel(label))?;
        let last = slot.checkpoints.back().map_or(0, Policy::updates);
        if slot.live.updates / freq <= last / freq {
            return Ok(false);
        }
        slot.checkpoints.push_back(slot.live.clone());
        if slot.checkpoints.len() > 2 {
            slot.checkpoints.pop_front();
        }
        Ok(true)
    }

    /// Replaces the live policy with the older checkpoint. The newer
    /// checkpoint may already hold updates from the next task and is dropped.
    pub fn rollback(&mut self, label: LabelId) -> Result<Rollback> {
        let slot = self.slots.get_mut(&label).ok_or(Error::UnknownLabel(label))?;
        let Some(older) = slot.checkpoints.front().cloned() else {
            return Ok(Rollback {
                policy: slot.live.clone(),
                restored_iteration: None,
                warning: true,
            });
        };
        slot.checkpoints.truncate(1);
        slot.live = older.clone();
        Ok(Rollback {
            restored_iteration: Some(older.updates),
            policy: older,
            warning: false,
        })
    }

    /// Writes every live policy as a block: `label N`, `iteration N`,
    /// `shape RxC`, then one weight per line.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        for (label, slot) in &self.slots {
            let p = &slot.live;
            writeln!(w, "label {label}")?;
            writeln!(w, "iteration {}", p.updates)?;
            writeln!(w, "shape {}x{}", p.params.latent_dim + 1, p.params.n_actions)?;
            for v in &p.weights {
                writeln!(w, "{v}")?;
            }
        }
        Ok(())
    }

    /// Loads live policies written by [`PolicyBank::save`]. Baselines start at
    /// zero and no checkpoints are restored.
    pub fn load<R: BufRead>(&mut self, r: R) -> Result<()> {
        let lines: Vec<String> = r.lines().collect::<std::io::Result<_>>()?;
        let mut i = 0;
        let rows = self.params.latent_dim + 1;
        let cols = self.params.n_actions;
        while i < lines.len() {
            if lines[i].trim().is_empty() {
                i += 1;
                continue;
            }
            let field = |idx: usize, key: &str| -> Result<String> {
                let line = lines.get(idx).ok_or(Error::Parse {
                    line: idx as u64 + 1,
                    msg: format!("missing `{key}` header"),
                })?;
                line.strip_prefix(key)
                    .map(|s| s.trim().to_string())
                    .ok_or(Error::Parse {
                        line: idx as u64 + 1,
                        msg: format!("expected `{key} ...`"),
                    })
            };
            let bad = |idx: usize, msg: String| Error::Parse {
                line: idx as u64 + 1,
                msg,
            };
            let label: LabelId = field(i, "label")?
                .parse()
                .map_err(|_| bad(i, "bad label".into()))?;
            let iteration: u64 = field(i + 1, "iteration")?
                .parse()
                .map_err(|_| bad(i + 1, "bad iteration".into()))?;
            let shape = field(i + 2, "shape")?;
            if shape != format!("{rows}x{cols}") {
                return Err(bad(i + 2, format!("shape {shape} does not match {rows}x{cols}")));
            }
            let start = i + 3;
            let mut weights = Vec::with_capacity(rows * cols);
            for idx in start..start + rows * cols {
                let line = lines
                    .get(idx)
                    .ok_or_else(|| bad(idx, "truncated weight block".into()))?;
                weights.push(
                    line.trim()
                        .parse::<f64>()
                        .map_err(|_| bad(idx, format!("bad weight {line:?}")))?,
                );
            }
            let policy = self.get_or_create(label);
            policy.set_weights(weights)?;
            policy.updates = iteration;
            policy.baseline = 0.0;
            i = start + rows * cols;
        }
        Ok(())
    }
}
