//! End-to-end runs: environment, encoder, policy bank and detector wired into
//! one seeded loop, plus offline replay of recorded streams.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::agent::{Encoder, Episode, PolicyBank, PolicyParams, Rollback};
use crate::detector::{DetectionEvent, Detector, DetectorConfig, EventKind, LabelId, NoProbe, Probe};
use crate::env::{Curriculum, TaskId, TreeGraphEnv};
use crate::error::{invalid, Result};
use crate::eval::{map_runs, RunTrace, TraceRow};
use crate::rng::{substream, Substream};
use crate::stream::{read_stream, write_stream, Experience, StreamRecord};

pub use crate::config::{AgentConfig, ExperimentConfig};

/// A rollback performed when the detector left `label`.
#[derive(Debug, Clone, PartialEq)]
pub struct RollbackRecord {
    pub t: u64,
    pub label: LabelId,
    pub restored_iteration: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub trace: RunTrace,
    pub events: Vec<DetectionEvent>,
    /// Live (non-probe) transitions in order.
    pub stream: Vec<StreamRecord>,
    pub rollbacks: Vec<RollbackRecord>,
    pub bank: PolicyBank,
    pub encoder: Encoder,
    pub labels: Vec<LabelId>,
}

#[derive(Serialize)]
struct EventLog<'a> {
    probing: bool,
    events: &'a [DetectionEvent],
}

/// Event log as JSON. `probing` is false for offline replays, where
/// re-detection can only mint new labels.
pub fn events_json(events: &[DetectionEvent], probing: bool) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&EventLog { probing, events })?;
    s.push('\n');
    Ok(s)
}

impl RunOutput {
    pub fn new_task_events(&self) -> usize {
        count_kind(&self.events, EventKind::NewTask)
    }

    pub fn events_json(&self) -> Result<String> {
        events_json(&self.events, true)
    }

    pub fn trace_csv(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.trace.write_csv(&mut buf)?;
        Ok(buf)
    }

    /// Writes `trace.csv`, `events.json` and `stream.csv` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("trace.csv"), self.trace_csv()?)?;
        fs::write(dir.join("events.json"), self.events_json()?)?;
        write_stream(fs::File::create(dir.join("stream.csv"))?, &self.stream)?;
        Ok(())
    }
}

fn count_kind(events: &[DetectionEvent], kind: EventKind) -> usize {
    events.iter().filter(|e| e.kind == kind).count()
}

/// Runs stored policies, without training, on the shared environment.
struct Harness<'a> {
    env: &'a mut TreeGraphEnv,
    encoder: &'a Encoder,
    bank: &'a PolicyBank,
    curriculum: &'a Curriculum,
    rng: &'a mut ChaCha8Rng,
    rows: &'a mut Vec<TraceRow>,
    iteration: u64,
    pred_label: LabelId,
    used: bool,
}

impl Probe for Harness<'_> {
    fn collect(&mut self, label: LabelId, start_t: u64, n: usize) -> Result<Vec<Experience>> {
        self.used = true;
        let policy = self.bank.get(label)?;
        let mut out = Vec::with_capacity(n);
        let mut obs = None;
        for i in 0..n as u64 {
            let t = start_t + i + 1;
            let o = match obs.take() {
                Some(o) => o,
                None => {
                    self.env.set_task(self.curriculum.task_at(t))?;
                    self.env.reset()?
                }
            };
            let phi = self.encoder.encode(&o)?;
            let action = policy.act(&phi, self.rng);
            let step = self.env.step(action)?;
            self.rows.push(TraceRow {
                t,
                iteration: self.iteration,
                gt_task: self.env.episode_task().expect("episode running"),
                pred_label: self.pred_label,
                event: None,
                p_value: None,
                swd: None,
                reward: step.reward,
                probe: true,
            });
            out.push(Experience {
                phi,
                action,
                reward: step.reward,
            });
            if !step.done {
                obs = Some(step.observation);
            }
        }
        Ok(out)
    }
}

/// Policy shape and step sizes implied by the configuration.
pub fn policy_params(cfg: &ExperimentConfig) -> PolicyParams {
    PolicyParams {
        latent_dim: cfg.agent.latent_dim,
        n_actions: cfg.env.branching,
        learning_rate: cfg.agent.learning_rate,
        baseline_decay: cfg.agent.baseline_decay,
    }
}

/// Executes the curriculum with master seed `seed`.
pub fn run(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    run_with_bank(cfg, seed, None)
}

/// Like [`run`], optionally starting from previously saved policies.
pub fn run_with_bank(cfg: &ExperimentConfig, seed: u64, bank: Option<PolicyBank>) -> Result<RunOutput> {
    let mut det_cfg = cfg.detector.clone();
    det_cfg.master_seed = seed;
    let latent = cfg.agent.latent_dim;
    let encoder = Encoder::new(cfg.env.obs_dim, latent, &mut substream(seed, Substream::Encoder))?;
    let mut env = TreeGraphEnv::new(
        cfg.env.clone(),
        cfg.tasks.clone(),
        substream(seed, Substream::EnvNoise),
    )?;
    let mut detector = Detector::new(det_cfg, latent + 2)?;
    let mut bank = match bank {
        Some(b) => {
            if b.params() != &policy_params(cfg) {
                return Err(invalid("loaded policy bank does not match the configured agent"));
            }
            b
        }
        None => PolicyBank::new(policy_params(cfg), cfg.agent.backup_freq)?,
    };
    bank.get_or_create(detector.current_label().id);
    let mut actions = substream(seed, Substream::Actions);
    let mut probe_rng = substream(seed, Substream::Probe);

    let total = cfg.curriculum.total_steps();
    let mut rows: Vec<TraceRow> = Vec::with_capacity(total as usize);
    let mut stream = Vec::with_capacity(total as usize);
    let mut events = Vec::new();
    let mut rollbacks = Vec::new();
    let mut episode: Episode = Vec::new();
    let mut batch: Vec<Episode> = Vec::new();
    let mut obs: Option<Vec<f64>> = None;
    let mut iteration = 0u64;

    while detector.t() < total {
        let t = detector.t() + 1;
        let o = match obs.take() {
            Some(o) => o,
            None => {
                env.set_task(cfg.curriculum.task_at(t))?;
                env.reset()?
            }
        };
        let label = detector.current_label().id;
        let phi = encoder.encode(&o)?;
        let action = bank.get(label)?.act(&phi, &mut actions);
        let step = env.step(action)?;
        let gt_task = env.episode_task().expect("episode running");
        let row_idx = rows.len();
        rows.push(TraceRow {
            t,
            iteration,
            gt_task,
            pred_label: label,
            event: None,
            p_value: None,
            swd: None,
            reward: step.reward,
            probe: false,
        });
        stream.push(StreamRecord {
            t,
            gt_task,
            reward: step.reward,
            action,
            phi: phi.clone(),
        });
        episode.push(Experience {
            phi: phi.clone(),
            action,
            reward: step.reward,
        });

        let mut harness = Harness {
            env: &mut env,
            encoder: &encoder,
            bank: &bank,
            curriculum: &cfg.curriculum,
            rng: &mut probe_rng,
            rows: &mut rows,
            iteration,
            pred_label: label,
            used: false,
        };
        let ingest = detector.ingest(&phi, action, step.reward, &mut harness)?;
        let probed = harness.used;
        rows[row_idx].swd = ingest.swd;
        rows[row_idx].p_value = ingest.ks.map(|k| k.p_value);

        let mut switched = false;
        if let Some(ev) = ingest.event {
            let row = rows
                .iter_mut()
                .rev()
                .find(|r| r.t == ev.t)
                .expect("event step is traced");
            row.event = Some(ev.kind);
            row.pred_label = ev.new_label;
            if ev.kind.switches_label() {
                let Rollback {
                    restored_iteration, ..
                } = bank.rollback(ev.old_label)?;
                rollbacks.push(RollbackRecord {
                    t: ev.t,
                    label: ev.old_label,
                    restored_iteration,
                });
                bank.get_or_create(ev.new_label);
                switched = true;
            }
            events.push(ev);
        }

        if switched || probed {
            // the interrupted episode and batch belong to the previous regime
            episode.clear();
            batch.clear();
            obs = None;
            continue;
        }
        if step.done {
            batch.push(std::mem::take(&mut episode));
            if batch.len() == cfg.agent.episodes_per_iteration {
                bank.get_mut(label)?.update(&batch)?;
                bank.backup_if_due(label)?;
                iteration += 1;
                batch.clear();
            }
        } else {
            obs = Some(step.observation);
        }
    }

    Ok(RunOutput {
        seed,
        trace: RunTrace { rows },
        events,
        stream,
        rollbacks,
        bank,
        encoder,
        labels: detector.labels().iter().map(|l| l.id).collect(),
    })
}

/// Mean return of `label`'s greedy policy on `task` over `episodes`
/// episodes with fresh observation noise.
pub fn greedy_return(
    cfg: &ExperimentConfig,
    out: &RunOutput,
    label: LabelId,
    task: TaskId,
    episodes: usize,
) -> Result<f64> {
    if episodes == 0 {
        return Err(invalid("need at least one evaluation episode"));
    }
    let policy = out.bank.get(label)?;
    let mut env = TreeGraphEnv::new(
        cfg.env.clone(),
        cfg.tasks.clone(),
        substream(out.seed, Substream::Evaluation),
    )?;
    env.set_task(task)?;
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut obs = env.reset()?;
        loop {
            let step = env.step(policy.greedy(&out.encoder.encode(&obs)?))?;
            total += step.reward;
            if step.done {
                break;
            }
            obs = step.observation;
        }
    }
    Ok(total / episodes as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineReport {
    pub events: Vec<DetectionEvent>,
    pub distances: usize,
    pub labels: usize,
}

impl OfflineReport {
    pub fn new_task_events(&self) -> usize {
        count_kind(&self.events, EventKind::NewTask)
    }

    pub fn events_json(&self) -> Result<String> {
        events_json(&self.events, false)
    }
}

/// Replays a recorded stream through the detector without probing.
pub fn detect_offline(records: &[StreamRecord], cfg: &DetectorConfig) -> Result<OfflineReport> {
    let first = records.first().ok_or_else(|| invalid("stream is empty"))?;
    let mut det = Detector::new(cfg.clone(), first.phi.len() + 2)?;
    let mut events = Vec::new();
    let mut distances = 0;
    for r in records {
        let out = det.ingest(&r.phi, r.action, r.reward, &mut NoProbe)?;
        distances += usize::from(out.swd.is_some());
        events.extend(out.event);
    }
    Ok(OfflineReport {
        events,
        distances,
        labels: det.labels().len(),
    })
}

pub fn detect_offline_file(path: impl AsRef<Path>, cfg: &DetectorConfig) -> Result<OfflineReport> {
    let records = read_stream(fs::File::open(path)?)?;
    detect_offline(&records, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub beta: f64,
    /// New-task events summed over seeds.
    pub new_task_events: usize,
    /// Mean aligned accuracy over seeds, stable-phase and probe steps excluded.
    pub accuracy: f64,
}

/// Runs every seed once per beta and summarizes detections.
pub fn sweep_beta(cfg: &ExperimentConfig, betas: &[f64], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    if betas.is_empty() {
        return Err(invalid("beta list is empty"));
    }
    if seeds.is_empty() {
        return Err(invalid("seed list is empty"));
    }
    let jobs: Vec<(f64, u64)> = betas
        .iter()
        .flat_map(|b| seeds.iter().map(move |s| (*b, *s)))
        .collect();
    let results = map_runs(jobs.len(), |i| -> Result<(usize, f64)> {
        let (beta, seed) = jobs[i];
        let mut c = cfg.clone();
        c.detector.beta = beta;
        let out = run(&c, seed)?;
        let acc = out.trace.aligned_accuracy(Some(c.detector.stable_phase))?;
        Ok((out.new_task_events(), acc))
    })?;
    Ok(betas
        .iter()
        .zip(results.chunks(seeds.len()))
        .map(|(beta, chunk)| SweepRow {
            beta: *beta,
            new_task_events: chunk.iter().map(|c| c.0).sum(),
            accuracy: chunk.iter().map(|c| c.1).sum::<f64>() / chunk.len() as f64,
        })
        .collect())
}

/// New-task event count per beta when replaying one recorded stream.
pub fn sweep_beta_offline(
    records: &[StreamRecord],
    cfg: &DetectorConfig,
    betas: &[f64],
) -> Result<Vec<(f64, usize)>> {
    if betas.is_empty() {
        return Err(invalid("beta list is empty"));
    }
    map_runs(betas.len(), |i| {
        let mut c = cfg.clone();
        c.beta = betas[i];
        Ok((betas[i], detect_offline(records, &c)?.new_task_events()))
    })
}
