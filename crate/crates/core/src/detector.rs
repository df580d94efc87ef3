//! The online detection loop and the re-detection procedure.
//!
//! Every step the current label's window receives one data point. Every
//! `L_D` steps, once the window is full, the sliced distance between its
//! recent and old sets is appended to the label's distance history. Once
//! that history is full, a one-sided KS test compares its new half with the
//! beta-scaled old half; a significant result starts re-detection, which
//! probes every other known label's policy and either switches back to the
//! first label whose probe is statistically indistinguishable from its
//! stored reference, or mints a new label.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::ot::{sample_unit_directions, sliced_wasserstein, DirectionSet, PointSet};
use crate::stats::{detect_shift, KsResult, Sample};
pub use crate::stream::Experience;
use crate::stream::{make_datapoint, DataPoint, SwdHistory, WindowBuffer};

pub type LabelId = u32;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectorConfig {
    /// Points per compared set (`L_D`); also the distance cadence in steps.
    pub history_len: usize,
    /// Distances per KS half (`L_W`).
    pub swd_history_len: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Steps after a new label during which detections are suppressed.
    pub stable_phase: u64,
    pub n_projections: usize,
    /// Distances collected per probed label during re-detection.
    pub probe_swd_samples: usize,
    pub master_seed: u64,
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.history_len == 0 || self.swd_history_len == 0 || self.n_projections == 0 {
            return Err(invalid("history lengths and projection count must be at least 1"));
        }
        if self.probe_swd_samples == 0 || self.probe_swd_samples > self.swd_history_len {
            return Err(invalid(format!(
                "probe_swd_samples must lie in [1, {}] (got {})",
                self.swd_history_len, self.probe_swd_samples
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid(format!("alpha must lie in (0, 1) (got {})", self.alpha)));
        }
        if !self.beta.is_finite() || self.beta < 1.0 {
            return Err(invalid(format!("beta must be >= 1 (got {})", self.beta)));
        }
        Ok(())
    }

    /// Steps a fresh label needs before its first KS test can run.
    pub fn warmup_steps(&self) -> u64 {
        let ld = self.history_len as u64;
        let lw = self.swd_history_len as u64;
        ld * (lw + 1) + ld * (2 * lw - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TaskLabel {
    pub id: LabelId,
    pub created_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EventKind {
    #[serde(rename = "new-task")]
    NewTask,
    #[serde(rename = "re-detected")]
    Redetected,
    #[serde(rename = "suppressed-by-stablePhase")]
    SuppressedByStablePhase,
    #[serde(rename = "probe-failed")]
    ProbeFailed,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::NewTask => "new-task",
            EventKind::Redetected => "re-detected",
            EventKind::SuppressedByStablePhase => "suppressed-by-stablePhase",
            EventKind::ProbeFailed => "probe-failed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            EventKind::NewTask,
            EventKind::Redetected,
            EventKind::SuppressedByStablePhase,
            EventKind::ProbeFailed,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
    }

    /// Whether the event moves the detector to another label.
    pub fn switches_label(self) -> bool {
        matches!(self, EventKind::NewTask | EventKind::Redetected)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeOutcome {
    pub label: LabelId,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionEvent {
    /// Step at which the outcome takes effect (after any probe steps).
    pub t: u64,
    pub kind: EventKind,
    pub old_label: LabelId,
    pub new_label: LabelId,
    pub probed_pvalues: Vec<ProbeOutcome>,
}

/// Supplies fresh experience gathered under a stored label's policy.
pub trait Probe {
    /// `false` when no policies can be deployed (offline replay).
    fn is_available(&self) -> bool {
        true
    }

    /// Deploys `label`'s policy for exactly `n` steps. The first returned
    /// transition happens at global step `start_t + 1`.
    fn collect(&mut self, label: LabelId, start_t: u64, n: usize) -> Result<Vec<Experience>>;
}

/// Probe for offline replay: re-detection can only mint new labels.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoProbe;

impl Probe for NoProbe {
    fn is_available(&self) -> bool {
        false
    }

    fn collect(&mut self, _label: LabelId, _start_t: u64, _n: usize) -> Result<Vec<Experience>> {
        Err(Error::Probe("probing is unavailable".into()))
    }
}

/// What one call to [`Detector::ingest`] produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ingest {
    pub swd: Option<f64>,
    pub ks: Option<KsResult>,
    pub event: Option<DetectionEvent>,
}

#[derive(Debug, Clone)]
struct LabelState {
    label: TaskLabel,
    window: WindowBuffer,
    history: SwdHistory,
}

#[derive(Debug, Clone)]
pub struct Detector {
    config: DetectorConfig,
    width: usize,
    directions: DirectionSet,
    labels: Vec<LabelState>,
    current: usize,
    last_z_change: u64,
    t: u64,
}

impl Detector {
    /// `point_width` is the data point width, `|phi| + 2`.
    pub fn new(config: DetectorConfig, point_width: usize) -> Result<Self> {
        config.validate()?;
        if point_width < 3 {
            return Err(invalid("data points need at least one latent feature"));
        }
        let directions =
            sample_unit_directions(point_width, config.n_projections, config.master_seed)?;
        let mut det = Self {
            config,
            width: point_width,
            directions,
            labels: Vec::new(),
            current: 0,
            last_z_change: 0,
            t: 0,
        };
        det.mint_label()?;
        Ok(det)
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn last_z_change(&self) -> u64 {
        self.last_z_change
    }

    pub fn current_label(&self) -> TaskLabel {
        self.labels[self.current].label
    }

    pub fn labels(&self) -> Vec<TaskLabel> {
        self.labels.iter().map(|s| s.label).collect()
    }

    pub fn in_stable_phase(&self) -> bool {
        self.t - self.last_z_change < self.config.stable_phase
    }

    /// Stored distance history of `label`, oldest first.
    pub fn swd_history(&self, label: LabelId) -> Result<Vec<f64>> {
        Ok(self.state(label)?.history.values().collect())
    }

    pub fn window_len(&self, label: LabelId) -> Result<usize> {
        Ok(self.state(label)?.window.len())
    }

    fn state(&self, label: LabelId) -> Result<&LabelState> {
        self.labels
            .iter()
            .find(|s| s.label.id == label)
            .ok_or(Error::UnknownLabel(label))
    }

    fn mint_label(&mut self) -> Result<LabelId> {
        let id = self.labels.len() as LabelId + 1;
        self.labels.push(LabelState {
            label: TaskLabel {
                id,
                created_at: self.t,
            },
            window: WindowBuffer::new(
                self.config.history_len,
                self.config.swd_history_len,
                self.width,
            )?,
            history: SwdHistory::new(self.config.swd_history_len)?,
        });
        Ok(id)
    }

    /// Feeds one transition of the live stream.
    pub fn ingest(
        &mut self,
        phi: &[f64],
        action: usize,
        reward: f64,
        probe: &mut dyn Probe,
    ) -> Result<Ingest> {
        let point = make_datapoint(phi, action, reward)?;
        self.ingest_point(point, probe)
    }

    pub fn ingest_point(&mut self, point: DataPoint, probe: &mut dyn Probe) -> Result<Ingest> {
        if point.width() != self.width {
            return Err(invalid(format!(
                "data point width {} does not match detector width {}",
                point.width(),
                self.width
            )));
        }
        self.t += 1;
        let mut out = Ingest::default();
        let cur = &mut self.labels[self.current];
        cur.window.push(point)?;
        if !self.t.is_multiple_of(self.config.history_len as u64) || !cur.window.is_full() {
            return Ok(out);
        }
        let sw = sliced_wasserstein(
            &cur.window.recent_set()?,
            &cur.window.old_set()?,
            &self.directions,
        )?;
        cur.history.push_swd(sw)?;
        out.swd = Some(sw);
        if !cur.history.is_full() {
            return Ok(out);
        }
        let ks = detect_shift(
            &Sample::new(cur.history.new_half()?)?,
            &Sample::new(cur.history.old_half()?)?,
            self.config.alpha,
            self.config.beta,
        )?;
        out.ks = Some(ks);
        if ks.rejects(self.config.alpha) {
            out.event = Some(self.redetect(probe)?);
        }
        Ok(out)
    }

    /// Decides which label the stream now belongs to after a significant
    /// shift on the current label.
    pub fn redetect(&mut self, probe: &mut dyn Probe) -> Result<DetectionEvent> {
        let old_label = self.current_label().id;
        if self.in_stable_phase() {
            return Ok(DetectionEvent {
                t: self.t,
                kind: EventKind::SuppressedByStablePhase,
                old_label,
                new_label: old_label,
                probed_pvalues: Vec::new(),
            });
        }

        let mut probed = Vec::new();
        if probe.is_available() {
            for idx in 0..self.labels.len() {
                if idx == self.current {
                    continue;
                }
                let state = &self.labels[idx];
                // a label left before its first test has no reference to match
                if !state.window.is_full() || !state.history.is_full() {
                    continue;
                }
                let label = state.label.id;
                match self.probe_label(idx, probe)? {
                    ProbeResult::Failed(msg) => {
                        log_probe_failure(label, &msg);
                        return Ok(DetectionEvent {
                            t: self.t,
                            kind: EventKind::ProbeFailed,
                            old_label,
                            new_label: old_label,
                            probed_pvalues: probed,
                        });
                    }
                    ProbeResult::Tested { ks, points, swds } => {
                        probed.push(ProbeOutcome {
                            label,
                            p_value: ks.p_value,
                        });
                        if !ks.rejects(self.config.alpha) {
                            self.adopt_probe(idx, points, swds)?;
                            self.current = idx;
                            return Ok(DetectionEvent {
                                t: self.t,
                                kind: EventKind::Redetected,
                                old_label,
                                new_label: label,
                                probed_pvalues: probed,
                            });
                        }
                    }
                }
            }
        }

        let new_label = self.mint_label()?;
        self.current = self.labels.len() - 1;
        self.last_z_change = self.t;
        Ok(DetectionEvent {
            t: self.t,
            kind: EventKind::NewTask,
            old_label,
            new_label,
            probed_pvalues: probed,
        })
    }

    fn probe_label(&mut self, idx: usize, probe: &mut dyn Probe) -> Result<ProbeResult> {
        let ld = self.config.history_len;
        let wanted = self.config.probe_swd_samples * ld;
        let label = self.labels[idx].label.id;
        let batch = match probe.collect(label, self.t, wanted) {
            Ok(b) => b,
            Err(e) => return Ok(ProbeResult::Failed(e.to_string())),
        };
        if batch.len() != wanted {
            return Ok(ProbeResult::Failed(format!(
                "expected {wanted} transitions, got {}",
                batch.len()
            )));
        }
        self.t += wanted as u64;

        let points = batch
            .iter()
            .map(|e| make_datapoint(&e.phi, e.action, e.reward))
            .collect::<Result<Vec<_>>>()?;
        let state = &self.labels[idx];
        let reference = state.window.old_set()?;
        let mut swds = Vec::with_capacity(self.config.probe_swd_samples);
        for chunk in points.chunks_exact(ld) {
            let mut flat = Vec::with_capacity(ld * self.width);
            for p in chunk {
                flat.extend_from_slice(p.as_slice());
            }
            let set = PointSet::from_flat(flat, self.width)?;
            swds.push(sliced_wasserstein(&set, &reference, &self.directions)?);
        }
        let ks = detect_shift(
            &Sample::new(swds.clone())?,
            &Sample::new(state.history.old_half()?)?,
            self.config.alpha,
            self.config.beta,
        )?;
        Ok(ProbeResult::Tested { ks, points, swds })
    }

    /// Rebuilds an accepted label's window and history around the probe:
    /// stored old set followed by the probe data, stored old distance half
    /// followed by the probe distances.
    fn adopt_probe(&mut self, idx: usize, points: Vec<DataPoint>, swds: Vec<f64>) -> Result<()> {
        let state = &mut self.labels[idx];
        let reference = state.window.old_points()?;
        let old_half = state.history.old_half()?;
        state.window.clear();
        for p in reference.into_iter().chain(points) {
            state.window.push(p)?;
        }
        state.history.clear();
        for v in old_half.into_iter().chain(swds) {
            state.history.push_swd(v)?;
        }
        Ok(())
    }
}

enum ProbeResult {
    Failed(String),
    Tested {
        ks: KsResult,
        points: Vec<DataPoint>,
        swds: Vec<f64>,
    },
}

fn log_probe_failure(label: LabelId, msg: &str) {
    eprintln!("warning: probe of label {label} failed: {msg}");
}
