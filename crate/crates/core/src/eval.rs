//! Run traces and the metrics computed from them.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::detector::{EventKind, LabelId};
use crate::env::TaskId;
use crate::error::{invalid, Error, Result};
use crate::experiment::{run, ExperimentConfig};
use crate::rng::derive_seed;

/// Exact trace CSV header.
pub const TRACE_HEADER: &str = "t,iteration,gt_task,pred_label,event,p_value,swd,reward,probe_flag";

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: u64,
    /// Policy updates completed so far across all labels.
    pub iteration: u64,
    pub gt_task: TaskId,
    pub pred_label: LabelId,
    pub event: Option<EventKind>,
    pub p_value: Option<f64>,
    pub swd: Option<f64>,
    pub reward: f64,
    pub probe: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
}

impl RunTrace {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(TRACE_HEADER.split(','))?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.t.to_string(),
                r.iteration.to_string(),
                r.gt_task.to_string(),
                r.pred_label.to_string(),
                r.event.map(|e| e.as_str().to_string()).unwrap_or_default(),
                opt(r.p_value),
                opt(r.swd),
                r.reward.to_string(),
                u8::from(r.probe).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.join(",") != TRACE_HEADER {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header `{TRACE_HEADER}`"),
            });
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |what: &str| Error::Parse {
                line,
                msg: format!("bad {what}"),
            };
            let opt = |s: &str, what: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| bad(what))
                }
            };
            rows.push(TraceRow {
                t: rec[0].parse().map_err(|_| bad("t"))?,
                iteration: rec[1].parse().map_err(|_| bad("iteration"))?,
                gt_task: rec[2].parse().map_err(|_| bad("gt_task"))?,
                pred_label: rec[3].parse().map_err(|_| bad("pred_label"))?,
                event: if rec[4].is_empty() {
                    None
                } else {
                    Some(EventKind::parse(&rec[4]).ok_or_else(|| bad("event"))?)
                },
                p_value: opt(&rec[5], "p_value")?,
                swd: opt(&rec[6], "swd")?,
                reward: rec[7].parse().map_err(|_| bad("reward"))?,
                probe: match &rec[8] {
                    "0" => false,
                    "1" => true,
                    _ => return Err(bad("probe_flag")),
                },
            });
        }
        Ok(Self { rows })
    }

    /// `true` for rows inside a stable phase: fewer than `stable_phase`
    /// steps after the most recent new-task event (or the start of the run).
    pub fn stable_mask(&self, stable_phase: u64) -> Vec<bool> {
        let mut last = 0;
        self.rows
            .iter()
            .map(|r| {
                if r.event == Some(EventKind::NewTask) {
                    last = r.t;
                }
                r.t - last < stable_phase
            })
            .collect()
    }

    /// Rows excluded from accuracy: stable-phase rows and probe rows.
    pub fn exclusion_mask(&self, stable_phase: u64) -> Vec<bool> {
        self.stable_mask(stable_phase)
            .into_iter()
            .zip(&self.rows)
            .map(|(s, r)| s || r.probe)
            .collect()
    }

    pub fn predictions(&self) -> Vec<LabelId> {
        self.rows.iter().map(|r| r.pred_label).collect()
    }

    pub fn ground_truth(&self) -> Vec<TaskId> {
        self.rows.iter().map(|r| r.gt_task).collect()
    }

    /// Aligned accuracy, optionally ignoring stable-phase and probe rows.
    pub fn aligned_accuracy(&self, stable_phase: Option<u64>) -> Result<f64> {
        let mask = stable_phase.map(|sp| self.exclusion_mask(sp));
        label_alignment_accuracy(&self.predictions(), &self.ground_truth(), mask.as_deref())
    }
}

/// Optimal injective label-to-task mapping maximizing agreement over the
/// rows not excluded. Labels left unmatched are absent from the map.
pub fn optimal_mapping(
    pred: &[LabelId],
    gt: &[TaskId],
    exclude: Option<&[bool]>,
) -> Result<BTreeMap<LabelId, TaskId>> {
    Ok(alignment(pred, gt, exclude)?.0)
}

/// Fraction of (non-excluded) steps whose predicted label maps to the true
/// task under the best injective label-to-task mapping.
pub fn label_alignment_accuracy(
    pred: &[LabelId],
    gt: &[TaskId],
    exclude: Option<&[bool]>,
) -> Result<f64> {
    let (_, matched, counted) = alignment(pred, gt, exclude)?;
    if counted == 0 {
        return Ok(1.0);
    }
    Ok(matched as f64 / counted as f64)
}

fn alignment(
    pred: &[LabelId],
    gt: &[TaskId],
    exclude: Option<&[bool]>,
) -> Result<(BTreeMap<LabelId, TaskId>, u64, u64)> {
    if pred.len() != gt.len() {
        return Err(invalid(format!(
            "prediction and ground-truth lengths differ ({} vs {})",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(invalid("sequences are empty"));
    }
    if exclude.is_some_and(|m| m.len() != pred.len()) {
        return Err(invalid("exclusion mask length differs from sequences"));
    }
    let mut counts: BTreeMap<(LabelId, TaskId), u64> = BTreeMap::new();
    let mut counted = 0;
    for (i, (&p, &g)) in pred.iter().zip(gt).enumerate() {
        if exclude.is_some_and(|m| m[i]) {
            continue;
        }
        *counts.entry((p, g)).or_default() += 1;
        counted += 1;
    }
    let mut labels: Vec<LabelId> = counts.keys().map(|k| k.0).collect();
    labels.dedup();
    let mut tasks: Vec<TaskId> = counts.keys().map(|k| k.1).collect();
    tasks.sort_unstable();
    tasks.dedup();
    let weights: Vec<Vec<u64>> = labels
        .iter()
        .map(|l| {
            tasks
                .iter()
                .map(|t| counts.get(&(*l, *t)).copied().unwrap_or(0))
                .collect()
        })
        .collect();
    let assignment = max_weight_assignment(&weights);
    let mut map = BTreeMap::new();
    let mut matched = 0;
    for (row, col) in assignment.into_iter().enumerate() {
        if let Some(col) = col {
            if weights[row][col] > 0 {
                map.insert(labels[row], tasks[col]);
                matched += weights[row][col];
            }
        }
    }
    Ok((map, matched, counted))
}

/// Hungarian method on the padded square matrix; returns for each row the
/// column it is matched to (`None` for padding columns).
fn max_weight_assignment(weights: &[Vec<u64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = weights[0].len();
    let n = rows.max(cols);
    let top = weights.iter().flatten().copied().max().unwrap_or(0) as i64;
    let cost = |i: usize, j: usize| -> i64 {
        if i < rows && j < cols {
            top - weights[i][j] as i64
        } else {
            top
        }
    };
    // 1-based potentials; p[j] = row matched to column j
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; rows];
    for j in 1..=n {
        if p[j] >= 1 && p[j] <= rows && j <= cols {
            out[p[j] - 1] = Some(j - 1);
        }
    }
    out
}

/// Steps from each ground-truth change to the next change of the predicted
/// label; `None` when the prediction never changes afterwards.
pub fn detection_delay(trace: &RunTrace) -> Vec<Option<u64>> {
    let rows = &trace.rows;
    let mut out = Vec::new();
    for i in 1..rows.len() {
        if rows[i].gt_task == rows[i - 1].gt_task {
            continue;
        }
        let delay = (i..rows.len())
            .find(|&j| rows[j].pred_label != rows[j - 1].pred_label)
            .map(|j| rows[j].t - rows[i].t);
        out.push(delay);
    }
    out
}

/// Fraction of stationary runs (single task for the whole run) that raise at
/// least one label-changing detection event. Runs use seeds derived from
/// `seed` and are merged in seed order.
pub fn false_positive_rate(config: &ExperimentConfig, n_runs: usize, seed: u64) -> Result<f64> {
    if n_runs == 0 {
        return Ok(0.0);
    }
    if config.curriculum.segments().len() != 1 {
        return Err(invalid("false-positive calibration needs a single-task curriculum"));
    }
    let flagged = map_runs(n_runs, |i| -> Result<bool> {
        let out = run(config, derive_seed(seed, i as u64))?;
        Ok(out.events.iter().any(|e| e.kind.switches_label()))
    })?;
    Ok(flagged.iter().filter(|f| **f).count() as f64 / n_runs as f64)
}

/// Applies `f` to `0..n`, in parallel when enabled, preserving index order.
pub(crate) fn map_runs<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
