//! Stream samples and the per-label FIFO buffers fed by the detector.

use std::collections::VecDeque;
use std::io::{Read, Write};

use crate::error::{invalid, Error, Result};
use crate::ot::PointSet;

/// One environment transition: latent features, action index, reward.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub phi: Vec<f64>,
    pub action: usize,
    pub reward: f64,
}

/// One stream sample: `[sqrt(|phi|) * r, a, phi_1, .., phi_k]`.
///
/// The reward is scaled by the root of the latent width so that it keeps a
/// comparable weight against the `k` latent coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint(Vec<f64>);

impl DataPoint {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.len()
    }
}

pub fn make_datapoint(phi: &[f64], action: usize, reward: f64) -> Result<DataPoint> {
    if phi.is_empty() {
        return Err(invalid("latent vector is empty"));
    }
    if !reward.is_finite() || phi.iter().any(|v| !v.is_finite()) {
        return Err(invalid("data point inputs must be finite"));
    }
    let mut v = Vec::with_capacity(phi.len() + 2);
    v.push((phi.len() as f64).sqrt() * reward);
    v.push(action as f64);
    v.extend_from_slice(phi);
    Ok(DataPoint(v))
}

/// FIFO window of `L_D * (L_W + 1)` data points.
///
/// When full, the newest `L_D` points form the recent set and the oldest
/// `L_D` points (lagging by `L_D * L_W` steps) form the old set.
#[derive(Debug, Clone)]
pub struct WindowBuffer {
    set_len: usize,
    sets_apart: usize,
    width: usize,
    points: VecDeque<DataPoint>,
}

impl WindowBuffer {
    pub fn new(set_len: usize, sets_apart: usize, width: usize) -> Result<Self> {
        if set_len == 0 || sets_apart == 0 || width == 0 {
            return Err(invalid("window buffer sizes must be at least 1"));
        }
        Ok(Self {
            set_len,
            sets_apart,
            width,
            points: VecDeque::with_capacity(set_len * (sets_apart + 1)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.set_len * (self.sets_apart + 1)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.points.len() == self.capacity()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn push(&mut self, point: DataPoint) -> Result<()> {
        if point.width() != self.width {
            return Err(invalid(format!(
                "data point width {} does not match buffer width {}",
                point.width(),
                self.width
            )));
        }
        if self.is_full() {
            self.points.pop_front();
        }
        self.points.push_back(point);
        Ok(())
    }

    pub fn clear(&mut self) {
        self.points.clear();
    }

    /// Newest `L_D` points, in arrival order.
    pub fn recent_set(&self) -> Result<PointSet> {
        if !self.is_full() {
            return Err(Error::NotReady("window buffer is not full"));
        }
        self.collect(self.points.len() - self.set_len)
    }

    /// Oldest `L_D` points, in arrival order.
    pub fn old_set(&self) -> Result<PointSet> {
        if !self.is_full() {
            return Err(Error::NotReady("window buffer is not full"));
        }
        self.collect(0)
    }

    /// Oldest `L_D` points as raw data points.
    pub fn old_points(&self) -> Result<Vec<DataPoint>> {
        if !self.is_full() {
            return Err(Error::NotReady("window buffer is not full"));
        }
        Ok(self.points.iter().take(self.set_len).cloned().collect())
    }

    fn collect(&self, start: usize) -> Result<PointSet> {
        let mut flat = Vec::with_capacity(self.set_len * self.width);
        for p in self.points.range(start..start + self.set_len) {
            flat.extend_from_slice(p.as_slice());
        }
        PointSet::from_flat(flat, self.width)
    }
}

/// FIFO of the last `2 * L_W` sliced distances for one label.
#[derive(Debug, Clone)]
pub struct SwdHistory {
    half: usize,
    values: VecDeque<f64>,
}

impl SwdHistory {
    pub fn new(half: usize) -> Result<Self> {
        if half == 0 {
            return Err(invalid("history half length must be at least 1"));
        }
        Ok(Self {
            half,
            values: VecDeque::with_capacity(2 * half),
        })
    }

    pub fn capacity(&self) -> usize {
        2 * self.half
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.values.len() == self.capacity()
    }

    pub fn push_swd(&mut self, value: f64) -> Result<()> {
        if !value.is_finite() || value < 0.0 {
            return Err(invalid(format!("distance must be finite and >= 0 (got {value})")));
        }
        if self.is_full() {
            self.values.pop_front();
        }
        self.values.push_back(value);
        Ok(())
    }

    pub fn clear(&mut self) {
        self.values.clear();
    }

    /// Most recent `L_W` values.
    pub fn new_half(&self) -> Result<Vec<f64>> {
        if !self.is_full() {
            return Err(Error::NotReady("distance history is not full"));
        }
        Ok(self.values.iter().skip(self.half).copied().collect())
    }

    /// The `L_W` values preceding the new half.
    pub fn old_half(&self) -> Result<Vec<f64>> {
        if !self.is_full() {
            return Err(Error::NotReady("distance history is not full"));
        }
        Ok(self.values.iter().take(self.half).copied().collect())
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().copied()
    }
}

/// One line of a recorded stream: `t,gt_task,r,a,phi_1..phi_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamRecord {
    pub t: u64,
    pub gt_task: u32,
    pub reward: f64,
    pub action: usize,
    pub phi: Vec<f64>,
}

pub fn write_stream<W: Write>(writer: W, records: &[StreamRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let k = records.first().map_or(0, |r| r.phi.len());
    let mut header = vec!["t".to_string(), "gt_task".into(), "r".into(), "a".into()];
    header.extend((1..=k).map(|i| format!("phi_{i}")));
    w.write_record(&header)?;
    for rec in records {
        if rec.phi.len() != k {
            return Err(invalid("latent width varies within the stream"));
        }
        let mut row = vec![
            rec.t.to_string(),
            rec.gt_task.to_string(),
            rec.reward.to_string(),
            rec.action.to_string(),
        ];
        row.extend(rec.phi.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a recorded stream. Errors carry the 1-based line number.
pub fn read_stream<R: Read>(reader: R) -> Result<Vec<StreamRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 5 || &header[0] != "t" || &header[1] != "gt_task" || &header[2] != "r" || &header[3] != "a" {
        return Err(Error::Parse {
            line: 1,
            msg: "expected header `t,gt_task,r,a,phi_1,..`".into(),
        });
    }
    let k = header.len() - 4;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |msg: String| Error::Parse { line, msg };
        if row.len() != k + 4 {
            return Err(bad(format!("expected {} columns, found {}", k + 4, row.len())));
        }
        let num = |i: usize| -> Result<f64> {
            let v: f64 = row[i]
                .parse()
                .map_err(|_| bad(format!("column {} is not a number: {:?}", i + 1, &row[i])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad(format!("column {} is not finite", i + 1)))
            }
        };
        out.push(StreamRecord {
            t: row[0].parse().map_err(|_| bad(format!("bad step index {:?}", &row[0])))?,
            gt_task: row[1].parse().map_err(|_| bad(format!("bad task id {:?}", &row[1])))?,
            reward: num(2)?,
            action: row[3].parse().map_err(|_| bad(format!("bad action {:?}", &row[3])))?,
            phi: (4..k + 4).map(num).collect::<Result<_>>()?,
        });
    }
    if out.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "stream contains no data rows".into(),
        });
    }
    Ok(out)
}
