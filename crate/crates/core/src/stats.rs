//! One-sided two-sample Kolmogorov-Smirnov machinery.

use serde::Serialize;

use crate::error::{invalid, Result};

/// Smallest p-value ever reported.
pub const P_VALUE_FLOOR: f64 = 1e-300;

/// A non-empty sample of finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample(Vec<f64>);

impl Sample {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("sample is empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("sample contains non-finite values"));
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    fn sorted(&self) -> Vec<f64> {
        let mut v = self.0.clone();
        v.sort_by(f64::total_cmp);
        v
    }
}

impl TryFrom<Vec<f64>> for Sample {
    type Error = crate::Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl TryFrom<&[f64]> for Sample {
    type Error = crate::Error;

    fn try_from(values: &[f64]) -> Result<Self> {
        Self::new(values.to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
}

impl KsResult {
    /// Whether the null hypothesis is rejected at significance `alpha`.
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// `sup_x (P[X1 < x] - P[X2 < x])`, clamped below at zero.
///
/// Both empirical CDFs are step functions, so the supremum is attained either
/// at a sample value (left limit) or immediately above one (right limit).
pub fn ks_one_sided(x1: &Sample, x2: &Sample) -> f64 {
    let a = x1.sorted();
    let b = x2.sorted();
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let below = |s: &[f64], v: f64| s.partition_point(|x| *x < v) as f64;
    let at_most = |s: &[f64], v: f64| s.partition_point(|x| *x <= v) as f64;

    let mut sup = 0.0f64;
    for &v in a.iter().chain(b.iter()) {
        let left = below(&a, v) / na - below(&b, v) / nb;
        let right = at_most(&a, v) / na - at_most(&b, v) / nb;
        sup = sup.max(left).max(right);
    }
    sup.clamp(0.0, 1.0)
}

/// Rejection threshold for the statistic at significance `alpha`:
/// `sqrt(-0.5 (n1 + n2) ln(0.5 alpha) / (n1 n2))`.
pub fn ks_critical(n1: usize, n2: usize, alpha: f64) -> Result<f64> {
    if n1 == 0 || n2 == 0 {
        return Err(invalid("sample sizes must be at least 1"));
    }
    check_alpha(alpha)?;
    let (n1, n2) = (n1 as f64, n2 as f64);
    Ok((-0.5 * (n1 + n2) * (0.5 * alpha).ln() / (n1 * n2)).sqrt())
}

/// Asymptotic one-sided p-value `exp(-2 D^2 n1 n2 / (n1 + n2))`, clamped to
/// `[P_VALUE_FLOOR, 1]`. At `D = ks_critical(n1, n2, alpha)` this is exactly
/// `alpha / 2`.
pub fn ks_pvalue(statistic: f64, n1: usize, n2: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&statistic) {
        return Err(invalid(format!("statistic {statistic} outside [0, 1]")));
    }
    if n1 == 0 || n2 == 0 {
        return Err(invalid("sample sizes must be at least 1"));
    }
    let n_eff = (n1 as f64 * n2 as f64) / (n1 + n2) as f64;
    Ok((-2.0 * statistic * statistic * n_eff)
        .exp()
        .clamp(P_VALUE_FLOOR, 1.0))
}

/// Multiplies a reference sample of distances by `beta`.
pub fn scaled_reference(w_old: &Sample, beta: f64) -> Result<Sample> {
    if !beta.is_finite() || beta < 1.0 {
        return Err(invalid(format!("beta must be >= 1 (got {beta})")));
    }
    if w_old.values().iter().any(|v| *v < 0.0) {
        return Err(invalid("reference distances must be non-negative"));
    }
    Sample::new(w_old.values().iter().map(|v| v * beta).collect())
}

/// Tests whether `w_new` is stochastically larger than `beta * w_old`.
///
/// The scaled reference goes first in the one-sided statistic: the statistic
/// grows when the new distances exceed the inflated old ones.
pub fn detect_shift(w_new: &Sample, w_old: &Sample, alpha: f64, beta: f64) -> Result<KsResult> {
    check_alpha(alpha)?;
    if w_new.values().iter().any(|v| *v < 0.0) {
        return Err(invalid("distances must be non-negative"));
    }
    let reference = scaled_reference(w_old, beta)?;
    let statistic = ks_one_sided(&reference, w_new);
    let p_value = ks_pvalue(statistic, reference.len(), w_new.len())?;
    Ok(KsResult {
        statistic,
        p_value,
        n1: reference.len(),
        n2: w_new.len(),
    })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1) (got {alpha})")));
    }
    Ok(())
}
