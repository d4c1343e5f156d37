//! Surrogate losses for top-k classification and their (sub)gradients.
//!
//! | family   | value at `(s, y)`                                        |
//! |----------|----------------------------------------------------------|
//! | `Psi1`   | `(1 + (s∖y)_[k] − s_y)_+`                                |
//! | `Psi2`   | `((1/k) Σ_{i≤k} (s + 1̄(y))_[i] − s_y)_+`                 |
//! | `Psi3`   | `(1/k) Σ_{i≤k} ((s + 1̄(y))_[i] − s_y)_+`                 |
//! | `Psi4`   | `((1/k) Σ_{i≤k} (1 + (s∖y)_[i]) − s_y)_+`                |
//! | `Psi5`   | `(1 + s_[k+1] − s_y)_+`                                  |
//! | `Ent`    | `−ln softmax(s)_y`                                       |
//! | `EntTr1` | `−ln g(s)_y` with `g` the truncated softmax              |
//! | `EntTr2` | `−ln g(s)_y + Σ_i g(s)_i − 1`                            |
//! | `Cd`     | `ln(1+e^{−s_y}) + Σ_{i≠y} (s_i − mean_{j≠y} s_j)² + Σ_{i≠y} s_i²` |
//!
//! `s∖y` is `s` with entry `y` removed and `1̄(y)` is the all-ones vector
//! with a zero at `y`.
//!
//! Hinge subgradients split weight equally over tied order statistics and
//! use slope ½ exactly at a hinge kink, so `subgrad` is deterministic and
//! always inside the subdifferential.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topk::{argsort_desc, check_k, check_label};

/// `g(s)_y` below this is reported as numerically unstable.
pub const ENT_TR_UNSTABLE_BELOW: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossFamily {
    Psi1,
    Psi2,
    Psi3,
    Psi4,
    Psi5,
    Ent,
    EntTr1,
    EntTr2,
    Cd,
}

impl LossFamily {
    pub const ALL: [LossFamily; 9] = [
        LossFamily::Psi1,
        LossFamily::Psi2,
        LossFamily::Psi3,
        LossFamily::Psi4,
        LossFamily::Psi5,
        LossFamily::Ent,
        LossFamily::EntTr1,
        LossFamily::EntTr2,
        LossFamily::Cd,
    ];

    pub const HINGE: [LossFamily; 5] = [
        LossFamily::Psi1,
        LossFamily::Psi2,
        LossFamily::Psi3,
        LossFamily::Psi4,
        LossFamily::Psi5,
    ];

    pub fn uses_k(self) -> bool {
        !matches!(self, LossFamily::Ent | LossFamily::Cd)
    }

    pub fn is_hinge(self) -> bool {
        LossFamily::HINGE.contains(&self)
    }

    /// Every family except `Cd` is unchanged by adding a constant to all
    /// scores.
    pub fn is_shift_invariant(self) -> bool {
        self != LossFamily::Cd
    }

    pub fn name(self) -> &'static str {
        match self {
            LossFamily::Psi1 => "psi1",
            LossFamily::Psi2 => "psi2",
            LossFamily::Psi3 => "psi3",
            LossFamily::Psi4 => "psi4",
            LossFamily::Psi5 => "psi5",
            LossFamily::Ent => "ent",
            LossFamily::EntTr1 => "ent_tr1",
            LossFamily::EntTr2 => "ent_tr2",
            LossFamily::Cd => "cd",
        }
    }
}

impl fmt::Display for LossFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        LossFamily::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown loss {s:?}")))
    }
}

/// A loss family together with its `k` (ignored by `Ent` and `Cd`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LossSpec {
    pub family: LossFamily,
    pub k: usize,
}

impl LossSpec {
    pub fn new(family: LossFamily, k: usize) -> Self {
        Self { family, k }
    }

    pub fn psi1(k: usize) -> Self {
        Self::new(LossFamily::Psi1, k)
    }
    pub fn psi2(k: usize) -> Self {
        Self::new(LossFamily::Psi2, k)
    }
    pub fn psi3(k: usize) -> Self {
        Self::new(LossFamily::Psi3, k)
    }
    pub fn psi4(k: usize) -> Self {
        Self::new(LossFamily::Psi4, k)
    }
    pub fn psi5(k: usize) -> Self {
        Self::new(LossFamily::Psi5, k)
    }
    pub fn ent() -> Self {
        Self::new(LossFamily::Ent, 1)
    }
    pub fn ent_tr1(k: usize) -> Self {
        Self::new(LossFamily::EntTr1, k)
    }
    pub fn ent_tr2(k: usize) -> Self {
        Self::new(LossFamily::EntTr2, k)
    }
    pub fn cd() -> Self {
        Self::new(LossFamily::Cd, 1)
    }

    /// Checks that `k` is valid for `m` classes.
    pub fn check(&self, m: usize) -> Result<()> {
        if m < 2 {
            return Err(Error::TooFewClasses(m));
        }
        if self.family.uses_k() {
            check_k(self.k, m, 1, m - 1)?;
        }
        Ok(())
    }

    fn check_call(&self, s: &[f64], y: usize) -> Result<()> {
        self.check(s.len())?;
        check_label(y, s.len())
    }

    pub fn eval(&self, s: &[f64], y: usize) -> Result<f64> {
        self.check_call(s, y)?;
        Ok(self.accumulate(s, y, 0.0, None))
    }

    /// A subgradient of `ψ(·, y)` at `s`.
    pub fn subgrad(&self, s: &[f64], y: usize) -> Result<Vec<f64>> {
        self.check_call(s, y)?;
        let mut g = vec![0.0; s.len()];
        self.accumulate(s, y, 1.0, Some(&mut g));
        Ok(g)
    }

    /// Loss value and subgradient together.
    pub fn eval_with_subgrad(&self, s: &[f64], y: usize) -> Result<(f64, Vec<f64>)> {
        self.check_call(s, y)?;
        let mut g = vec![0.0; s.len()];
        let v = self.accumulate(s, y, 1.0, Some(&mut g));
        Ok((v, g))
    }

    /// Returns `ψ(s, y)` and, when `grad` is given, adds `weight · ∂ψ(s, y)`
    /// into it. Inputs must already be validated.
    pub(crate) fn accumulate(
        &self,
        s: &[f64],
        y: usize,
        weight: f64,
        grad: Option<&mut [f64]>,
    ) -> f64 {
        let k = self.k;
        match self.family {
            LossFamily::Psi1 => psi1(s, y, k, weight, grad),
            LossFamily::Psi2 => psi2(s, y, k, weight, grad),
            LossFamily::Psi3 => psi3(s, y, k, weight, grad),
            LossFamily::Psi4 => psi4(s, y, k, weight, grad),
            LossFamily::Psi5 => psi5(s, y, k, weight, grad),
            LossFamily::Ent => ent(s, y, weight, grad),
            LossFamily::EntTr1 => ent_tr(s, y, k, false, weight, grad).value,
            LossFamily::EntTr2 => ent_tr(s, y, k, true, weight, grad).value,
            LossFamily::Cd => cd(s, y, weight, grad),
        }
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.family.uses_k() {
            write!(f, "{}(k={})", self.family, self.k)
        } else {
            write!(f, "{}", self.family)
        }
    }
}

pub fn eval_psi1(s: &[f64], y: usize, k: usize) -> Result<f64> {
    LossSpec::psi1(k).eval(s, y)
}

pub fn eval_psi2(s: &[f64], y: usize, k: usize) -> Result<f64> {
    LossSpec::psi2(k).eval(s, y)
}

pub fn eval_psi3(s: &[f64], y: usize, k: usize) -> Result<f64> {
    LossSpec::psi3(k).eval(s, y)
}

pub fn eval_psi4(s: &[f64], y: usize, k: usize) -> Result<f64> {
    LossSpec::psi4(k).eval(s, y)
}

pub fn eval_psi5(s: &[f64], y: usize, k: usize) -> Result<f64> {
    LossSpec::psi5(k).eval(s, y)
}

pub fn eval_ent(s: &[f64], y: usize) -> Result<f64> {
    LossSpec::ent().eval(s, y)
}

pub fn eval_cd(s: &[f64], y: usize) -> Result<f64> {
    LossSpec::cd().eval(s, y)
}

/// Which truncated cross entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntTrVariant {
    /// `−ln g(s)_y`
    One,
    /// `−ln g(s)_y + Σ g(s)_i − 1`
    Two,
}

/// A truncated cross entropy value with an instability flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntTrValue {
    pub value: f64,
    /// `g(s)_y` fell below [`ENT_TR_UNSTABLE_BELOW`].
    pub unstable: bool,
}

pub fn eval_ent_tr(s: &[f64], y: usize, k: usize, variant: EntTrVariant) -> Result<EntTrValue> {
    let family = match variant {
        EntTrVariant::One => LossFamily::EntTr1,
        EntTrVariant::Two => LossFamily::EntTr2,
    };
    LossSpec::new(family, k).check_call(s, y)?;
    Ok(ent_tr(s, y, k, variant == EntTrVariant::Two, 0.0, None))
}

/// `g(s)_j = e^{s_j} / (e^{s_j} + Σ_{i=k}^{M−1} e^{(s∖j)_[i]})`: entry `j`
/// competes only against the `M − k` smallest other scores.
pub fn truncated_softmax(s: &[f64], k: usize) -> Result<Vec<f64>> {
    let m = s.len();
    if m < 2 {
        return Err(Error::TooFewClasses(m));
    }
    check_k(k, m, 1, m - 1)?;
    let t = Truncation::new(s, k);
    Ok((0..m).map(|j| t.log_g(s, j).exp()).collect())
}

/// `ln g(s)` for the truncated softmax, without rounding `g ≈ 1` to 1.
pub fn log_truncated_softmax(s: &[f64], k: usize) -> Result<Vec<f64>> {
    let m = s.len();
    if m < 2 {
        return Err(Error::TooFewClasses(m));
    }
    check_k(k, m, 1, m - 1)?;
    let t = Truncation::new(s, k);
    Ok((0..m).map(|j| t.log_g(s, j)).collect())
}

/// Numerically stable `ln Σ e^{v_i}`.
pub fn log_sum_exp(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = v.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax(s: &[f64]) -> Vec<f64> {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Crammer–Singer multiclass hinge `max_m {1[m≠y] + s_m − s_y}`.
pub fn crammer_singer(s: &[f64], y: usize) -> f64 {
    s.iter()
        .enumerate()
        .map(|(m, &sm)| if m == y { 0.0 } else { 1.0 } + sm - s[y])
        .fold(f64::NEG_INFINITY, f64::max)
}

fn hinge_slope(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else if z == 0.0 {
        0.5
    } else {
        0.0
    }
}

/// Membership weights of the k greatest values among `cands`: 1 for values
/// strictly above the k-th greatest, `(k − above) / tied` for values equal
/// to it. Weights sum to k. Returns the k greatest values, largest first.
fn top_k_membership(
    cands: &[usize],
    k: usize,
    value: impl Fn(usize) -> f64,
    out: &mut Vec<(usize, f64)>,
) -> Vec<f64> {
    let mut vals: Vec<f64> = cands.iter().map(|&i| value(i)).collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    let t = vals[k - 1];
    let above = vals.iter().take_while(|&&v| v > t).count();
    let tied = vals[above..].iter().take_while(|&&v| v == t).count();
    let share = (k - above) as f64 / tied as f64;
    out.clear();
    for &i in cands {
        let v = value(i);
        if v > t {
            out.push((i, 1.0));
        } else if v == t {
            out.push((i, share));
        }
    }
    vals.truncate(k);
    vals
}

/// The k-th greatest value among `cands` with its subgradient weights
/// (`1/tied` on every entry tied at that value).
fn kth_with_weights(
    cands: &[usize],
    k: usize,
    value: impl Fn(usize) -> f64,
    out: &mut Vec<(usize, f64)>,
) -> f64 {
    let mut vals: Vec<f64> = cands.iter().map(|&i| value(i)).collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    let t = vals[k - 1];
    out.clear();
    out.extend(cands.iter().copied().filter(|&i| value(i) == t).map(|i| (i, 1.0)));
    let w = 1.0 / out.len() as f64;
    for e in out.iter_mut() {
        e.1 = w;
    }
    t
}

fn others(m: usize, y: usize) -> Vec<usize> {
    (0..m).filter(|&i| i != y).collect()
}

fn psi1(s: &[f64], y: usize, k: usize, weight: f64, grad: Option<&mut [f64]>) -> f64 {
    let mut w = Vec::new();
    let kth = kth_with_weights(&others(s.len(), y), k, |i| s[i], &mut w);
    let z = 1.0 + kth - s[y];
    if let Some(g) = grad {
        let h = weight * hinge_slope(z);
        if h != 0.0 {
            for (i, c) in w {
                g[i] += h * c;
            }
            g[y] -= h;
        }
    }
    z.max(0.0)
}

fn psi2(s: &[f64], y: usize, k: usize, weight: f64, grad: Option<&mut [f64]>) -> f64 {
    let m = s.len();
    let bumped = |i: usize| if i == y { s[i] } else { s[i] + 1.0 };
    let all: Vec<usize> = (0..m).collect();
    let mut w = Vec::new();
    let top = top_k_membership(&all, k, bumped, &mut w);
    let mean = top.iter().sum::<f64>() / k as f64;
    let z = mean - s[y];
    if let Some(g) = grad {
        let h = weight * hinge_slope(z);
        if h != 0.0 {
            for (i, c) in w {
                g[i] += h * c / k as f64;
            }
            g[y] -= h;
        }
    }
    z.max(0.0)
}

fn psi3(s: &[f64], y: usize, k: usize, weight: f64, grad: Option<&mut [f64]>) -> f64 {
    let m = s.len();
    let bumped = |i: usize| if i == y { s[i] } else { s[i] + 1.0 };
    let all: Vec<usize> = (0..m).collect();
    let mut w = Vec::new();
    let top = top_k_membership(&all, k, bumped, &mut w);
    let kf = k as f64;
    let value = top.iter().map(|v| (v - s[y]).max(0.0)).sum::<f64>() / kf;
    if let Some(g) = grad {
        for (i, c) in w {
            let h = weight * c * hinge_slope(bumped(i) - s[y]) / kf;
            g[i] += h;
            g[y] -= h;
        }
    }
    value
}

fn psi4(s: &[f64], y: usize, k: usize, weight: f64, grad: Option<&mut [f64]>) -> f64 {
    let mut w = Vec::new();
    let top = top_k_membership(&others(s.len(), y), k, |i| s[i], &mut w);
    let kf = k as f64;
    let z = 1.0 + top.iter().sum::<f64>() / kf - s[y];
    if let Some(g) = grad {
        let h = weight * hinge_slope(z);
        if h != 0.0 {
            for (i, c) in w {
                g[i] += h * c / kf;
            }
            g[y] -= h;
        }
    }
    z.max(0.0)
}

fn psi5(s: &[f64], y: usize, k: usize, weight: f64, grad: Option<&mut [f64]>) -> f64 {
    let all: Vec<usize> = (0..s.len()).collect();
    let mut w = Vec::new();
    let kth = kth_with_weights(&all, k + 1, |i| s[i], &mut w);
    let z = 1.0 + kth - s[y];
    if let Some(g) = grad {
        let h = weight * hinge_slope(z);
        if h != 0.0 {
            for (i, c) in w {
                g[i] += h * c;
            }
            g[y] -= h;
        }
    }
    z.max(0.0)
}

fn ent(s: &[f64], y: usize, weight: f64, grad: Option<&mut [f64]>) -> f64 {
    let lse = log_sum_exp(s.iter().copied());
    if let Some(g) = grad {
        for (gi, &si) in g.iter_mut().zip(s) {
            *gi += weight * (si - lse).exp();
        }
        g[y] -= weight;
    }
    lse - s[y]
}

/// Shared structure of the truncated softmax for one score vector.
///
/// With `π` sorting `s` in non-increasing order, an entry outside the top
/// `k − 1` competes against positions `k−1..M` (its own included), and an
/// entry inside competes against positions `k..M` plus itself.
struct Truncation {
    order: Vec<usize>,
    /// `rank[i]` is the position of class `i` in `order`.
    rank: Vec<usize>,
    k: usize,
    /// `ln Σ_{positions ≥ k−1} e^{s}`
    lse_from_km1: f64,
    /// `ln Σ_{positions ≥ k} e^{s}`
    lse_from_k: f64,
}

impl Truncation {
    fn new(s: &[f64], k: usize) -> Self {
        let order = argsort_desc(s);
        let mut rank = vec![0; s.len()];
        for (p, &i) in order.iter().enumerate() {
            rank[i] = p;
        }
        let lse_from_km1 = log_sum_exp(order[k - 1..].iter().map(|&i| s[i]));
        let lse_from_k = log_sum_exp(order[k..].iter().map(|&i| s[i]));
        Self {
            order,
            rank,
            k,
            lse_from_km1,
            lse_from_k,
        }
    }

    fn in_top(&self, i: usize) -> bool {
        self.rank[i] + 1 < self.k
    }

    /// `ln Z_i`, the log-denominator of `g(s)_i`.
    fn log_z(&self, s: &[f64], i: usize) -> f64 {
        if self.in_top(i) {
            let (a, b) = (s[i], self.lse_from_k);
            a.max(b) + log1p_exp(-(a - b).abs())
        } else {
            self.lse_from_km1
        }
    }

    /// `ln g(s)_i`, computed without cancellation when `g(s)_i ≈ 1`.
    fn log_g(&self, s: &[f64], i: usize) -> f64 {
        // The entry at position k−1 also has denominator e^{s_i} + Σ_{≥k}.
        if self.rank[i] < self.k {
            -log1p_exp(self.lse_from_k - s[i])
        } else {
            s[i] - self.lse_from_km1
        }
    }

    /// Classes in the denominator of `g(s)_i` other than `i`.
    fn competitors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let from = if self.in_top(i) { self.k } else { self.k - 1 };
        self.order[from..].iter().copied().filter(move |&j| j != i)
    }
}

fn ent_tr(
    s: &[f64],
    y: usize,
    k: usize,
    restore: bool,
    weight: f64,
    grad: Option<&mut [f64]>,
) -> EntTrValue {
    let t = Truncation::new(s, k);
    let log_gy = t.log_g(s, y);
    let mut value = -log_gy;
    // Entries outside the top k−1 share one denominator, so their g values
    // sum to exactly 1 and Σ g − 1 is the sum over the top k−1.
    let top = &t.order[..k - 1];
    if restore {
        value += top.iter().map(|&i| t.log_g(s, i).exp()).sum::<f64>();
    }
    if let Some(g) = grad {
        let log_zy = t.log_z(s, y);
        g[y] += weight * ((s[y] - log_zy).exp() - 1.0);
        for j in t.competitors(y) {
            g[j] += weight * (s[j] - log_zy).exp();
        }
        if restore {
            for &i in top {
                let log_zi = t.log_z(s, i);
                let gi = (s[i] - log_zi).exp();
                g[i] += weight * gi * (1.0 - gi);
                for j in t.competitors(i) {
                    g[j] -= weight * gi * (s[j] - log_zi).exp();
                }
            }
        }
    }
    EntTrValue {
        value,
        unstable: log_gy < ENT_TR_UNSTABLE_BELOW.ln(),
    }
}

/// Whether `g(s)_y` of the truncated softmax underflows
/// [`ENT_TR_UNSTABLE_BELOW`]. Inputs must already be validated.
pub(crate) fn ent_tr_is_unstable(s: &[f64], y: usize, k: usize) -> bool {
    Truncation::new(s, k).log_g(s, y) < ENT_TR_UNSTABLE_BELOW.ln()
}

/// `ln(1 + e^x)` without overflow.
pub fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(1 + e^{−x})`
fn softplus_neg(x: f64) -> f64 {
    log1p_exp(-x)
}

fn cd(s: &[f64], y: usize, weight: f64, grad: Option<&mut [f64]>) -> f64 {
    let m = s.len();
    let n = (m - 1) as f64;
    let mean = s
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != y)
        .map(|(_, v)| v)
        .sum::<f64>()
        / n;
    let mut spread = 0.0;
    let mut norm = 0.0;
    for (i, &si) in s.iter().enumerate() {
        if i != y {
            spread += (si - mean).powi(2);
            norm += si * si;
        }
    }
    if let Some(g) = grad {
        // d/ds_y log(1+e^{−s_y}) = −1/(1+e^{s_y}); the centred spread term has
        // gradient 2(s_i − mean) because the deviations sum to zero.
        g[y] -= weight * (-softplus_neg(-s[y])).exp();
        for (i, &si) in s.iter().enumerate() {
            if i != y {
                g[i] += weight * (2.0 * (si - mean) + 2.0 * si);
            }
        }
    }
    softplus_neg(s[y]) + spread + norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn zeros(m: usize) -> Vec<f64> {
        vec![0.0; m]
    }

    #[test]
    fn psi1_examples() {
        assert_eq!(eval_psi1(&[0.0, 1.0, 1.0], 0, 2).unwrap(), 2.0);
        assert_eq!(eval_psi1(&[2.0, 1.0, 0.0], 0, 1).unwrap(), 0.0);
        assert_eq!(eval_psi1(&zeros(8), 0, 2).unwrap(), 1.0);
        assert!(eval_psi1(&[0.0, 1.0, 1.0], 0, 3).is_err());
    }

    #[test]
    fn psi2_psi3_examples() {
        assert_eq!(eval_psi2(&zeros(8), 0, 2).unwrap(), 1.0);
        assert_eq!(eval_psi3(&zeros(8), 0, 2).unwrap(), 1.0);
        assert_eq!(eval_psi2(&[2.0, 1.0, 0.0], 0, 1).unwrap(), 0.0);
        assert_eq!(eval_psi3(&[2.0, 1.0, 0.0], 0, 1).unwrap(), 0.0);
        assert_eq!(eval_psi2(&[0.0, 1.0, 1.0, 0.0], 0, 2).unwrap(), 2.0);
        assert_eq!(eval_psi3(&[0.0, 1.0, 1.0, 0.0], 0, 2).unwrap(), 2.0);
    }

    #[test]
    fn psi4_psi5_examples() {
        assert_eq!(eval_psi4(&zeros(8), 0, 2).unwrap(), 1.0);
        assert_eq!(eval_psi4(&[2.0, 1.0, 0.0], 0, 1).unwrap(), 0.0);
        let s = [1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(eval_psi5(&s, 0, 2).unwrap(), 0.0);
        assert_eq!(eval_psi5(&zeros(8), 0, 2).unwrap(), 1.0);
        assert_eq!(eval_psi5(&[0.0, 1.0, 1.0], 0, 2).unwrap(), 1.0);
    }

    #[test]
    fn ent_examples() {
        assert_abs_diff_eq!(eval_ent(&zeros(3), 0).unwrap(), 3f64.ln(), epsilon = 1e-15);
        let c = 3.7;
        let v = eval_ent(&[c, c - 40.0, c - 40.0], 0).unwrap();
        assert!(v.abs() < 1e-12);
        let s = [0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = s.iter().map(|x| x + 123.0).collect();
        assert_abs_diff_eq!(
            eval_ent(&s, 2).unwrap(),
            eval_ent(&shifted, 2).unwrap(),
            epsilon = 1e-12
        );
        // no overflow at large magnitudes
        assert!(eval_ent(&[700.0, -700.0, 0.0], 1).unwrap().is_finite());
    }

    #[test]
    fn truncated_softmax_examples() {
        let s = [0.4, -1.0, 2.0, 0.1];
        let g = truncated_softmax(&s, 1).unwrap();
        for (a, b) in g.iter().zip(softmax(&s)) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        let g = truncated_softmax(&zeros(5), 2).unwrap();
        for v in g {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15);
        }
        assert!(truncated_softmax(&zeros(5), 5).is_err());
        assert!(truncated_softmax(&zeros(5), 0).is_err());
    }

    #[test]
    fn truncated_softmax_matches_direct_definition() {
        let s = [0.4, -1.0, 2.0, 0.1, 1.3, -0.2];
        for k in 1..s.len() {
            let g = truncated_softmax(&s, k).unwrap();
            for j in 0..s.len() {
                let mut rest: Vec<f64> = (0..s.len()).filter(|&i| i != j).map(|i| s[i]).collect();
                rest.sort_by(|a, b| b.partial_cmp(a).unwrap());
                let denom = s[j].exp() + rest[k - 1..].iter().map(|x| x.exp()).sum::<f64>();
                assert_abs_diff_eq!(g[j], s[j].exp() / denom, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn ent_tr_examples() {
        let s = [0.4, -1.0, 2.0, 0.1];
        for y in 0..4 {
            let one = eval_ent_tr(&s, y, 1, EntTrVariant::One).unwrap().value;
            assert_abs_diff_eq!(one, eval_ent(&s, y).unwrap(), epsilon = 1e-14);
        }
        let one = eval_ent_tr(&zeros(5), 0, 2, EntTrVariant::One).unwrap();
        let two = eval_ent_tr(&zeros(5), 0, 2, EntTrVariant::Two).unwrap();
        assert_abs_diff_eq!(one.value, 4f64.ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(two.value, 4f64.ln() + 0.25, epsilon = 1e-14);
        assert!(!two.unstable);
    }

    #[test]
    fn ent_tr_flags_underflow_without_nan() {
        let s = [-800.0, 0.0, 0.0, 0.0];
        let v = eval_ent_tr(&s, 0, 1, EntTrVariant::Two).unwrap();
        assert!(v.value.is_finite());
        assert!(v.unstable);
    }

    #[test]
    fn cd_examples() {
        for y in 0..5 {
            assert_abs_diff_eq!(eval_cd(&zeros(5), y).unwrap(), 2f64.ln(), epsilon = 1e-15);
        }
        let v = eval_cd(&[1.0, 0.0, 0.0, 0.0, 0.0], 0).unwrap();
        assert_abs_diff_eq!(v, (1.0 + (-1f64).exp()).ln(), epsilon = 1e-15);
    }

    #[test]
    fn subgrad_examples() {
        let g = LossSpec::ent().subgrad(&zeros(3), 0).unwrap();
        let third = 1.0 / 3.0;
        for (a, b) in g.iter().zip([third - 1.0, third, third]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        let g = LossSpec::psi5(2).subgrad(&[5.0, 4.0, 0.0, 0.0], 0).unwrap();
        assert_eq!(g, vec![0.0; 4]);
    }

    #[test]
    fn subgrad_splits_ties_and_kinks() {
        // psi5 k=1 at s = 0: s_[2] tied over all 3 entries, z = 1 > 0.
        let g = LossSpec::psi5(1).subgrad(&zeros(3), 0).unwrap();
        let third = 1.0 / 3.0;
        for (a, b) in g.iter().zip([third - 1.0, third, third]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        // psi1 exactly at the kink gets half weight.
        let g = LossSpec::psi1(1).subgrad(&[1.0, 0.0, -1.0], 0).unwrap();
        assert_eq!(g, vec![-0.5, 0.5, 0.0]);
    }

    #[test]
    fn family_names_round_trip() {
        for f in LossFamily::ALL {
            assert_eq!(f.name().parse::<LossFamily>().unwrap(), f);
        }
        assert!("psi6".parse::<LossFamily>().is_err());
    }

    #[test]
    fn crammer_singer_matches_psi1_k1() {
        let s = [0.3, 1.2, -0.5, 0.9];
        for y in 0..4 {
            let cs = crammer_singer(&s, y);
            assert_abs_diff_eq!(cs, eval_psi1(&s, y, 1).unwrap(), epsilon = 1e-15);
        }
    }
}
