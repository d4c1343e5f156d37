//! Order statistics, top-k selection, and the top-k preserving predicate.
//!
//! Ranks are 1-based (`order_stat(v, 1)` is the maximum) and class indices
//! are 0-based. All comparisons are exact; callers that want a tolerance
//! should snap their scores before calling in.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `Σ η = 1` accepted by [`CondDist::new`].
pub const SIMPLEX_TOL: f64 = 1e-12;

/// A classifier's per-class scores. At least two finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ScoreVec(Vec<f64>);

impl ScoreVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::TooFewClasses(values.len()));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self(values))
    }

    pub fn zeros(m: usize) -> Result<Self> {
        Self::new(vec![0.0; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ScoreVec {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ScoreVec {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ScoreVec> for Vec<f64> {
    fn from(s: ScoreVec) -> Vec<f64> {
        s.0
    }
}

/// A point of the probability simplex: the conditional label distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CondDist(Vec<f64>);

impl CondDist {
    /// Validates nonnegativity and `|Σ p − 1| ≤ 1e-12`.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        Self::check_entries(&probs)?;
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::NotNormalized(sum));
        }
        Ok(Self(probs))
    }

    /// Accepts a vector whose sum is within `tol` of 1 and rescales it so
    /// that it lies on the simplex.
    pub fn renormalized(probs: Vec<f64>, tol: f64) -> Result<Self> {
        Self::check_entries(&probs)?;
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > tol {
            return Err(Error::NotNormalized(sum));
        }
        Ok(Self(probs.into_iter().map(|p| p / sum).collect()))
    }

    pub fn uniform(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::TooFewClasses(m));
        }
        Ok(Self(vec![1.0 / m as f64; m]))
    }

    pub fn one_hot(m: usize, class: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::TooFewClasses(m));
        }
        if class >= m {
            return Err(Error::LabelOutOfRange { label: class, m });
        }
        let mut p = vec![0.0; m];
        p[class] = 1.0;
        Ok(Self(p))
    }

    fn check_entries(probs: &[f64]) -> Result<()> {
        if probs.len() < 2 {
            return Err(Error::TooFewClasses(probs.len()));
        }
        for (index, &value) in probs.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite { index, value });
            }
            if value < 0.0 {
                return Err(Error::NegativeProbability { index, value });
            }
        }
        Ok(())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Convex combination `α·self + (1−α)·other`.
    pub fn mix(&self, other: &CondDist, alpha: f64) -> Result<CondDist> {
        check_same_len(self.len(), other.len())?;
        let p = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
            .collect();
        CondDist::renormalized(p, 1e-9)
    }
}

impl Deref for CondDist {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for CondDist {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<CondDist> for Vec<f64> {
    fn from(p: CondDist) -> Vec<f64> {
        p.0
    }
}

/// How [`top_k_select`] resolves ties at the selection threshold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TieBreakPolicy {
    LowestIndex,
    HighestIndex,
    /// Leave the label out whenever a tie at the threshold allows it. This
    /// models "correct for every selector" and is the default for error
    /// evaluation.
    #[default]
    WorstCaseForLabel,
    /// Take the label in whenever a tie at the threshold allows it.
    BestCaseForLabel,
}

impl TieBreakPolicy {
    pub fn needs_label(self) -> bool {
        matches!(
            self,
            TieBreakPolicy::WorstCaseForLabel | TieBreakPolicy::BestCaseForLabel
        )
    }

    fn name(self) -> &'static str {
        match self {
            TieBreakPolicy::LowestIndex => "LowestIndex",
            TieBreakPolicy::HighestIndex => "HighestIndex",
            TieBreakPolicy::WorstCaseForLabel => "WorstCaseForLabel",
            TieBreakPolicy::BestCaseForLabel => "BestCaseForLabel",
        }
    }
}

/// Exactly k distinct class indices, stored in increasing order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopKSet(Vec<usize>);

impl TopKSet {
    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn contains(&self, class: usize) -> bool {
        self.0.binary_search(&class).is_ok()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub(crate) fn check_same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(a, b));
    }
    Ok(())
}

/// Checks `lo <= k <= hi` for a vector of length `m`.
pub(crate) fn check_k(k: usize, m: usize, lo: usize, hi: usize) -> Result<()> {
    if k < lo || k > hi {
        return Err(Error::KOutOfRange {
            k,
            m,
            min: lo,
            max: hi,
        });
    }
    Ok(())
}

pub(crate) fn check_label(label: usize, m: usize) -> Result<()> {
    if label >= m {
        return Err(Error::LabelOutOfRange { label, m });
    }
    Ok(())
}

/// Entries sorted in non-increasing order.
pub fn sorted_desc(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    out.sort_by(|a, b| b.total_cmp(a));
    out
}

/// Indices ordered by non-increasing value, ties by increasing index.
pub fn argsort_desc(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx
}

/// `v_[j]`, the j-th greatest entry counting multiplicity (1-based).
pub fn order_stat(v: &[f64], j: usize) -> Result<f64> {
    if j == 0 || j > v.len() {
        return Err(Error::RankOutOfRange {
            rank: j,
            len: v.len(),
        });
    }
    Ok(sorted_desc(v)[j - 1])
}

/// Selects k indices with the greatest scores, resolving threshold ties by
/// `policy`. `label` must be given iff the policy is label-dependent.
pub fn top_k_select(
    s: &[f64],
    k: usize,
    policy: TieBreakPolicy,
    label: Option<usize>,
) -> Result<TopKSet> {
    let m = s.len();
    check_k(k, m, 1, m.saturating_sub(1))?;
    let label = match (policy.needs_label(), label) {
        (true, None) => return Err(Error::MissingLabel(policy.name())),
        (true, Some(l)) => {
            check_label(l, m)?;
            Some(l)
        }
        (false, _) => None,
    };

    let threshold = order_stat(s, k)?;
    let mut chosen: Vec<usize> = (0..m).filter(|&i| s[i] > threshold).collect();
    let mut tied: Vec<usize> = (0..m).filter(|&i| s[i] == threshold).collect();
    let need = k - chosen.len();

    match policy {
        TieBreakPolicy::LowestIndex => {}
        TieBreakPolicy::HighestIndex => tied.reverse(),
        TieBreakPolicy::WorstCaseForLabel => {
            let l = label.expect("checked above");
            if tied.len() > need {
                tied.retain(|&i| i != l);
            }
        }
        TieBreakPolicy::BestCaseForLabel => {
            let l = label.expect("checked above");
            if let Some(pos) = tied.iter().position(|&i| i == l) {
                tied.remove(pos);
                tied.insert(0, l);
            }
        }
    }
    chosen.extend_from_slice(&tied[..need]);
    chosen.sort_unstable();
    Ok(TopKSet(chosen))
}

/// `1[y ∉ r_k(s)]` under the given selector.
pub fn top_k_error(s: &[f64], y: usize, k: usize, policy: TieBreakPolicy) -> Result<u8> {
    check_label(y, s.len())?;
    let set = top_k_select(s, k, policy, Some(y))?;
    Ok(u8::from(!set.contains(y)))
}

/// Whether `y` is top-k preserving with respect to `x`: entries of `x`
/// strictly above `x_[k+1]` stay strictly above `y_[k+1]`, and entries
/// strictly below `x_[k]` stay strictly below `y_[k]`.
pub fn is_top_k_preserving(y: &[f64], x: &[f64], k: usize) -> Result<bool> {
    check_same_len(y.len(), x.len())?;
    let m = x.len();
    check_k(k, m, 1, m.saturating_sub(1))?;
    let xs = sorted_desc(x);
    let ys = sorted_desc(y);
    let (x_k, x_k1) = (xs[k - 1], xs[k]);
    let (y_k, y_k1) = (ys[k - 1], ys[k]);
    Ok(x.iter().zip(y).all(|(&xm, &ym)| {
        (xm <= x_k1 || ym > y_k1) && (xm >= x_k || ym < y_k)
    }))
}
