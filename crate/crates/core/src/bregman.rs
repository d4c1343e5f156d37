//! Bregman-divergence surrogates `ψ(s, y) = D_φ(g(s), e_y)`.
//!
//! [`PotentialFn`] is the strictly convex `φ` and [`LinkFn`] the map `g`
//! from scores into `φ`'s domain. Negative entropy is defined on the open
//! positive orthant, not only on the simplex, so that truncated-softmax
//! outputs (which need not sum to one) are in its domain.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::losses::{log_sum_exp, log_truncated_softmax, softmax, truncated_softmax};
use crate::topk::{check_label, check_same_len, is_top_k_preserving, CondDist};

type ValueFn = dyn Fn(&[f64]) -> Result<f64> + Send + Sync;
type VectorFn = dyn Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync;
type MapFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// A differentiable, strictly convex potential.
pub struct PotentialFn {
    name: String,
    value: Box<ValueFn>,
    gradient: Box<VectorFn>,
}

impl PotentialFn {
    pub fn new(
        name: impl Into<String>,
        value: impl Fn(&[f64]) -> Result<f64> + Send + Sync + 'static,
        gradient: impl Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            value: Box::new(value),
            gradient: Box::new(gradient),
        }
    }

    /// `½‖x‖²`
    pub fn squared_norm() -> Self {
        Self::new(
            "squared_norm",
            |x| Ok(0.5 * x.iter().map(|v| v * v).sum::<f64>()),
            |x| Ok(x.to_vec()),
        )
    }

    /// `Σ x ln x` on the nonnegative orthant with `0 ln 0 = 0`. The gradient
    /// `ln x + 1` needs every entry strictly positive.
    pub fn neg_entropy() -> Self {
        Self::new(
            "neg_entropy",
            |x| {
                x.iter().enumerate().try_fold(0.0, |acc, (index, &v)| {
                    if !(v >= 0.0) || !v.is_finite() {
                        return Err(Error::DomainViolation { index, value: v });
                    }
                    Ok(acc + if v == 0.0 { 0.0 } else { v * v.ln() })
                })
            },
            |x| {
                x.iter()
                    .enumerate()
                    .map(|(index, &v)| {
                        if !(v > 0.0) || !v.is_finite() {
                            Err(Error::DomainViolation { index, value: v })
                        } else {
                            Ok(v.ln() + 1.0)
                        }
                    })
                    .collect()
            },
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        (self.gradient)(x)
    }
}

impl fmt::Debug for PotentialFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PotentialFn").field("name", &self.name).finish()
    }
}

/// The property a link map is claimed to have.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LinkProperty {
    /// Every `s` is top-k preserving with respect to `g(s)`.
    InverseTopKPreserving(usize),
    /// `s_i > s_j ⟺ g(s)_i > g(s)_j`.
    RankPreserving,
}

/// A map from scores into a potential's domain.
pub struct LinkFn {
    name: String,
    map: Box<MapFn>,
    /// A strictly increasing per-entry transform of `map` used when comparing
    /// entries; `ln g` for the softmax links, where `g` itself rounds to 1.
    order_key: Option<Box<MapFn>>,
    claimed: LinkProperty,
}

impl LinkFn {
    pub fn new(
        name: impl Into<String>,
        map: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        claimed: LinkProperty,
    ) -> Self {
        Self {
            name: name.into(),
            map: Box::new(map),
            order_key: None,
            claimed,
        }
    }

    pub fn with_order_key(mut self, key: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.order_key = Some(Box::new(key));
        self
    }

    pub fn softmax() -> Self {
        Self::new("softmax", softmax, LinkProperty::RankPreserving).with_order_key(|s| {
            let lse = log_sum_exp(s.iter().copied());
            s.iter().map(|v| v - lse).collect()
        })
    }

    pub fn truncated_softmax(k: usize) -> Self {
        Self::new(
            format!("truncated_softmax(k={k})"),
            move |s| truncated_softmax(s, k).expect("k validated by caller"),
            LinkProperty::RankPreserving,
        )
        .with_order_key(move |s| log_truncated_softmax(s, k).expect("k validated by caller"))
    }

    /// `s ↦ (1, …, 1)`.
    pub fn constant(claimed: LinkProperty) -> Self {
        Self::new("constant", |s| vec![1.0; s.len()], claimed)
    }

    /// `s ↦ −s`, which reverses every ranking.
    pub fn reversal(claimed: LinkProperty) -> Self {
        Self::new("reversal", |s| s.iter().map(|v| -v).collect(), claimed)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn claimed(&self) -> LinkProperty {
        self.claimed
    }

    pub fn apply(&self, s: &[f64]) -> Vec<f64> {
        (self.map)(s)
    }

    fn order_keys(&self, s: &[f64]) -> Vec<f64> {
        match &self.order_key {
            Some(key) => key(s),
            None => self.apply(s),
        }
    }

    /// Whether the claimed property holds at `s`.
    pub fn holds_at(&self, s: &[f64]) -> Result<bool> {
        let g = self.order_keys(s);
        check_same_len(s.len(), g.len())?;
        match self.claimed {
            LinkProperty::InverseTopKPreserving(k) => is_top_k_preserving(s, &g, k),
            LinkProperty::RankPreserving => {
                let m = s.len();
                Ok((0..m).all(|i| (0..m).all(|j| (s[i] > s[j]) == (g[i] > g[j]))))
            }
        }
    }
}

impl fmt::Debug for LinkFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinkFn")
            .field("name", &self.name)
            .field("claimed", &self.claimed)
            .finish()
    }
}

/// `D_φ(p, q) = φ(q) − φ(p) − ∇φ(p)·(q − p)`, expanded at `p`.
pub fn bregman_div(phi: &PotentialFn, p: &[f64], q: &[f64]) -> Result<f64> {
    check_same_len(p.len(), q.len())?;
    let grad = phi.gradient(p)?;
    let inner: f64 = grad.iter().zip(q.iter().zip(p)).map(|(g, (a, b))| g * (a - b)).sum();
    Ok(phi.value(q)? - phi.value(p)? - inner)
}

/// `D_φ(g(s), e_y)`.
pub fn surrogate_eval(phi: &PotentialFn, link: &LinkFn, s: &[f64], y: usize) -> Result<f64> {
    check_label(y, s.len())?;
    let mut e = vec![0.0; s.len()];
    e[y] = 1.0;
    bregman_div(phi, &link.apply(s), &e)
}

/// Magnitudes swept by [`check_link_property`].
pub const LINK_CHECK_SCALES: [f64; 4] = [0.1, 1.0, 10.0, 100.0];

#[derive(Debug, Clone, Serialize)]
pub struct LinkCheckReport {
    pub link: String,
    pub property: LinkProperty,
    pub samples: usize,
    pub passed: bool,
    pub counterexample: Option<Vec<f64>>,
}

/// Samples `n_samples` Gaussian score vectors of length `m`, cycling through
/// [`LINK_CHECK_SCALES`], and checks the link's claimed property on each.
/// Stops at the first counterexample.
pub fn check_link_property(
    link: &LinkFn,
    m: usize,
    n_samples: usize,
    rng: &mut impl Rng,
) -> Result<LinkCheckReport> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be at least 1".into()));
    }
    let mut counterexample = None;
    let mut checked = 0;
    for t in 0..n_samples {
        let scale = LINK_CHECK_SCALES[t % LINK_CHECK_SCALES.len()];
        let s: Vec<f64> = (0..m)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        checked += 1;
        if !link.holds_at(&s)? {
            counterexample = Some(s);
            break;
        }
    }
    Ok(LinkCheckReport {
        link: link.name().to_owned(),
        property: link.claimed(),
        samples: checked,
        passed: counterexample.is_none(),
        counterexample,
    })
}

/// Result of numerically inverting a link at a point of the simplex.
#[derive(Debug, Clone, Serialize)]
pub struct InversionDiagnostic {
    pub scores: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Looks for `s` with `g(s) ≈ η` by the damped log-space fixed point
/// `s ← s + ½ (ln η − ln g(s))`. Only meaningful for links that are
/// increasing in each entry's own score; η must be strictly positive.
///
/// This is a diagnostic for whether `η` lies in the range of `g`, not a
/// guarantee: a large residual may also mean the iteration stalled.
pub fn invert_link(link: &LinkFn, eta: &CondDist, max_iter: usize) -> Result<InversionDiagnostic> {
    if let Some(index) = eta.iter().position(|&p| p <= 0.0) {
        return Err(Error::ZeroProbability(index));
    }
    let target: Vec<f64> = eta.iter().map(|p| p.ln()).collect();
    let mut s = target.clone();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        let g = link.apply(&s);
        residual = g
            .iter()
            .zip(eta.iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual < 1e-12 {
            break;
        }
        for ((si, gi), ti) in s.iter_mut().zip(&g).zip(&target) {
            *si += 0.5 * (ti - gi.max(f64::MIN_POSITIVE).ln());
        }
    }
    Ok(InversionDiagnostic {
        scores: s,
        residual,
        iterations,
    })
}
