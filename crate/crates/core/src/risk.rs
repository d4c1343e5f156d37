//! Conditional risks at a fixed input: evaluation, Bayes top-k risk, the
//! closed-form ψ1 minimizers and an empirical calibration prober.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{LossFamily, LossSpec};
use crate::optim::{minimize_scores, DescentConfig, StepSchedule};
use crate::seed::{derive_seed, rng_from_seed};
use crate::synth::dirichlet_ones;
use crate::topk::{
    argsort_desc, check_k, check_same_len, is_top_k_preserving, top_k_error, top_k_select,
    CondDist, ScoreVec, TieBreakPolicy,
};

/// `Σ_y η_y ψ(s, y)`.
pub fn cond_risk(loss: &LossSpec, s: &[f64], eta: &CondDist) -> Result<f64> {
    check_same_len(s.len(), eta.len())?;
    loss.check(s.len())?;
    Ok(risk_and_grad(loss, s, eta, None))
}

/// Conditional risk and a subgradient of it in `s`.
pub fn cond_risk_with_grad(loss: &LossSpec, s: &[f64], eta: &CondDist) -> Result<(f64, Vec<f64>)> {
    check_same_len(s.len(), eta.len())?;
    loss.check(s.len())?;
    let mut g = vec![0.0; s.len()];
    let r = risk_and_grad(loss, s, eta, Some(&mut g));
    Ok((r, g))
}

fn risk_and_grad(loss: &LossSpec, s: &[f64], eta: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
    let mut total = 0.0;
    for (y, &p) in eta.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        total += p * loss.accumulate(s, y, p, grad.as_deref_mut());
    }
    total
}

/// `1 − Σ_{m ≤ k} η_[m]`.
pub fn bayes_topk_risk(eta: &CondDist, k: usize) -> Result<f64> {
    check_k(k, eta.len(), 1, eta.len() - 1)?;
    let top = top_k_select(eta, k, TieBreakPolicy::LowestIndex, None)?;
    Ok(1.0 - top.indices().iter().map(|&i| eta[i]).sum::<f64>())
}

/// Top-k risk of `s` under `η` with ties resolved against each label.
pub fn topk_risk(s: &[f64], eta: &CondDist, k: usize) -> Result<f64> {
    check_same_len(s.len(), eta.len())?;
    let mut hit = 0.0;
    for (y, &p) in eta.iter().enumerate() {
        if top_k_error(s, y, k, TieBreakPolicy::WorstCaseForLabel)? == 0 {
            hit += p;
        }
    }
    Ok(1.0 - hit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Psi1Case {
    /// `η_[k] > Σ_{i>k} η_[i]`: k ones.
    TopMassDominates,
    /// `η_[k] < Σ_{i>k} η_[i]`: k − 1 ones.
    TailDominates,
    /// Equality: the rank-k entry is free in `[c, c + 1]`.
    Boundary,
}

/// Ranks `first..=last` (1-based, in sorted-η order) may take any value in
/// `[c + lo, c + hi]`; `hi = None` means unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeRange {
    pub first: usize,
    pub last: usize,
    pub lo: f64,
    pub hi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Psi1MinimizerForm {
    pub case: Psi1Case,
    /// Canonical minimizer (c = 0) in sorted-η order.
    pub sorted_minimizer: ScoreVec,
    /// The same vector placed back at the original class positions.
    pub minimizer: ScoreVec,
    /// `permutation[r]` is the class at rank `r + 1`.
    pub permutation: Vec<usize>,
    pub free_ranges: Vec<FreeRange>,
    /// Exact ties in η around rank k make the permutation non-unique.
    pub ambiguous: bool,
    /// Candidate from the short statement, which swaps the two strict cases
    /// (k − 1 ones whenever `η_[k] ≥ tail`).
    pub abridged_minimizer: ScoreVec,
}

/// Tolerance for deciding `η_[k] = Σ_{i>k} η_[i]`.
pub const PSI1_BOUNDARY_TOL: f64 = 1e-12;

fn ones_then_zeros(order: &[usize], ones: usize) -> (Vec<f64>, Vec<f64>) {
    let m = order.len();
    let sorted: Vec<f64> = (0..m).map(|r| if r < ones { 1.0 } else { 0.0 }).collect();
    let mut placed = vec![0.0; m];
    for (r, &class) in order.iter().enumerate() {
        placed[class] = sorted[r];
    }
    (sorted, placed)
}

/// Minimizers of the ψ1 conditional risk for zero-free η.
pub fn psi1_closed_form(eta: &CondDist, k: usize) -> Result<Psi1MinimizerForm> {
    let m = eta.len();
    check_k(k, m, 1, m - 1)?;
    if let Some(i) = eta.iter().position(|&p| p == 0.0) {
        return Err(Error::ZeroProbability(i));
    }
    let order = argsort_desc(eta);
    let at = |r: usize| eta[order[r - 1]];
    let kth = at(k);
    let tail: f64 = (k + 1..=m).map(at).sum();
    let case = if (kth - tail).abs() <= PSI1_BOUNDARY_TOL {
        Psi1Case::Boundary
    } else if kth > tail {
        Psi1Case::TopMassDominates
    } else {
        Psi1Case::TailDominates
    };
    let ones = match case {
        Psi1Case::TopMassDominates => k,
        Psi1Case::TailDominates | Psi1Case::Boundary => k - 1,
    };
    let mut free_ranges = Vec::new();
    if k >= 2 {
        free_ranges.push(FreeRange {
            first: 1,
            last: k - 1,
            lo: 1.0,
            hi: None,
        });
    }
    if case == Psi1Case::Boundary {
        free_ranges.push(FreeRange {
            first: k,
            last: k,
            lo: 0.0,
            hi: Some(1.0),
        });
    }
    let ambiguous = at(k) == at(k + 1) || (k >= 2 && at(k - 1) == at(k));
    let (sorted, placed) = ones_then_zeros(&order, ones);
    let abridged_ones = if kth >= tail { k - 1 } else { k };
    let (_, abridged) = ones_then_zeros(&order, abridged_ones);
    Ok(Psi1MinimizerForm {
        case,
        sorted_minimizer: ScoreVec::new(sorted)?,
        minimizer: ScoreVec::new(placed)?,
        permutation: order,
        free_ranges,
        ambiguous,
        abridged_minimizer: ScoreVec::new(abridged)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimizeConfig {
    pub restarts: usize,
    pub iterations: usize,
    pub initial_step: f64,
    pub seed: u64,
    /// Refine smooth losses with damped Newton steps after descent.
    pub polish: bool,
}

impl Default for MinimizeConfig {
    fn default() -> Self {
        Self {
            restarts: 16,
            iterations: 5000,
            initial_step: 1.0,
            seed: 0,
            polish: true,
        }
    }
}

/// A later restart replaces the incumbent only if it beats it by more than
/// this (relative) margin, so round-off cannot pick between equal minima.
pub const RESTART_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizeOutcome {
    pub minimizer: ScoreVec,
    pub risk: f64,
    /// Risk at the best iterate of each restart, in start order.
    pub restart_risks: Vec<f64>,
    pub best_restart: usize,
}

/// Starting points: the origin, then `{0.5, 1, 2}` times the indicator of
/// the top-j classes of η for `j ∈ {1, k − 1, k, k + 1}`, then Gaussians.
fn starting_points(eta: &[f64], k: usize, cfg: &MinimizeConfig) -> Vec<Vec<f64>> {
    let m = eta.len();
    let mut starts = vec![vec![0.0; m]];
    let order = argsort_desc(eta);
    let mut js: Vec<usize> = [1, k.saturating_sub(1), k, k + 1]
        .into_iter()
        .filter(|&j| j >= 1 && j < m)
        .collect();
    js.dedup();
    for &j in &js {
        for scale in [0.5, 1.0, 2.0] {
            let mut s = vec![0.0; m];
            for &c in &order[..j] {
                s[c] = scale;
            }
            starts.push(s);
        }
    }
    starts.truncate(cfg.restarts);
    let mut rng = rng_from_seed(cfg.seed);
    while starts.len() < cfg.restarts {
        starts.push((0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect());
    }
    starts
}

fn recenter(loss: &LossSpec, s: &mut [f64]) {
    if loss.family.is_shift_invariant() {
        let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
        s.iter_mut().for_each(|v| *v -= lo);
    }
}

/// Multi-start subgradient descent on `s ↦ L_ψ(s, η)`.
pub fn numeric_minimizer(loss: &LossSpec, eta: &CondDist, cfg: &MinimizeConfig) -> Result<MinimizeOutcome> {
    if cfg.restarts == 0 {
        return Err(Error::InvalidParameter("need at least one restart".into()));
    }
    let m = eta.len();
    loss.check(m)?;
    let descent = DescentConfig {
        schedule: StepSchedule::InvSqrt(cfg.initial_step),
        max_iter: cfg.iterations,
        grad_tol: 1e-12,
        divergence_bound: 1e12,
    };
    let mut restart_risks = Vec::with_capacity(cfg.restarts);
    let mut best: Option<(usize, Vec<f64>, f64)> = None;
    for (i, s0) in starting_points(eta, loss.k, cfg).into_iter().enumerate() {
        let run = minimize_scores(|s, g| risk_and_grad(loss, s, eta, Some(g)), &s0, &descent)?;
        restart_risks.push(run.best_value);
        let better = match &best {
            None => true,
            Some((_, _, r)) => run.best_value < r - RESTART_MARGIN * r.abs().max(1.0),
        };
        if better {
            best = Some((i, run.best, run.best_value));
        }
    }
    let (best_restart, mut s, mut risk) = best.expect("at least one restart");
    if cfg.polish && !loss.family.is_hinge() {
        let (ps, pr) = newton_polish(loss, eta, &s, risk);
        s = ps;
        risk = pr;
    }
    recenter(loss, &mut s);
    if !risk.is_finite() {
        return Err(Error::NonFiniteObjective(format!("risk {risk} at the minimizer")));
    }
    Ok(MinimizeOutcome {
        minimizer: ScoreVec::new(s)?,
        risk,
        restart_risks,
        best_restart,
    })
}

/// Levenberg-damped Newton steps with a finite-difference Hessian of the
/// analytic gradient and backtracking on the risk.
fn newton_polish(loss: &LossSpec, eta: &[f64], s0: &[f64], r0: f64) -> (Vec<f64>, f64) {
    let m = s0.len();
    let grad_at = |s: &[f64]| {
        let mut g = vec![0.0; m];
        let r = risk_and_grad(loss, s, eta, Some(&mut g));
        (r, g)
    };
    let mut s = s0.to_vec();
    let mut r = r0;
    let h = 1e-6;
    for _ in 0..100 {
        let (_, g) = grad_at(&s);
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm < 1e-13 {
            break;
        }
        let mut hess = vec![vec![0.0; m]; m];
        let mut probe = s.clone();
        for j in 0..m {
            probe[j] = s[j] + h;
            let (_, gp) = grad_at(&probe);
            probe[j] = s[j] - h;
            let (_, gm) = grad_at(&probe);
            probe[j] = s[j];
            for i in 0..m {
                hess[i][j] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        for i in 0..m {
            for j in 0..i {
                let avg = 0.5 * (hess[i][j] + hess[j][i]);
                hess[i][j] = avg;
                hess[j][i] = avg;
            }
        }
        let mut improved = false;
        for damping in [1e-10, 1e-6, 1e-3, 1e-1, 1.0, 10.0] {
            let mut a = hess.clone();
            for (i, row) in a.iter_mut().enumerate() {
                row[i] += damping;
            }
            let Some(step) = solve(a, g.iter().map(|v| -v).collect()) else {
                continue;
            };
            let mut t = 1.0;
            while t > 1e-4 {
                let cand: Vec<f64> = s.iter().zip(&step).map(|(a, d)| a + t * d).collect();
                let rc = risk_and_grad(loss, &cand, eta, None);
                if rc.is_finite() && rc <= r {
                    let (_, gc) = grad_at(&cand);
                    let gc_norm = gc.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if rc < r || gc_norm < gnorm {
                        s = cand;
                        r = rc;
                        improved = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if improved {
                break;
            }
        }
        if !improved {
            break;
        }
    }
    (s, r)
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[row][c] -= f * a[col][c];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Preservation verdicts for both ψ1 closed-form candidates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Psi1Verdicts {
    pub full_form: bool,
    pub abridged_form: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub eta: CondDist,
    pub loss: LossSpec,
    pub k: usize,
    pub minimizer: ScoreVec,
    pub min_risk: f64,
    pub preserving: bool,
    /// Worst-case top-k risk of the minimizer minus the Bayes top-k risk.
    pub bayes_gap: f64,
    pub n_restarts_used: usize,
    pub restart_risks: Vec<f64>,
    /// Only for ψ1 at zero-free η with the probed k.
    pub psi1_candidates: Option<Psi1Verdicts>,
}

/// Checks whether the numeric minimizer of `L_ψ(·, η)` is top-k preserving.
pub fn calibration_probe(
    loss: &LossSpec,
    eta: &CondDist,
    k: usize,
    cfg: &MinimizeConfig,
) -> Result<CalibrationReport> {
    check_k(k, eta.len(), 1, eta.len() - 1)?;
    let out = numeric_minimizer(loss, eta, cfg)?;
    let preserving = is_top_k_preserving(&out.minimizer, eta, k)?;
    let bayes_gap = topk_risk(&out.minimizer, eta, k)? - bayes_topk_risk(eta, k)?;
    let psi1_candidates = if loss.family == LossFamily::Psi1 && loss.k == k {
        match psi1_closed_form(eta, k) {
            Ok(form) => Some(Psi1Verdicts {
                full_form: is_top_k_preserving(&form.minimizer, eta, k)?,
                abridged_form: is_top_k_preserving(&form.abridged_minimizer, eta, k)?,
            }),
            Err(Error::ZeroProbability(_)) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok(CalibrationReport {
        eta: eta.clone(),
        loss: *loss,
        k,
        minimizer: out.minimizer,
        min_risk: out.risk,
        preserving,
        bayes_gap,
        n_restarts_used: out.restart_risks.len(),
        restart_risks: out.restart_risks,
        psi1_candidates,
    })
}

/// Head-to-tail ratios of the structured family.
pub const STRUCTURED_RATIOS: [f64; 10] = [1.05, 1.1, 1.2, 1.3, 1.4, 1.5, 2.0, 3.0, 5.0, 10.0];
/// Required excess of the tail mass over `k / (k + 1)`.
pub const STRUCTURED_MARGIN: f64 = 0.01;
const JITTERED_PER_RATIO: usize = 3;

fn tail_mass(eta: &[f64], k: usize) -> f64 {
    let order = argsort_desc(eta);
    order[k..].iter().map(|&i| eta[i]).sum()
}

fn in_structured_region(eta: &[f64], k: usize) -> bool {
    let order = argsort_desc(eta);
    let head_min = eta[order[k - 1]];
    let tail_max = eta[order[k]];
    head_min > tail_max && tail_mass(eta, k) > k as f64 / (k as f64 + 1.0) + STRUCTURED_MARGIN
}

/// Tail-heavy distributions: `k` equal heads `ρ t` over `M − k` equal tails
/// `t`, plus jittered and shuffled copies, all with tail mass above
/// `k / (k + 1) + 0.01`.
pub fn structured_family(m: usize, k: usize, seed: u64) -> Result<Vec<CondDist>> {
    check_k(k, m, 1, m - 1)?;
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::new();
    for rho in STRUCTURED_RATIOS {
        let t = 1.0 / (k as f64 * rho + (m - k) as f64);
        let base: Vec<f64> = (0..m).map(|i| if i < k { rho * t } else { t }).collect();
        if !in_structured_region(&base, k) {
            continue;
        }
        out.push(CondDist::renormalized(base.clone(), 1e-9)?);
        for _ in 0..JITTERED_PER_RATIO {
            let mut v: Vec<f64> = base
                .iter()
                .map(|p| p * (1.0 + 0.02 * rng.random_range(-1.0..1.0)))
                .collect();
            for i in (1..m).rev() {
                v.swap(i, rng.random_range(0..=i));
            }
            let z: f64 = v.iter().sum();
            v.iter_mut().for_each(|p| *p /= z);
            if in_structured_region(&v, k) {
                out.push(CondDist::renormalized(v, 1e-9)?);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanOutcome {
    pub dirichlet_draws: usize,
    pub structured_members: usize,
    /// Probes whose minimizer is not top-k preserving.
    pub violations: Vec<CalibrationReport>,
}

/// Probes `n_draws` Dirichlet(1) distributions and the structured family.
/// Probe `i` uses `derive_seed(seed, i)`.
pub fn calibration_scan(
    loss: &LossSpec,
    k: usize,
    m: usize,
    n_draws: usize,
    seed: u64,
    cfg: &MinimizeConfig,
) -> Result<ScanOutcome> {
    if n_draws == 0 {
        return Err(Error::InvalidParameter("need at least one draw".into()));
    }
    loss.check(m)?;
    let structured = structured_family(m, k, derive_seed(seed, u64::MAX))?;
    let mut etas = Vec::with_capacity(n_draws + structured.len());
    for i in 0..n_draws {
        let mut rng = rng_from_seed(derive_seed(seed, i as u64));
        etas.push(CondDist::renormalized(dirichlet_ones(&mut rng, m), 1e-9)?);
    }
    let structured_members = structured.len();
    etas.extend(structured);
    let mut violations = Vec::new();
    for (i, eta) in etas.iter().enumerate() {
        let probe_cfg = MinimizeConfig {
            seed: derive_seed(seed, i as u64),
            ..*cfg
        };
        let report = calibration_probe(loss, eta, k, &probe_cfg)?;
        if !report.preserving {
            violations.push(report);
        }
    }
    Ok(ScanOutcome {
        dirichlet_draws: n_draws,
        structured_members,
        violations,
    })
}

/// η of the cross-entropy-plus-penalty counterexample.
pub const CD_ETA: [f64; 5] = [0.01, 0.02, 0.03, 0.04, 0.9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdCounterexample {
    pub eta: CondDist,
    pub optimum: ScoreVec,
    pub risk: f64,
    pub iterations: usize,
    pub preserving_k1: bool,
    pub preserving_k2: bool,
}

/// Gradient descent on the CD conditional risk at [`CD_ETA`] down to a
/// gradient norm below 1e-9.
pub fn cd_counterexample() -> Result<CdCounterexample> {
    let eta = CondDist::new(CD_ETA.to_vec())?;
    let loss = LossSpec::cd();
    let cfg = DescentConfig {
        schedule: StepSchedule::Constant(0.1),
        max_iter: 100_000,
        grad_tol: 1e-9,
        divergence_bound: 1e12,
    };
    let run = minimize_scores(|s, g| risk_and_grad(&loss, s, &eta, Some(g)), &[0.0; 5], &cfg)?;
    if !run.converged {
        return Err(Error::NoConvergence {
            iterations: run.iterations,
            grad_norm: run.final_grad_norm,
        });
    }
    let risk = *run.trace.last().expect("trace is never empty");
    let optimum = ScoreVec::new(run.last)?;
    Ok(CdCounterexample {
        preserving_k1: is_top_k_preserving(&optimum, &eta, 1)?,
        preserving_k2: is_top_k_preserving(&optimum, &eta, 2)?,
        eta,
        optimum,
        risk,
        iterations: run.iterations,
    })
}
