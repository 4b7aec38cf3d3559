//! Distance-dependent quality model, iteration selection under a target
//! SSIM, cross-scene transfer, and composition of the selected checkpoints.
//!
//! The quality of label `l` at checkpoint `i`, seen from a camera whose
//! closest `l`-point is at distance `d`, is modeled with two regimes split
//! at a breakpoint `beta`:
//!
//! ```text
//! q(d) = K1 * exp(-gamma1 * |d - mu1|^alpha1)   d <  beta
//!        K2 * exp(-gamma2 * |d - mu2|^alpha2)   d >= beta
//! ```
//!
//! Selection minimizes the total gaussian count subject to every label
//! meeting the target. The constraint is per label, so the problem splits
//! into one small choice per label.

use std::collections::BTreeMap;
use std::sync::Arc;

use log::warn;
use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::camera::{min_label_distance, ViewSet};
use crate::error::{Error, Result};
use crate::metrics::QualityProfile;
use crate::renderer::{CompositionEntry, CompositionManifest};
use crate::semantics::LabeledCloud;
use crate::splat_io::{occupancy_bytes, CheckpointSet, SplatCloud};
use crate::LabelId;

pub const K_MAX: f64 = 1.2;
pub const K_MIN: f64 = 1e-9;
pub const ALPHA_MIN: f64 = 0.1;
pub const ALPHA_MAX: f64 = 4.0;
const GAMMA_MAX: f64 = 1e6;
pub const MAX_ITERATIONS: usize = 100;
pub const STEP_TOLERANCE: f64 = 1e-10;
/// Minimum samples on each side of the breakpoint.
pub const MIN_SEGMENT: usize = 3;
pub const DENSE_SAMPLES: usize = 256;
const GRID_STARTS: usize = 10;
const ALPHA_GRID: &[f64] = &[
    0.1, 0.13, 0.17, 0.22, 0.3, 0.4, 0.5, 0.65, 0.8, 1.0, 1.25, 1.6, 2.0, 2.5, 3.2, 4.0,
];

/// One regime: `k * exp(-gamma * |d - mu|^alpha)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regime {
    pub k: f64,
    pub gamma: f64,
    pub mu: f64,
    pub alpha: f64,
}

impl Regime {
    #[inline]
    pub fn eval(&self, d: f64) -> f64 {
        let u = (d - self.mu).abs();
        self.k * (-self.gamma * u.powf(self.alpha)).exp()
    }

    fn to_vec(self) -> Vector4<f64> {
        Vector4::new(self.k, self.gamma, self.mu, self.alpha)
    }

    fn from_vec(v: &Vector4<f64>) -> Self {
        Regime {
            k: v[0],
            gamma: v[1],
            mu: v[2],
            alpha: v[3],
        }
    }

    /// Residual gradient with respect to (k, gamma, mu, alpha).
    fn gradient(&self, d: f64) -> Vector4<f64> {
        let diff = d - self.mu;
        let u = diff.abs();
        if u == 0.0 {
            // derivatives in gamma/alpha vanish; mu derivative is 0 for
            // alpha > 1 and unbounded otherwise, take 0
            return Vector4::new(1.0, 0.0, 0.0, 0.0);
        }
        let ua = u.powf(self.alpha);
        let e = (-self.gamma * ua).exp();
        let f = self.k * e;
        Vector4::new(
            e,
            -f * ua,
            f * self.gamma * self.alpha * ua / u * diff.signum(),
            -f * self.gamma * ua * u.ln(),
        )
    }
}

mod beta_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Fitted two-regime curve for one (label, iteration). `beta` is +inf for
/// single-regime fits (serialized as `null`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LodCurveParams {
    #[serde(rename = "label")]
    pub label_id: LabelId,
    pub iteration: u32,
    #[serde(rename = "K1")]
    pub k1: f64,
    pub gamma1: f64,
    pub mu1: f64,
    pub alpha1: f64,
    #[serde(rename = "K2")]
    pub k2: f64,
    pub gamma2: f64,
    pub mu2: f64,
    pub alpha2: f64,
    #[serde(with = "beta_serde")]
    pub beta: f64,
    #[serde(rename = "rmse")]
    pub fit_rmse: f64,
    pub n_points: usize,
}

impl LodCurveParams {
    pub fn from_regimes(
        label_id: LabelId,
        iteration: u32,
        near: Regime,
        far: Regime,
        beta: f64,
    ) -> Self {
        LodCurveParams {
            label_id,
            iteration,
            k1: near.k,
            gamma1: near.gamma,
            mu1: near.mu,
            alpha1: near.alpha,
            k2: far.k,
            gamma2: far.gamma,
            mu2: far.mu,
            alpha2: far.alpha,
            beta,
            fit_rmse: 0.0,
            n_points: 0,
        }
    }

    pub fn near(&self) -> Regime {
        Regime {
            k: self.k1,
            gamma: self.gamma1,
            mu: self.mu1,
            alpha: self.alpha1,
        }
    }

    pub fn far(&self) -> Regime {
        Regime {
            k: self.k2,
            gamma: self.gamma2,
            mu: self.mu2,
            alpha: self.alpha2,
        }
    }

    pub fn is_single_regime(&self) -> bool {
        self.beta.is_infinite()
    }

    /// Unclamped model value.
    pub fn eval_raw(&self, d: f64) -> f64 {
        if d < self.beta {
            self.near().eval(d)
        } else {
            self.far().eval(d)
        }
    }

    pub fn check_invariants(&self) -> Result<()> {
        let ok = (K_MIN..=K_MAX).contains(&self.k1)
            && (K_MIN..=K_MAX).contains(&self.k2)
            && self.gamma1 >= 0.0
            && self.gamma2 >= 0.0
            && (ALPHA_MIN..=ALPHA_MAX).contains(&self.alpha1)
            && (ALPHA_MIN..=ALPHA_MAX).contains(&self.alpha2)
            && self.beta > 0.0
            && self.fit_rmse >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Argument(format!("curve parameters out of bounds: {self:?}")))
        }
    }
}

/// Predicted SSIM at closest-point distance `d_min`, clamped to [0, 1].
pub fn predict_ssim(params: &LodCurveParams, d_min: f64) -> f64 {
    params.eval_raw(d_min).clamp(0.0, 1.0)
}

/// `n` evenly spaced (d, predicted SSIM) pairs over `[lo, hi]`.
pub fn dense_curve(params: &LodCurveParams, lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    if n == 1 {
        return vec![(lo, predict_ssim(params, lo))];
    }
    (0..n)
        .map(|i| {
            let d = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            (d, predict_ssim(params, d))
        })
        .collect()
}

/// True when `values` rise (weakly) to a single peak and then fall or
/// stay flat; changes smaller than `tol` are ignored.
pub fn is_unimodal(values: &[f64], tol: f64) -> bool {
    let mut descending = false;
    let mut anchor = match values.first() {
        Some(&v) => v,
        None => return true,
    };
    for &v in &values[1..] {
        if descending {
            if v > anchor + tol {
                return false;
            }
            anchor = anchor.min(v);
        } else if v < anchor - tol {
            descending = true;
            anchor = v;
        } else {
            anchor = anchor.max(v);
        }
    }
    true
}

struct SegmentFit {
    regime: Regime,
    sse: f64,
}

fn sse(regime: &Regime, pts: &[(f64, f64)]) -> f64 {
    pts.iter()
        .map(|&(d, y)| {
            let r = regime.eval(d) - y;
            r * r
        })
        .sum()
}

fn project(v: &mut Vector4<f64>, mu_bounds: (f64, f64)) {
    v[0] = v[0].clamp(K_MIN, K_MAX);
    v[1] = v[1].clamp(0.0, GAMMA_MAX);
    v[2] = v[2].clamp(mu_bounds.0, mu_bounds.1);
    v[3] = v[3].clamp(ALPHA_MIN, ALPHA_MAX);
}

/// Bounded damped Gauss-Newton (Levenberg-Marquardt scaling) from `start`.
fn gauss_newton(
    start: Regime,
    pts: &[(f64, f64)],
    mu_bounds: (f64, f64),
    max_iterations: usize,
) -> SegmentFit {
    let mut theta = start.to_vec();
    project(&mut theta, mu_bounds);
    let mut current = Regime::from_vec(&theta);
    let mut cost = sse(&current, pts);
    let mut lambda = 1e-3;

    for _ in 0..max_iterations {
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        for &(d, y) in pts {
            let g = current.gradient(d);
            let r = current.eval(d) - y;
            jtj += g * g.transpose();
            jtr += g * r;
        }
        if !jtr.iter().all(|v| v.is_finite()) {
            break;
        }

        let mut accepted = false;
        let mut small_step = false;
        for _ in 0..12 {
            let mut a = jtj;
            for k in 0..4 {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(delta) = a.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let mut next = theta + delta;
            project(&mut next, mu_bounds);
            let step = (next - theta).norm();
            let candidate = Regime::from_vec(&next);
            let c = sse(&candidate, pts);
            if c.is_finite() && c < cost {
                small_step = step <= STEP_TOLERANCE * (1.0 + theta.norm())
                    || cost - c <= 1e-9 * cost;
                theta = next;
                current = candidate;
                cost = c;
                lambda = (lambda * 0.3).max(1e-12);
                accepted = true;
                break;
            }
            if step <= STEP_TOLERANCE * (1.0 + theta.norm()) {
                small_step = true;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted || small_step || cost == 0.0 {
            break;
        }
    }
    SegmentFit {
        regime: current,
        sse: cost,
    }
}

/// Weighted least squares of `ln y = ln k - gamma * |d - mu|^alpha` with
/// weights `y^2`, so residuals approximate linear-scale ones.
fn log_linear_fit(pts: &[(f64, f64)], mu: f64, alpha: f64) -> Option<Regime> {
    let (mut sw, mut sv, mut sl, mut svv, mut svl) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(d, y) in pts {
        if y <= 1e-9 {
            continue;
        }
        let w = y * y;
        let v = (d - mu).abs().powf(alpha);
        let l = y.ln();
        sw += w;
        sv += w * v;
        sl += w * l;
        svv += w * v * v;
        svl += w * v * l;
    }
    if sw <= 0.0 {
        return None;
    }
    let var = svv - sv * sv / sw;
    let mut gamma = if var > 1e-300 {
        -(svl - sv * sl / sw) / var
    } else {
        0.0
    };
    gamma = gamma.clamp(0.0, GAMMA_MAX);
    let ln_k = (sl + gamma * sv) / sw;
    Some(Regime {
        k: ln_k.exp().clamp(K_MIN, K_MAX),
        gamma,
        mu,
        alpha,
    })
}

/// Deterministic multi-start fit of one regime to `pts` (sorted by d).
fn fit_segment(pts: &[(f64, f64)]) -> SegmentFit {
    let n = pts.len() as f64;
    let d_lo = pts.first().map_or(0.0, |p| p.0);
    let d_hi = pts.last().map_or(0.0, |p| p.0);
    let span = (d_hi - d_lo).max(1e-6);
    let mu_bounds = (d_lo - 10.0 * span, d_hi + 10.0 * span);

    // flat model: the least-squares constant, always a candidate
    let mean = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let flat = Regime {
        k: mean.clamp(K_MIN, K_MAX),
        gamma: 0.0,
        mu: (d_lo + d_hi) / 2.0,
        alpha: 1.0,
    };
    let mut best = SegmentFit {
        regime: flat,
        sse: sse(&flat, pts),
    };

    let (peak_d, peak_y) = pts
        .iter()
        .copied()
        .fold((d_lo, f64::NEG_INFINITY), |acc, p| if p.1 > acc.1 { p } else { acc });
    let k0 = peak_y.clamp(1e-3, K_MAX);
    // default start: peak value and location, alpha 1, gamma from the
    // log-ratio at the sample farthest from the peak
    let &(far_d, far_y) = pts
        .iter()
        .max_by(|a, b| (a.0 - peak_d).abs().total_cmp(&(b.0 - peak_d).abs()))
        .expect("non-empty");
    let ratio = (k0 / far_y.max(1e-3)).max(1.0 + 1e-6);
    let mut starts = vec![Regime {
        k: k0,
        gamma: (ratio.ln() / (far_d - peak_d).abs().max(1e-9)).clamp(1e-8, GAMMA_MAX),
        mu: peak_d,
        alpha: 1.0,
    }];

    // for fixed (mu, alpha) the model is linear in (ln k, gamma) on log
    // data; scan a grid and keep the best few as extra starts
    let mut mus: Vec<f64> = pts.iter().map(|p| p.0).collect();
    for w in pts.windows(2) {
        for f in [0.25, 0.5, 0.75] {
            mus.push(w[0].0 + f * (w[1].0 - w[0].0));
        }
    }
    for f in [0.02, 0.05, 0.1, 0.25, 0.5, 1.0, 2.0] {
        mus.push(d_lo - f * span);
        mus.push(d_hi + f * span);
    }
    let mut grid: Vec<(f64, Regime)> = Vec::with_capacity(mus.len() * ALPHA_GRID.len());
    for &mu in &mus {
        for &alpha in ALPHA_GRID {
            if let Some(r) = log_linear_fit(pts, mu, alpha) {
                grid.push((sse(&r, pts), r));
            }
        }
    }
    grid.sort_by(|a, b| a.0.total_cmp(&b.0));
    starts.extend(grid.into_iter().take(GRID_STARTS).map(|(_, r)| r));

    // residual at rounding level: no start can do meaningfully better
    let exact = 1e-24 * pts.iter().map(|p| p.1 * p.1).sum::<f64>();
    for start in starts {
        let mut fit = gauss_newton(start, pts, mu_bounds, MAX_ITERATIONS);
        // one restart from the converged point with fresh damping
        if fit.sse > 0.0 {
            let again = gauss_newton(fit.regime, pts, mu_bounds, MAX_ITERATIONS);
            if again.sse < fit.sse {
                fit = again;
            }
        }
        if fit.sse < best.sse {
            best = fit;
        }
        if best.sse <= exact {
            break;
        }
    }
    best
}

fn aicc(sse: f64, n: usize, k: usize) -> Option<f64> {
    if n <= k + 1 {
        return None;
    }
    let n_f = n as f64;
    let s = (sse / n_f).max(1e-30);
    let k_f = k as f64;
    Some(n_f * s.ln() + 2.0 * k_f + 2.0 * k_f * (k_f + 1.0) / (n_f - k_f - 1.0))
}

/// Linear-interpolated quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

/// Fits the two-regime model to (d_min, ssim) samples of one
/// (label, iteration).
///
/// Breakpoints are searched between consecutive distinct distances inside
/// the 10%..90% quantile band, with at least three samples per side. The
/// best split is kept over the single-regime fit only when it lowers the
/// small-sample corrected AIC.
pub fn fit_lod_curve(
    label_id: LabelId,
    iteration: u32,
    samples: &[(f64, f64)],
) -> Result<LodCurveParams> {
    if samples.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "label {label_id} iteration {iteration}: {} samples, need 4",
            samples.len()
        )));
    }
    if samples.iter().any(|(d, y)| !d.is_finite() || !y.is_finite()) {
        return Err(Error::Argument("non-finite sample".into()));
    }
    let mut pts = samples.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut distinct: Vec<f64> = pts.iter().map(|p| p.0).collect();
    distinct.dedup();
    if distinct.len() == 1 {
        return Err(Error::DegenerateFit(format!(
            "label {label_id} iteration {iteration}: all samples at d = {}",
            distinct[0]
        )));
    }
    if distinct.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "label {label_id} iteration {iteration}: {} distinct distances, need 4",
            distinct.len()
        )));
    }
    let n = pts.len();

    let single = fit_segment(&pts);
    let mut chosen = (single.regime, single.regime, f64::INFINITY, single.sse);

    let ds: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let (q_lo, q_hi) = (quantile(&ds, 0.1), quantile(&ds, 0.9));
    let mut best_split: Option<(Regime, Regime, f64, f64)> = None;
    for s in MIN_SEGMENT..=n - MIN_SEGMENT {
        if ds[s - 1] == ds[s] {
            continue;
        }
        let beta = 0.5 * (ds[s - 1] + ds[s]);
        if beta < q_lo || beta > q_hi {
            continue;
        }
        let near = fit_segment(&pts[..s]);
        let far = fit_segment(&pts[s..]);
        let total = near.sse + far.sse;
        if best_split.as_ref().is_none_or(|b| total < b.3) {
            best_split = Some((near.regime, far.regime, beta, total));
        }
    }
    if let Some(split) = best_split {
        // 8 regime parameters + breakpoint vs 4
        if let (Some(a2), Some(a1)) = (aicc(split.3, n, 9), aicc(single.sse, n, 4)) {
            if a2 < a1 {
                chosen = split;
            }
        }
    }

    let (near, far, beta, total) = chosen;
    let mut params = LodCurveParams::from_regimes(label_id, iteration, near, far, beta);
    params.fit_rmse = (total / n as f64).sqrt();
    params.n_points = n;
    Ok(params)
}

/// Fitted curves keyed by (label, iteration).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CurveSet {
    pub curves: Vec<LodCurveParams>,
}

impl CurveSet {
    pub fn get(&self, label: LabelId, iteration: u32) -> Option<&LodCurveParams> {
        self.curves
            .iter()
            .find(|c| c.label_id == label && c.iteration == iteration)
    }

    pub fn labels(&self) -> Vec<LabelId> {
        let mut v: Vec<LabelId> = self.curves.iter().map(|c| c.label_id).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn insert(&mut self, c: LodCurveParams) {
        self.curves
            .retain(|o| !(o.label_id == c.label_id && o.iteration == c.iteration));
        self.curves.push(c);
        self.curves.sort_by_key(|c| (c.label_id, c.iteration));
    }
}

/// A (label, iteration) pair that could not be fitted, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFailure {
    pub label_id: LabelId,
    pub iteration: u32,
    pub reason: String,
}

/// Fits every (label, iteration) of a profile using samples that carry a
/// distance. Unfittable pairs are reported, not fatal.
pub fn fit_profile(profile: &QualityProfile) -> (CurveSet, Vec<FitFailure>) {
    let mut groups: BTreeMap<(LabelId, u32), Vec<(f64, f64)>> = BTreeMap::new();
    for s in &profile.samples {
        let entry = groups.entry((s.label_id, s.iteration)).or_default();
        if let Some(d) = s.d_min {
            entry.push((d, s.ssim));
        }
    }
    let results: Vec<_> = {
        use rayon::prelude::*;
        groups
            .par_iter()
            .map(|(&(l, i), pts)| (l, i, fit_lod_curve(l, i, pts)))
            .collect()
    };
    let mut set = CurveSet::default();
    let mut failures = Vec::new();
    for (l, i, r) in results {
        match r {
            Ok(c) => set.insert(c),
            Err(e) => failures.push(FitFailure {
                label_id: l,
                iteration: i,
                reason: e.to_string(),
            }),
        }
    }
    (set, failures)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Measured masked SSIM of the view.
    #[default]
    Empirical,
    /// Fitted curve evaluated at the view's d_min.
    Model,
}

impl std::str::FromStr for SelectionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "empirical" => Ok(SelectionMode::Empirical),
            "model" => Ok(SelectionMode::Model),
            other => Err(Error::Argument(format!(
                "unknown selection mode `{other}` (empirical|model)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionChoice {
    pub iteration: u32,
    /// Measured (empirical) or predicted (model) SSIM at the chosen iteration.
    pub ssim: Option<f64>,
    pub gaussians: u64,
    /// No iteration met the target; the largest one was taken.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPlan {
    pub target_ssim: f64,
    pub mode: SelectionMode,
    pub view: String,
    pub choices: BTreeMap<LabelId, SelectionChoice>,
    pub total_gaussians: u64,
    pub total_bytes: u64,
}

impl SelectionPlan {
    fn new(
        target_ssim: f64,
        mode: SelectionMode,
        view: &str,
        choices: BTreeMap<LabelId, SelectionChoice>,
    ) -> Self {
        let total_gaussians = choices.values().map(|c| c.gaussians).sum();
        SelectionPlan {
            target_ssim,
            mode,
            view: view.to_string(),
            choices,
            total_gaussians,
            total_bytes: occupancy_bytes(total_gaussians),
        }
    }

    pub fn check_invariants(&self) -> Result<()> {
        let sum: u64 = self.choices.values().map(|c| c.gaussians).sum();
        if sum != self.total_gaussians || self.total_bytes != occupancy_bytes(sum) {
            return Err(Error::Argument("plan totals are inconsistent".into()));
        }
        Ok(())
    }
}

/// One candidate checkpoint of a label: (iteration, quality, count).
/// Quality `None` means the constraint cannot be evaluated there.
pub type Candidate = (u32, Option<f64>, u64);

/// Per-label choice: among iterations meeting the target, the one with the
/// fewest gaussians (earliest on ties); with no feasible iteration, the
/// largest iteration. `candidates` must be sorted by iteration.
pub fn choose_for_label(candidates: &[Candidate], target: f64) -> Option<SelectionChoice> {
    let last = candidates.last()?;
    let feasible = candidates
        .iter()
        .filter(|(_, q, _)| q.is_some_and(|q| q >= target))
        .min_by_key(|(i, _, n)| (*n, *i));
    Some(match feasible {
        Some(&(iteration, ssim, gaussians)) => SelectionChoice {
            iteration,
            ssim,
            gaussians,
            fallback: false,
        },
        None => SelectionChoice {
            iteration: last.0,
            ssim: last.1,
            gaussians: last.2,
            fallback: true,
        },
    })
}

fn check_target(target: f64) -> Result<()> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Argument(format!("target SSIM {target} not in (0, 1)")));
    }
    Ok(())
}

/// Chooses one checkpoint per label for `view` so that every label meets
/// `target` with the fewest gaussians.
pub fn select_iterations(
    profile: &QualityProfile,
    curves: Option<&CurveSet>,
    view: &str,
    target: f64,
    mode: SelectionMode,
) -> Result<SelectionPlan> {
    check_target(target)?;
    if mode == SelectionMode::Model && curves.is_none() {
        return Err(Error::Argument("model selection needs fitted curves".into()));
    }
    let mut choices = BTreeMap::new();
    for label in profile.labels() {
        let in_view: Vec<_> = profile
            .samples
            .iter()
            .filter(|s| s.label_id == label && s.view == view)
            .collect();
        if in_view.is_empty() {
            warn!(
                "label {} has no samples in view `{view}`; excluded",
                profile.label_map.name(label)
            );
            continue;
        }
        // counts are view-independent; take them from any view
        let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
        for s in profile.samples.iter().filter(|s| s.label_id == label) {
            counts.entry(s.iteration).or_insert(s.gaussian_count);
        }
        let d_min = in_view.iter().find_map(|s| s.d_min);
        let candidates: Vec<Candidate> = counts
            .iter()
            .map(|(&i, &n)| {
                let q = match mode {
                    SelectionMode::Empirical => {
                        in_view.iter().find(|s| s.iteration == i).map(|s| s.ssim)
                    }
                    SelectionMode::Model => curves
                        .and_then(|c| c.get(label, i))
                        .zip(d_min)
                        .map(|(c, d)| predict_ssim(c, d)),
                };
                (i, q, n)
            })
            .collect();
        if let Some(choice) = choose_for_label(&candidates, target) {
            choices.insert(label, choice);
        }
    }
    Ok(SelectionPlan::new(target, mode, view, choices))
}

/// Applies curves fitted on one scene to another: d_min is measured in the
/// target scene and gaussian counts come from its catalog. Labels without
/// curves fall back to their largest iteration.
pub fn transfer_plan(
    curves: &CurveSet,
    target_cloud: &LabeledCloud,
    target_views: &ViewSet,
    view: &str,
    target_counts: &CheckpointSet,
    target: f64,
) -> Result<SelectionPlan> {
    check_target(target)?;
    let pose = target_views
        .find_by_name(view)
        .ok_or_else(|| Error::Transfer(format!("view `{view}` not in target scene")))?;
    let camera = target_views.camera_of(pose)?;
    let fitted = curves.labels();
    let labels: Vec<LabelId> = target_counts.labels().keys().copied().collect();
    if !labels.iter().any(|l| fitted.contains(l)) {
        return Err(Error::Transfer(
            "no label is shared between the fitted curves and the target scene".into(),
        ));
    }
    let mut choices = BTreeMap::new();
    for label in labels {
        let Some(d) = min_label_distance(target_cloud, camera, pose, label) else {
            warn!("label {label} not visible from `{view}`; excluded");
            continue;
        };
        let candidates: Vec<Candidate> = target_counts
            .iterations()
            .iter()
            .filter_map(|&i| {
                let n = target_counts.count(label, i)? as u64;
                Some((i, curves.get(label, i).map(|c| predict_ssim(c, d)), n))
            })
            .collect();
        if let Some(choice) = choose_for_label(&candidates, target) {
            choices.insert(label, choice);
        }
    }
    Ok(SelectionPlan::new(target, SelectionMode::Model, view, choices))
}

/// Loads the chosen checkpoints and merges them (ascending label order).
pub fn compose_selection(
    plan: &SelectionPlan,
    checkpoints: &CheckpointSet,
) -> Result<(CompositionManifest, SplatCloud)> {
    let mut entries = Vec::with_capacity(plan.choices.len());
    for (&label, choice) in &plan.choices {
        let entry = checkpoints.get(label, choice.iteration).ok_or_else(|| {
            Error::Composition(format!(
                "no checkpoint for label {label} at iteration {}",
                choice.iteration
            ))
        })?;
        let cloud: Arc<SplatCloud> = entry.load()?;
        if cloud.len() as u64 != choice.gaussians {
            return Err(Error::Composition(format!(
                "label {label} iteration {}: plan expects {} gaussians, checkpoint has {}",
                choice.iteration,
                choice.gaussians,
                cloud.len()
            )));
        }
        entries.push(CompositionEntry {
            label_id: label,
            iteration: choice.iteration,
            cloud,
        });
    }
    let manifest = CompositionManifest::new(entries)?;
    let merged = manifest.merged();
    Ok((manifest, merged))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recovery_params() -> LodCurveParams {
        LodCurveParams::from_regimes(
            0,
            30000,
            Regime {
                k: 0.7,
                gamma: 0.3,
                mu: 2.0,
                alpha: 1.5,
            },
            Regime {
                k: 0.65,
                gamma: 0.05,
                mu: 6.0,
                alpha: 1.0,
            },
            5.0,
        )
    }

    fn recovery_samples() -> Vec<(f64, f64)> {
        let g = recovery_params();
        (0..40)
            .map(|i| {
                let d = 0.5 + 11.5 * i as f64 / 39.0;
                (d, g.eval_raw(d))
            })
            .collect()
    }

    #[test]
    fn recovers_generator_curve() {
        let samples = recovery_samples();
        let fit = fit_lod_curve(0, 30000, &samples).unwrap();
        fit.check_invariants().unwrap();
        assert!(fit.fit_rmse < 1e-6, "rmse {}", fit.fit_rmse);
        let g = recovery_params();
        for &(d, _) in &samples {
            assert!((predict_ssim(&fit, d) - predict_ssim(&g, d)).abs() < 1e-4, "d={d}");
        }
        assert!((predict_ssim(&fit, 3.0) - predict_ssim(&g, 3.0)).abs() < 1e-4);
        assert!(fit.beta > 4.7 && fit.beta < 5.3, "beta {}", fit.beta);
    }

    #[test]
    fn flat_samples() {
        let samples: Vec<(f64, f64)> = (0..10).map(|i| (1.0 + i as f64, 0.62)).collect();
        let fit = fit_lod_curve(1, 5000, &samples).unwrap();
        assert!(fit.fit_rmse < 1e-9);
        assert!(fit.gamma1 < 1e-9);
        assert!((fit.k1 - 0.62).abs() < 1e-9);
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(
            fit_lod_curve(0, 0, &[(1.0, 0.5), (2.0, 0.5), (3.0, 0.5)]),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(
            fit_lod_curve(0, 0, &[(2.0, 0.5), (2.0, 0.6), (2.0, 0.5), (2.0, 0.7)]),
            Err(Error::DegenerateFit(_))
        ));
    }

    #[test]
    fn predict_examples() {
        let p = recovery_params();
        assert_eq!(predict_ssim(&p, 2.0), 0.7);
        let mut flat = p;
        flat.gamma1 = 0.0;
        for d in [0.1, 1.0, 4.9] {
            assert_eq!(predict_ssim(&flat, d), 0.7);
        }
        // regime 2 at and beyond beta
        assert_eq!(predict_ssim(&p, 6.0), 0.65);
        let mut big = p;
        big.k1 = 1.2;
        assert_eq!(predict_ssim(&big, 2.0), 1.0);
    }

    #[test]
    fn few_points_stay_single_regime() {
        let samples = [(1.0, 0.5), (2.0, 0.62), (3.5, 0.66), (5.0, 0.6), (7.0, 0.55), (9.0, 0.52)];
        let fit = fit_lod_curve(0, 1000, &samples).unwrap();
        assert!(fit.is_single_regime());
        let dense: Vec<f64> = dense_curve(&fit, 1.0, 9.0, DENSE_SAMPLES)
            .into_iter()
            .map(|p| p.1)
            .collect();
        assert!(is_unimodal(&dense, 1e-9));
    }

    #[test]
    fn unimodal_detector() {
        assert!(is_unimodal(&[0.1, 0.2, 0.3, 0.3, 0.2, 0.1], 0.0));
        assert!(is_unimodal(&[0.5, 0.4, 0.3], 0.0));
        assert!(is_unimodal(&[0.1, 0.2, 0.3], 0.0));
        assert!(!is_unimodal(&[0.3, 0.2, 0.25], 0.0));
        assert!(is_unimodal(&[0.3, 0.2, 0.2000001], 1e-3));
    }

    #[test]
    fn curve_json_shape() {
        let mut p = recovery_params();
        p.beta = f64::INFINITY;
        let json = serde_json::to_value(p).unwrap();
        for key in ["label", "iteration", "K1", "gamma1", "mu1", "alpha1", "K2", "beta", "rmse", "n_points"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert!(json["beta"].is_null());
        let back: LodCurveParams = serde_json::from_value(json).unwrap();
        assert!(back.beta.is_infinite());
    }

    #[test]
    fn choose_rules() {
        let c = [(5000, Some(0.587), 141_804), (10000, Some(0.697), 234_000), (15000, Some(0.742), 334_433), (30000, Some(0.75), 336_632)];
        let pick = choose_for_label(&c, 0.5).unwrap();
        assert_eq!((pick.iteration, pick.gaussians, pick.fallback), (5000, 141_804, false));
        let pick = choose_for_label(&c, 0.7).unwrap();
        assert_eq!(pick.iteration, 15000);
        let pick = choose_for_label(&c, 0.8).unwrap();
        assert_eq!((pick.iteration, pick.fallback), (30000, true));
        assert!(choose_for_label(&[], 0.5).is_none());
        // fewest gaussians among feasible when counts shrink late
        let shrink = [(1, Some(0.9), 10), (2, Some(0.9), 8)];
        assert_eq!(choose_for_label(&shrink, 0.5).unwrap().iteration, 2);
    }
}
