//! Monotone rational-quadratic spline tone field on `[0, 1]`.
//!
//! A spline with `K` bins is described by `K + 1` increasing abscissas
//! (`knots_x`), `K + 1` increasing ordinates (`knots_y`) and `K + 1` positive
//! knot derivatives (`slopes`). Inside a bin the map is the ratio of two
//! quadratics in the bin-local coordinate, which keeps it strictly
//! increasing, C¹ at the knots, and analytically invertible.
//!
//! [`fit_rqs`] fits the unconstrained parameter vector to paired luma samples.
//! Each step follows a damped Gauss-Newton direction of the reweighted L1
//! loss plus a heavy-ball momentum term, and an Armijo backtracking line
//! search accepts it, so the recorded loss never increases.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{sigmoid, softplus, Tensor};

/// Lower bound on every bin width and height.
pub const MIN_BIN: f64 = 1e-3;
/// Lower bound on every knot derivative.
pub const MIN_SLOPE: f64 = 1e-3;
pub const DEFAULT_KNOTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RqsParams {
    knots_x: Vec<f64>,
    knots_y: Vec<f64>,
    slopes: Vec<f64>,
}

impl RqsParams {
    pub fn new(knots_x: Vec<f64>, knots_y: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        let n = knots_x.len();
        if n < 3 || knots_y.len() != n || slopes.len() != n {
            return Err(Error::Config(format!(
                "spline needs matching knot vectors of length >= 3, got {}/{}/{}",
                n,
                knots_y.len(),
                slopes.len()
            )));
        }
        for (name, k) in [("knots_x", &knots_x), ("knots_y", &knots_y)] {
            if k[0] != 0.0 || k[n - 1] != 1.0 {
                return Err(Error::Config(format!("{name} must start at 0 and end at 1")));
            }
            if k.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::Config(format!("{name} must be strictly increasing")));
            }
        }
        if slopes.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Config("slopes must be finite and > 0".into()));
        }
        Ok(Self {
            knots_x,
            knots_y,
            slopes,
        })
    }

    /// Uniform knots on the diagonal with unit slopes: the identity map.
    pub fn identity(bins: usize) -> Self {
        let knots: Vec<f64> = (0..=bins).map(|i| i as f64 / bins as f64).collect();
        Self {
            knots_x: knots.clone(),
            knots_y: knots,
            slopes: vec![1.0; bins + 1],
        }
    }

    pub fn bins(&self) -> usize {
        self.knots_x.len() - 1
    }

    pub fn knots_x(&self) -> &[f64] {
        &self.knots_x
    }

    pub fn knots_y(&self) -> &[f64] {
        &self.knots_y
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    fn bin_of(knots: &[f64], v: f64) -> usize {
        let k = knots.len() - 1;
        knots[1..k].partition_point(|&edge| edge <= v)
    }

    fn bin(&self, k: usize) -> Bin {
        Bin {
            x0: self.knots_x[k],
            w: self.knots_x[k + 1] - self.knots_x[k],
            y0: self.knots_y[k],
            h: self.knots_y[k + 1] - self.knots_y[k],
            d0: self.slopes[k],
            d1: self.slopes[k + 1],
        }
    }

    /// Spline value at `x`; inputs are clamped into `[0, 1]`.
    pub fn eval(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        self.bin(Self::bin_of(&self.knots_x, x)).eval(x)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        self.bin(Self::bin_of(&self.knots_x, x)).derivative(x)
    }

    pub fn inverse(&self, y: f64) -> f64 {
        let y = y.clamp(0.0, 1.0);
        self.bin(Self::bin_of(&self.knots_y, y)).inverse(y)
    }
}

/// One bin in absolute coordinates.
#[derive(Debug, Clone, Copy)]
struct Bin {
    x0: f64,
    w: f64,
    y0: f64,
    h: f64,
    d0: f64,
    d1: f64,
}

impl Bin {
    fn eval(&self, x: f64) -> f64 {
        let s = self.h / self.w;
        let t = ((x - self.x0) / self.w).clamp(0.0, 1.0);
        let q = t * (1.0 - t);
        let num = s * t * t + self.d0 * q;
        let den = s + (self.d0 + self.d1 - 2.0 * s) * q;
        self.y0 + self.h * num / den
    }

    fn derivative(&self, x: f64) -> f64 {
        let s = self.h / self.w;
        let t = ((x - self.x0) / self.w).clamp(0.0, 1.0);
        let q = t * (1.0 - t);
        let den = s + (self.d0 + self.d1 - 2.0 * s) * q;
        let u = 1.0 - t;
        s * s * (self.d1 * t * t + 2.0 * s * q + self.d0 * u * u) / (den * den)
    }

    fn inverse(&self, y: f64) -> f64 {
        let s = self.h / self.w;
        let dy = y - self.y0;
        let sum = self.d0 + self.d1 - 2.0 * s;
        let a = self.h * (s - self.d0) + dy * sum;
        let b = self.h * self.d0 - dy * sum;
        let c = -s * dy;
        let disc = (b * b - 4.0 * a * c).max(0.0);
        let t = if dy == 0.0 { 0.0 } else { (2.0 * c) / (-b - disc.sqrt()) };
        self.x0 + t.clamp(0.0, 1.0) * self.w
    }

    /// Value and partials with respect to `(x0, x1, y0, y1, d0, d1)`.
    fn eval_with_partials(&self, x: f64) -> (f64, [f64; 6]) {
        let (w, h, d0, d1) = (self.w, self.h, self.d0, self.d1);
        let s = h / w;
        let t = ((x - self.x0) / w).clamp(0.0, 1.0);
        let q = t * (1.0 - t);
        let sum = d0 + d1 - 2.0 * s;
        let num = s * t * t + d0 * q;
        let den = s + sum * q;
        let den2 = den * den;
        let value = self.y0 + h * num / den;

        let dg_ds = h * (t * t * den - num * (1.0 - 2.0 * q)) / den2;
        let dg_dd0 = h * (q * den - num * q) / den2;
        let dg_dd1 = -h * num * q / den2;
        let dnum_dt = 2.0 * s * t + d0 * (1.0 - 2.0 * t);
        let dden_dt = sum * (1.0 - 2.0 * t);
        let dg_dt = h * (dnum_dt * den - num * dden_dt) / den2;

        let dg_dh = num / den + dg_ds / w;
        let dg_dw = -dg_ds * s / w - dg_dt * t / w;
        let dg_dx0_direct = -dg_dt / w;

        (
            value,
            [
                dg_dx0_direct - dg_dw,
                dg_dw,
                1.0 - dg_dh,
                dg_dh,
                dg_dd0,
                dg_dd1,
            ],
        )
    }
}

/// Values of a spline over a tensor, with the number of inputs that had to
/// be clamped into `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineOutput {
    pub values: Tensor,
    pub clamped: usize,
}

fn map_counted(y: &Tensor, f: impl Fn(f64) -> f64) -> SplineOutput {
    let clamped = y.data().iter().filter(|v| !(0.0..=1.0).contains(*v)).count();
    SplineOutput {
        values: y.map(f),
        clamped,
    }
}

pub fn rqs_forward(p: &RqsParams, y: &Tensor) -> SplineOutput {
    map_counted(y, |v| p.eval(v))
}

pub fn rqs_inverse(p: &RqsParams, yhat: &Tensor) -> Tensor {
    yhat.map(|v| p.inverse(v))
}

pub fn rqs_derivative(p: &RqsParams, y: &Tensor) -> Tensor {
    y.map(|v| p.derivative(v))
}

/// Sum of squared differences between adjacent knot slopes.
pub fn smooth_penalty(p: &RqsParams) -> f64 {
    p.slopes.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum()
}

/// Inverse of [`softplus`] for positive arguments.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp_m1()).ln()
    } else {
        y.exp_m1().ln()
    }
}

/// Length of the unconstrained vector for `bins` bins.
pub fn raw_len(bins: usize) -> usize {
    3 * bins + 1
}

fn check_bins(bins: usize) -> Result<()> {
    if bins < 2 {
        return Err(Error::Config(format!("spline needs at least 2 bins, got {bins}")));
    }
    if bins as f64 * MIN_BIN >= 1.0 {
        return Err(Error::Config(format!("{bins} bins leave no room above the minimum bin size")));
    }
    Ok(())
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

fn knots_from_logits(logits: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let bins = logits.len();
    let p = softmax(logits);
    let scale = 1.0 - bins as f64 * MIN_BIN;
    let mut knots = Vec::with_capacity(bins + 1);
    knots.push(0.0);
    let mut acc = 0.0;
    for &pi in &p[..bins - 1] {
        acc += MIN_BIN + scale * pi;
        knots.push(acc);
    }
    knots.push(1.0);
    (knots, p)
}

/// Maps an unconstrained vector `[widths (K) | heights (K) | slopes (K+1)]`
/// to valid spline parameters.
pub fn constrain(raw: &[f64], bins: usize) -> Result<RqsParams> {
    check_bins(bins)?;
    if raw.len() != raw_len(bins) {
        return Err(Error::Config(format!(
            "raw spline vector has length {}, expected {}",
            raw.len(),
            raw_len(bins)
        )));
    }
    if let Some(index) = raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "constrain", index });
    }
    let (knots_x, _) = knots_from_logits(&raw[..bins]);
    let (knots_y, _) = knots_from_logits(&raw[bins..2 * bins]);
    let slopes = raw[2 * bins..].iter().map(|&v| softplus(v) + MIN_SLOPE).collect();
    Ok(RqsParams {
        knots_x,
        knots_y,
        slopes,
    })
}

/// Unconstrained vector that [`constrain`]s to uniform knots with slopes
/// as close to 1 as the floor allows.
pub fn identity_raw(bins: usize) -> Vec<f64> {
    let mut raw = vec![0.0; raw_len(bins)];
    let v = softplus_inverse(1.0 - MIN_SLOPE);
    for r in &mut raw[2 * bins..] {
        *r = v;
    }
    raw
}

/// Optimizer settings and loss weights for [`fit_rqs`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub bins: usize,
    /// Weight of the smoothed L1 luma term.
    pub lambda_l1: f64,
    /// Weight of the slope smoothness penalty.
    pub lambda_smooth: f64,
    /// Smoothing of |e| as sqrt(e² + δ²).
    pub l1_delta: f64,
    pub max_iters: usize,
    pub initial_step: f64,
    pub momentum: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Levenberg damping added to the Gauss-Newton diagonal, relative to
    /// its largest entry.
    pub damping: f64,
    /// Relative loss change below which the fit counts as converged.
    pub tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            bins: DEFAULT_KNOTS,
            lambda_l1: 1.0,
            lambda_smooth: 1e-2,
            l1_delta: 1e-6,
            max_iters: 3000,
            initial_step: 1.0,
            momentum: 0.5,
            armijo: 1e-4,
            max_backtracks: 40,
            damping: 1e-7,
            tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: RqsParams,
    pub raw: Vec<f64>,
    pub loss_trace: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Fit loss `λ₁·mean(√(e²+δ²)) + λ₃·smooth_penalty` at `raw`.
pub fn fit_loss(raw: &[f64], pairs: &[(f64, f64)], cfg: &FitConfig) -> Result<f64> {
    let p = constrain(raw, cfg.bins)?;
    let n = pairs.len() as f64;
    let mut data = 0.0;
    for &(x, target) in pairs {
        let e = p.eval(x) - target;
        data += (e * e + cfg.l1_delta * cfg.l1_delta).sqrt();
    }
    Ok(cfg.lambda_l1 * data / n + cfg.lambda_smooth * smooth_penalty(&p))
}

/// Loss and its analytic gradient with respect to the raw vector.
pub fn fit_loss_grad(raw: &[f64], pairs: &[(f64, f64)], cfg: &FitConfig) -> Result<(f64, Vec<f64>)> {
    let (loss, grad, _) = evaluate(raw, pairs, cfg, false)?;
    Ok((loss, grad))
}

/// Loss, gradient and optionally the Gauss-Newton matrix of the
/// reweighted least-squares majorizer of the smoothed L1 term, all with
/// respect to the raw vector.
fn evaluate(
    raw: &[f64],
    pairs: &[(f64, f64)],
    cfg: &FitConfig,
    want_gn: bool,
) -> Result<(f64, Vec<f64>, Option<DMatrix<f64>>)> {
    let bins = cfg.bins;
    check_bins(bins)?;
    let p = constrain(raw, bins)?;
    let n = pairs.len() as f64;
    let nk = bins + 1;
    let mut gx = vec![0.0; nk];
    let mut gy = vec![0.0; nk];
    let mut gs = vec![0.0; nk];
    // knot-space layout: [x_0..x_K | y_0..y_K | s_0..s_K]
    let mut hk = if want_gn { Some(DMatrix::<f64>::zeros(3 * nk, 3 * nk)) } else { None };
    let mut data = 0.0;
    for &(x, target) in pairs {
        let xc = x.clamp(0.0, 1.0);
        let k = RqsParams::bin_of(&p.knots_x, xc);
        let (value, d) = p.bin(k).eval_with_partials(xc);
        let e = value - target;
        let r = (e * e + cfg.l1_delta * cfg.l1_delta).sqrt();
        data += r;
        let up = cfg.lambda_l1 * (e / r) / n;
        gx[k] += up * d[0];
        gx[k + 1] += up * d[1];
        gy[k] += up * d[2];
        gy[k + 1] += up * d[3];
        gs[k] += up * d[4];
        gs[k + 1] += up * d[5];
        if let Some(h) = hk.as_mut() {
            let w = cfg.lambda_l1 / (r * n);
            let idx = [k, k + 1, nk + k, nk + k + 1, 2 * nk + k, 2 * nk + k + 1];
            for a in 0..6 {
                for b in 0..6 {
                    h[(idx[a], idx[b])] += w * d[a] * d[b];
                }
            }
        }
    }
    let penalty = smooth_penalty(&p);
    for i in 0..bins {
        let diff = p.slopes[i + 1] - p.slopes[i];
        gs[i + 1] += cfg.lambda_smooth * 2.0 * diff;
        gs[i] -= cfg.lambda_smooth * 2.0 * diff;
        if let Some(h) = hk.as_mut() {
            let (a, b) = (2 * nk + i, 2 * nk + i + 1);
            let c = 2.0 * cfg.lambda_smooth;
            h[(a, a)] += c;
            h[(b, b)] += c;
            h[(a, b)] -= c;
            h[(b, a)] -= c;
        }
    }

    let slope_sig: Vec<f64> = raw[2 * bins..].iter().map(|&v| sigmoid(v)).collect();
    let mut grad = vec![0.0; raw.len()];
    knot_logit_grad(&raw[..bins], &gx, &mut grad[..bins]);
    knot_logit_grad(&raw[bins..2 * bins], &gy, &mut grad[bins..2 * bins]);
    for (i, g) in grad[2 * bins..].iter_mut().enumerate() {
        *g = gs[i] * slope_sig[i];
    }
    let gn = hk.map(|h| {
        let c = knot_jacobian(raw, bins, &slope_sig);
        c.transpose() * h * c
    });
    Ok((cfg.lambda_l1 * data / n + cfg.lambda_smooth * penalty, grad, gn))
}

/// Jacobian of the knot-space vector `[x | y | s]` with respect to the raw
/// vector.
fn knot_jacobian(raw: &[f64], bins: usize, slope_sig: &[f64]) -> DMatrix<f64> {
    let nk = bins + 1;
    let scale = 1.0 - bins as f64 * MIN_BIN;
    let mut c = DMatrix::<f64>::zeros(3 * nk, raw.len());
    for (block, logits) in [(0, &raw[..bins]), (1, &raw[bins..2 * bins])] {
        let p = softmax(logits);
        // x_m = Σ_{j<m} w_j and dw_j/du_i = scale·p_j·(δ_ij − p_i)
        for m in 1..bins {
            for i in 0..bins {
                let mut v = 0.0;
                for (j, &pj) in p.iter().enumerate().take(m) {
                    v += scale * pj * (if i == j { 1.0 } else { 0.0 } - p[i]);
                }
                c[(block * nk + m, block * bins + i)] = v;
            }
        }
    }
    for (i, s) in slope_sig.iter().enumerate() {
        c[(2 * nk + i, 2 * bins + i)] = *s;
    }
    c
}

/// Solves `(H + μI) d = g` with `μ` relative to the largest diagonal entry.
fn gauss_newton_direction(mut h: DMatrix<f64>, grad: &[f64], damping: f64) -> Result<Vec<f64>> {
    let n = grad.len();
    let mu = damping * (0..n).map(|i| h[(i, i)]).fold(0.0, f64::max) + 1e-300;
    for i in 0..n {
        h[(i, i)] += mu;
    }
    let chol = h
        .cholesky()
        .ok_or_else(|| Error::Numerical("Gauss-Newton matrix is not positive definite".into()))?;
    Ok(chol.solve(&DVector::from_column_slice(grad)).iter().copied().collect())
}

/// Back-propagates knot-position gradients through cumulative sum and
/// softmax. The pinned end knots carry no gradient.
fn knot_logit_grad(logits: &[f64], g_knots: &[f64], out: &mut [f64]) {
    let bins = logits.len();
    let p = softmax(logits);
    let scale = 1.0 - bins as f64 * MIN_BIN;
    // dL/dw_j = Σ_{k=j+1}^{K-1} g_knots[k]
    let mut g_w = vec![0.0; bins];
    let mut acc = 0.0;
    for j in (0..bins).rev() {
        if j + 1 < bins {
            acc += g_knots[j + 1];
        }
        g_w[j] = acc;
    }
    let dot: f64 = p.iter().zip(&g_w).map(|(a, b)| a * b).sum();
    for i in 0..bins {
        out[i] = scale * p[i] * (g_w[i] - dot);
    }
}

/// Fits a spline mapping `pairs[i].0` (SDR luma) to `pairs[i].1`
/// (normalized linear HDR luma), both in `[0, 1]`.
pub fn fit_rqs(pairs: &[(f64, f64)], cfg: &FitConfig) -> Result<FitResult> {
    check_bins(cfg.bins)?;
    if pairs.len() < 64 {
        return Err(Error::Config(format!("fit needs at least 64 sample pairs, got {}", pairs.len())));
    }
    if let Some(i) = pairs.iter().position(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(Error::NonFinite { op: "fit_rqs", index: i });
    }
    let mut warnings = Vec::new();
    let mean = pairs.iter().map(|p| p.1).sum::<f64>() / pairs.len() as f64;
    let var = pairs.iter().map(|p| (p.1 - mean) * (p.1 - mean)).sum::<f64>() / pairs.len() as f64;
    if var < 1e-12 {
        warnings.push(format!("targets are constant ({mean}); fitted spline is as flat as the bin floors allow"));
    }

    let mut theta = identity_raw(cfg.bins);
    let (mut loss, mut grad, mut gn) = evaluate(&theta, pairs, cfg, true)?;
    if !loss.is_finite() {
        return Err(Error::Diverged {
            reason: "non-finite fit loss at iteration 0".into(),
            trace: vec![loss],
        });
    }
    let mut trace = vec![loss];
    let mut dir = vec![0.0; theta.len()];
    let mut step = cfg.initial_step;
    let mut quiet = 0;

    for iter in 1..=cfg.max_iters {
        let precond = match gauss_newton_direction(gn.take().expect("evaluated with matrix"), &grad, cfg.damping) {
            Ok(p) => p,
            Err(e) => {
                return Err(Error::Diverged {
                    reason: format!("iteration {iter}: {e}"),
                    trace,
                })
            }
        };
        for (d, pg) in dir.iter_mut().zip(&precond) {
            *d = cfg.momentum * *d - pg;
        }
        let mut slope: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
        if !(slope < 0.0) {
            for (d, pg) in dir.iter_mut().zip(&precond) {
                *d = -pg;
            }
            slope = -grad.iter().zip(&precond).map(|(g, pg)| g * pg).sum::<f64>();
        }
        if !(slope < 0.0) {
            break;
        }

        let mut t = step;
        let mut accepted = None;
        for _ in 0..cfg.max_backtracks {
            let cand: Vec<f64> = theta.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            let lc = fit_loss(&cand, pairs, cfg)?;
            if lc.is_finite() && lc <= loss + cfg.armijo * t * slope {
                accepted = Some(cand);
                break;
            }
            t *= 0.5;
        }
        let Some(cand) = accepted else {
            // No admissible step along the momentum direction; retry from the
            // plain preconditioned gradient before declaring convergence.
            if dir.iter().zip(&precond).all(|(d, pg)| *d == -pg) {
                break;
            }
            dir.iter_mut().for_each(|d| *d = 0.0);
            continue;
        };
        let (new_loss, new_grad, new_gn) = evaluate(&cand, pairs, cfg, true)?;
        if !new_loss.is_finite() {
            trace.push(new_loss);
            return Err(Error::Diverged {
                reason: format!("non-finite fit loss at iteration {iter}"),
                trace,
            });
        }
        let improvement = loss - new_loss;
        theta = cand;
        loss = new_loss;
        grad = new_grad;
        gn = new_gn;
        trace.push(loss);
        for d in dir.iter_mut() {
            *d *= t;
        }
        step = (t * 2.0).min(1.0);

        if improvement <= cfg.tolerance * loss.abs().max(1e-300) {
            quiet += 1;
            if quiet >= 20 {
                break;
            }
        } else {
            quiet = 0;
        }
    }

    let params = constrain(&theta, cfg.bins)?;
    Ok(FitResult {
        params,
        raw: theta,
        loss_trace: trace,
        warnings,
    })
}

/// Serializable record of a fitted spline with enough provenance to replay
/// the fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RqsDocument {
    pub bins: usize,
    pub knots_x: Vec<f64>,
    pub knots_y: Vec<f64>,
    pub slopes: Vec<f64>,
    pub provenance: Option<RqsProvenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RqsProvenance {
    pub raw: Vec<f64>,
    pub config: FitConfig,
}

impl RqsDocument {
    pub fn from_fit(fit: &FitResult, cfg: &FitConfig) -> Self {
        Self {
            bins: fit.params.bins(),
            knots_x: fit.params.knots_x.clone(),
            knots_y: fit.params.knots_y.clone(),
            slopes: fit.params.slopes.clone(),
            provenance: Some(RqsProvenance {
                raw: fit.raw.clone(),
                config: cfg.clone(),
            }),
        }
    }

    pub fn params(&self) -> Result<RqsParams> {
        let p = RqsParams::new(self.knots_x.clone(), self.knots_y.clone(), self.slopes.clone())?;
        if p.bins() != self.bins {
            return Err(Error::Format(format!("document says {} bins, knots give {}", self.bins, p.bins())));
        }
        Ok(p)
    }
}
