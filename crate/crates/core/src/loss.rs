//! Physics-consistency losses over predicted per-point flow and pressure,
//! with analytic gradients with respect to both predictions.
//!
//! Three parts: a momentum-balance residual (mean squared, second-order
//! difference stencils), a global pressure-drop consistency term comparing
//! endpoint pressure averages against the segment drop laws, and a sliding
//! window version of the same term. The drop terms use the log-relative form
//! `[ln(1 + |ΔP_pred − ΔP_phys| / (ΔP_phys + ε))]²`, which is flat at the
//! optimum and tolerant of outliers; its `|·|` kink takes subgradient 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hemo::{total_drop_parts, HemoConstants, SegmentMap};

fn loss_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Loss(msg.into()))
}

/// Configuration of the composite physics loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Stabilizer added to the physical drop in the relative error (same
    /// pressure units as ΔP; small against physiological drops).
    pub epsilon: f64,
    /// Points averaged at each end for the global predicted drop.
    pub k_end: usize,
    /// Sliding-window length in points.
    pub window: usize,
    /// Window stride in points.
    pub stride: usize,
    /// Use k_end-averaged window edges instead of single endpoints.
    pub window_edge_average: bool,
    /// Weights (residual, global, local) of the combined loss.
    pub weights: (f64, f64, f64),
    /// Training guard: mean flows below this floor are clamped (with zero
    /// flow gradient) before entering the drop laws, keeping their
    /// denominators positive while predictions are still settling. 0
    /// disables the clamp.
    pub flow_floor: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            k_end: 5,
            window: 50,
            stride: 25,
            window_edge_average: false,
            weights: (1.0, 1.0, 1.0),
            flow_floor: 0.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.epsilon <= 0.0 {
            return loss_err("epsilon must be positive");
        }
        if self.k_end < 1 || 2 * self.k_end > n {
            return loss_err(format!("k_end must be in [1, {}]", n / 2));
        }
        if self.window < 2 || self.window > n {
            return loss_err(format!("window must be in [2, {n}]"));
        }
        if self.stride < 1 || self.stride > self.window {
            return loss_err("stride must be in [1, window]");
        }
        Ok(())
    }
}

/// Loss values and their gradients with respect to predicted pressure and
/// flow.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub residual: f64,
    pub global: f64,
    pub local: f64,
    pub total: f64,
    pub grad_p: Vec<f64>,
    pub grad_q: Vec<f64>,
}

/// Applies the second-order first-derivative stencil (central inside,
/// one-sided three-point at the ends).
fn d1(values: &[f64], dx: f64) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    out[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * dx);
    for i in 1..n - 1 {
        out[i] = (values[i + 1] - values[i - 1]) / (2.0 * dx);
    }
    out[n - 1] = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * dx);
    out
}

/// Applies the transpose of the [`d1`] stencil: `out_j = Σ_i w_ij · in_i`.
fn d1_transpose(values: &[f64], dx: f64) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    let h = 2.0 * dx;
    // endpoint rows
    out[0] += -3.0 * values[0] / h;
    out[1] += 4.0 * values[0] / h;
    out[2] += -values[0] / h;
    out[n - 1] += 3.0 * values[n - 1] / h;
    out[n - 2] += -4.0 * values[n - 1] / h;
    out[n - 3] += values[n - 1] / h;
    // interior rows
    for i in 1..n - 1 {
        out[i + 1] += values[i] / h;
        out[i - 1] -= values[i] / h;
    }
    out
}

/// Momentum-balance residual loss. The residual at each point is
/// `d/dx(Q²/A) + (A/ρ)·dP/dx − (2(ζ+2)μπ/ρ)·(Q/A) + dQ/dx`; the loss is its
/// mean square. Gradients are exact (the loss is quadratic in linear stencil
/// applications of P and Q).
pub fn residual_loss(
    p: &[f64],
    q: &[f64],
    area: &[f64],
    dx: f64,
    c: &HemoConstants,
) -> Result<LossReport> {
    let n = p.len();
    if n < 3 {
        return loss_err("residual needs at least 3 points");
    }
    if q.len() != n || area.len() != n {
        return loss_err("p, q, area must have equal lengths");
    }
    if dx <= 0.0 {
        return loss_err("dx must be positive");
    }
    if area.iter().any(|a| *a <= 0.0) {
        return loss_err("areas must be positive");
    }
    let friction = c.healthy_viscous_coeff() / c.rho; // 2(ζ+2)μπ/ρ

    let q2_over_a: Vec<f64> = q.iter().zip(area).map(|(qi, ai)| qi * qi / ai).collect();
    let d_q2a = d1(&q2_over_a, dx);
    let d_p = d1(p, dx);
    let d_q = d1(q, dx);

    let residual: Vec<f64> = (0..n)
        .map(|i| d_q2a[i] + area[i] / c.rho * d_p[i] - friction * q[i] / area[i] + d_q[i])
        .collect();
    let loss = residual.iter().map(|r| r * r).sum::<f64>() / n as f64;

    // dL/dr_i = 2 r_i / n, then pull back through each term
    let dr: Vec<f64> = residual.iter().map(|r| 2.0 * r / n as f64).collect();

    // pressure path: r += (A/ρ)·D1 p
    let weighted: Vec<f64> = dr.iter().zip(area).map(|(g, a)| g * a / c.rho).collect();
    let grad_p = d1_transpose(&weighted, dx);

    // flow paths: D1(q²/A), −friction·q/A, D1 q
    let dt = d1_transpose(&dr, dx);
    let grad_q: Vec<f64> = (0..n)
        .map(|j| dt[j] * 2.0 * q[j] / area[j] + dt[j] - dr[j] * friction / area[j])
        .collect();

    Ok(LossReport {
        residual: loss,
        global: 0.0,
        local: 0.0,
        total: loss,
        grad_p,
        grad_q,
    })
}

/// One log-relative drop term and its derivatives with respect to the
/// predicted and physical drops.
fn log_drop_term(pred: f64, phys: f64, epsilon: f64) -> Result<(f64, f64, f64)> {
    let denom = phys + epsilon;
    if denom <= 0.0 {
        return loss_err(format!(
            "physical drop plus epsilon must be positive (got {denom:.6e})"
        ));
    }
    let u = pred - phys;
    let g = (1.0 + u.abs() / denom).ln();
    let loss = g * g;
    let s = if u > 0.0 {
        1.0
    } else if u < 0.0 {
        -1.0
    } else {
        0.0
    };
    let d_pred = 2.0 * g * s / (denom + u.abs());
    let d_phys = -2.0 * g * (s * denom + u.abs()) / (denom * (denom + u.abs()));
    Ok((loss, d_pred, d_phys))
}

/// Global drop consistency: predicted drop from k-point endpoint averages,
/// physical drop from the segment laws at the mean predicted flow.
pub fn global_drop_loss(
    p: &[f64],
    q: &[f64],
    area: &[f64],
    dx: f64,
    seg: &SegmentMap,
    c: &HemoConstants,
    cfg: &LossConfig,
) -> Result<LossReport> {
    let n = p.len();
    cfg.validate(n)?;
    if q.len() != n || area.len() != n {
        return loss_err("p, q, area must have equal lengths");
    }
    let k = cfg.k_end;
    let p_in = p[..k].iter().sum::<f64>() / k as f64;
    let p_out = p[n - k..].iter().sum::<f64>() / k as f64;
    let pred = p_in - p_out;

    let q_mean = q.iter().sum::<f64>() / n as f64;
    let (q_eff, q_gate) = clamp_flow(q_mean, cfg.flow_floor);
    let parts = total_drop_parts(area, dx, seg, c)?;
    let phys = parts.eval(q_eff);

    let (loss, d_pred, d_phys) = log_drop_term(pred, phys, cfg.epsilon)?;

    let mut grad_p = vec![0.0; n];
    for g in grad_p.iter_mut().take(k) {
        *g += d_pred / k as f64;
    }
    for g in grad_p.iter_mut().skip(n - k) {
        *g -= d_pred / k as f64;
    }
    let dq_mean = d_phys * parts.d_dq(q_eff) * q_gate;
    let grad_q = vec![dq_mean / n as f64; n];

    Ok(LossReport {
        residual: 0.0,
        global: loss,
        local: 0.0,
        total: loss,
        grad_p,
        grad_q,
    })
}

/// Start offsets of the sliding windows: stride steps while a full window
/// fits, plus a right-aligned tail window when needed.
pub fn window_schedule(n: usize, window: usize, stride: usize) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut s = 0;
    while s + window <= n {
        starts.push(s);
        s += stride;
    }
    let last_end = starts.last().map(|s| s + window).unwrap_or(0);
    if last_end < n {
        starts.push(n - window);
    }
    starts
}

/// Sliding-window drop consistency: the global term evaluated per window
/// (segment kinds clipped to the window), averaged over windows.
pub fn local_drop_loss(
    p: &[f64],
    q: &[f64],
    area: &[f64],
    dx: f64,
    seg: &SegmentMap,
    c: &HemoConstants,
    cfg: &LossConfig,
) -> Result<LossReport> {
    let n = p.len();
    cfg.validate(n)?;
    if q.len() != n || area.len() != n {
        return loss_err("p, q, area must have equal lengths");
    }
    let starts = window_schedule(n, cfg.window, cfg.stride);
    let m = starts.len() as f64;
    let mut loss = 0.0;
    let mut grad_p = vec![0.0; n];
    let mut grad_q = vec![0.0; n];
    for &s in &starts {
        let e = s + cfg.window - 1; // inclusive window end
        let wseg = seg.clip(s, e);
        let wlen = cfg.window;
        let (pred, edge_k) = if cfg.window_edge_average {
            let k = cfg.k_end.min(wlen / 2).max(1);
            let lead = p[s..s + k].iter().sum::<f64>() / k as f64;
            let tail = p[e + 1 - k..=e].iter().sum::<f64>() / k as f64;
            (lead - tail, k)
        } else {
            (p[s] - p[e], 1)
        };
        let q_mean = q[s..=e].iter().sum::<f64>() / wlen as f64;
        let (q_eff, q_gate) = clamp_flow(q_mean, cfg.flow_floor);
        let parts = total_drop_parts(&area[s..=e], dx, &shift(&wseg, s), c)?;
        let phys = parts.eval(q_eff);
        let (l, d_pred, d_phys) = log_drop_term(pred, phys, cfg.epsilon)?;
        loss += l / m;

        let dp = d_pred / m;
        for g in grad_p.iter_mut().skip(s).take(edge_k) {
            *g += dp / edge_k as f64;
        }
        for g in grad_p.iter_mut().skip(e + 1 - edge_k).take(edge_k) {
            *g -= dp / edge_k as f64;
        }
        let dq = d_phys * parts.d_dq(q_eff) * q_gate / (m * wlen as f64);
        for g in grad_q.iter_mut().skip(s).take(wlen) {
            *g += dq;
        }
    }

    Ok(LossReport {
        residual: 0.0,
        global: 0.0,
        local: loss,
        total: loss,
        grad_p,
        grad_q,
    })
}

fn clamp_flow(q_mean: f64, floor: f64) -> (f64, f64) {
    if floor > 0.0 && q_mean < floor {
        (floor, 0.0)
    } else {
        (q_mean, 1.0)
    }
}

/// Re-indexes a clipped segment map to window-local coordinates.
fn shift(seg: &SegmentMap, offset: usize) -> SegmentMap {
    SegmentMap {
        segments: seg
            .segments
            .iter()
            .map(|s| crate::hemo::Segment {
                start: s.start - offset,
                end: s.end - offset,
                kind: s.kind,
            })
            .collect(),
    }
}

/// Weighted sum of the three parts; gradients are the weighted sums of the
/// part gradients.
pub fn total_loss(
    p: &[f64],
    q: &[f64],
    area: &[f64],
    dx: f64,
    seg: &SegmentMap,
    c: &HemoConstants,
    cfg: &LossConfig,
) -> Result<LossReport> {
    let (wr, wg, wl) = cfg.weights;
    let r = residual_loss(p, q, area, dx, c)?;
    let g = global_drop_loss(p, q, area, dx, seg, c, cfg)?;
    let l = local_drop_loss(p, q, area, dx, seg, c, cfg)?;
    let n = p.len();
    let mut grad_p = vec![0.0; n];
    let mut grad_q = vec![0.0; n];
    for i in 0..n {
        grad_p[i] = wr * r.grad_p[i] + wg * g.grad_p[i] + wl * l.grad_p[i];
        grad_q[i] = wr * r.grad_q[i] + wg * g.grad_q[i] + wl * l.grad_q[i];
    }
    Ok(LossReport {
        residual: r.residual,
        global: g.global,
        local: l.local,
        total: wr * r.residual + wg * g.global + wl * l.local,
        grad_p,
        grad_q,
    })
}
