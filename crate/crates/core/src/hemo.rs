//! Reduced-order 1D hemodynamics: segment pressure-drop laws, a marching
//! pressure profile, and FFR curves.
//!
//! Units are CGS: lengths cm, areas cm², flow cm³/s, pressure dyne/cm²
//! (see [`crate::MMHG`]). Steady flow is assumed, so `Q` is constant along
//! the vessel.
//!
//! Segments are index ranges over centerline points that *share* their
//! boundary points: segment `j+1` starts at the point where segment `j`
//! ends. With viscous losses integrated by the trapezoid rule over each
//! segment's intervals, per-segment drops add up exactly — splitting a
//! healthy segment anywhere leaves the total unchanged, and the kinetic
//! terms telescope through matched boundary areas.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DigitalTwin;

fn hemo_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Hemo(msg.into()))
}

/// Physical constants of the reduced-order model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HemoConstants {
    /// Blood density, g/cm³.
    pub rho: f64,
    /// Dynamic viscosity, poise (dyne·s/cm²).
    pub mu: f64,
    /// Velocity-profile factor; 2 recovers Poiseuille flow.
    pub zeta: f64,
    /// Empirical stenosis expansion coefficient.
    pub kt: f64,
}

impl Default for HemoConstants {
    fn default() -> Self {
        Self {
            rho: 1.05,
            mu: 0.035,
            zeta: 4.31,
            kt: 1.52,
        }
    }
}

impl HemoConstants {
    pub fn validate(&self) -> Result<()> {
        if self.rho > 0.0 && self.mu > 0.0 && self.zeta > 0.0 && self.kt > 0.0 {
            Ok(())
        } else {
            hemo_err("all hemodynamic constants must be strictly positive")
        }
    }

    /// Viscous integrand coefficient for a healthy segment: `2(ζ+2)πμ`.
    pub fn healthy_viscous_coeff(&self) -> f64 {
        2.0 * (self.zeta + 2.0) * std::f64::consts::PI * self.mu
    }

    /// Viscous integrand coefficient inside a lesion: `8πμ`.
    pub fn lesion_viscous_coeff(&self) -> f64 {
        8.0 * std::f64::consts::PI * self.mu
    }
}

/// Segment classification along the centerline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Healthy,
    Lesion,
}

/// One contiguous segment: centerline point indices `start..=end`
/// (inclusive). Adjacent segments share their boundary point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub kind: SegmentKind,
}

/// Ordered partition of the centerline into healthy and lesion segments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentMap {
    pub segments: Vec<Segment>,
}

impl SegmentMap {
    /// One healthy segment spanning the whole vessel.
    pub fn all_healthy(n: usize) -> Self {
        Self {
            segments: vec![Segment {
                start: 0,
                end: n - 1,
                kind: SegmentKind::Healthy,
            }],
        }
    }

    /// Checks coverage of `0..=n-1` with shared boundaries and nonempty
    /// extents.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.segments.is_empty() {
            return hemo_err("segment map is empty");
        }
        if self.segments[0].start != 0 {
            return hemo_err("segment map must start at index 0");
        }
        if self.segments.last().unwrap().end != n - 1 {
            return hemo_err(format!("segment map must end at index {}", n - 1));
        }
        for (i, s) in self.segments.iter().enumerate() {
            if s.start >= s.end {
                return hemo_err(format!("segment {i} has empty extent"));
            }
            if i > 0 && self.segments[i - 1].end != s.start {
                return hemo_err(format!(
                    "segment {i} does not share its start with the previous end"
                ));
            }
        }
        Ok(())
    }

    /// Segment kind of the interval `[i, i+1]`. Intervals are owned by
    /// exactly one segment.
    pub fn kind_of_interval(&self, i: usize) -> SegmentKind {
        for s in &self.segments {
            if i >= s.start && i < s.end {
                return s.kind;
            }
        }
        self.segments.last().unwrap().kind
    }

    /// Restricts the map to the index window `[lo, hi]`, clipping segment
    /// bounds. Zero-extent clips are dropped.
    pub fn clip(&self, lo: usize, hi: usize) -> SegmentMap {
        let mut segments = Vec::new();
        for s in &self.segments {
            let start = s.start.max(lo);
            let end = s.end.min(hi);
            if start < end {
                segments.push(Segment {
                    start,
                    end,
                    kind: s.kind,
                });
            }
        }
        if segments.is_empty() {
            // window falls inside one shared boundary; classify by interval
            let kind = self.kind_of_interval(lo);
            segments.push(Segment {
                start: lo,
                end: hi,
                kind,
            });
        }
        SegmentMap { segments }
    }

    pub fn lesion_count(&self) -> usize {
        self.segments
            .iter()
            .filter(|s| s.kind == SegmentKind::Lesion)
            .count()
    }
}

/// Lesion-mask runs become lesion segments; runs shorter than 3 points are
/// merged into their neighbors. Segment boundaries sit at the mask
/// transition indices, shared between neighbors.
pub fn derive_segments(t: &DigitalTwin) -> SegmentMap {
    segments_from_mask(&t.lesion_mask)
}

/// See [`derive_segments`]; operates on a bare mask.
pub fn segments_from_mask(mask: &[bool]) -> SegmentMap {
    let n = mask.len();
    // run-length encode
    let mut runs: Vec<(bool, usize)> = Vec::new();
    for &m in mask {
        match runs.last_mut() {
            Some((kind, len)) if *kind == m => *len += 1,
            _ => runs.push((m, 1)),
        }
    }
    // merge short runs into neighbors: drop sub-3-point lesions first, then
    // absorb healthy slivers left between lesions
    let join = |runs: Vec<(bool, usize)>| {
        let mut joined: Vec<(bool, usize)> = Vec::with_capacity(runs.len());
        for run in runs {
            match joined.last_mut() {
                Some((kind, len)) if *kind == run.0 => *len += run.1,
                _ => joined.push(run),
            }
        }
        joined
    };
    if runs.len() > 1 {
        for run in runs.iter_mut() {
            if run.0 && run.1 < 3 {
                run.0 = false;
            }
        }
        runs = join(runs);
    }
    if runs.len() > 1 {
        for run in runs.iter_mut() {
            if !run.0 && run.1 < 3 {
                run.0 = true;
            }
        }
        runs = join(runs);
    }

    // convert runs to shared-boundary segments
    let mut segments = Vec::with_capacity(runs.len());
    let mut cursor = 0usize;
    for (i, (lesion, len)) in runs.iter().enumerate() {
        let start = cursor;
        cursor += len;
        let end = if i + 1 == runs.len() { n - 1 } else { cursor };
        if start < end {
            segments.push(Segment {
                start,
                end,
                kind: if *lesion {
                    SegmentKind::Lesion
                } else {
                    SegmentKind::Healthy
                },
            });
        }
    }
    if segments.is_empty() {
        return SegmentMap::all_healthy(n);
    }
    // shared-boundary bookkeeping can leave the first/last segment short;
    // stitch extents to cover 0..=n-1 exactly
    segments[0].start = 0;
    segments.last_mut().unwrap().end = n - 1;
    SegmentMap { segments }
}

/// Pressure drop decomposed by flow dependence: `ΔP(Q) = linear·Q +
/// quadratic·Q²`. Used both to evaluate drops and to differentiate them
/// with respect to flow.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DropParts {
    pub linear: f64,
    pub quadratic: f64,
}

impl DropParts {
    pub fn eval(&self, q: f64) -> f64 {
        self.linear * q + self.quadratic * q * q
    }

    pub fn d_dq(&self, q: f64) -> f64 {
        self.linear + 2.0 * self.quadratic * q
    }
}

/// Trapezoid sum of `coeff/A²` over the segment's intervals.
fn viscous_linear_term(area: &[f64], dx: f64, coeff: f64) -> f64 {
    let inv2: Vec<f64> = area.iter().map(|a| 1.0 / (a * a)).collect();
    let mut sum = 0.0;
    for i in 0..area.len() - 1 {
        sum += 0.5 * (inv2[i] + inv2[i + 1]) * dx;
    }
    coeff * sum
}

fn check_areas(area: &[f64]) -> Result<()> {
    if area.len() < 2 {
        return hemo_err("segment needs at least 2 points");
    }
    if area.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
        return hemo_err("non-positive cross-sectional area");
    }
    Ok(())
}

/// Flow-coefficient decomposition of the healthy-segment drop:
/// viscous `2(ζ+2)πμ/A²` integrated over the segment, plus the kinetic term
/// `(ρ/2)(1/A_out² − 1/A_in²)`.
pub fn healthy_drop_parts(area: &[f64], dx: f64, c: &HemoConstants) -> Result<DropParts> {
    check_areas(area)?;
    let a_in = area[0];
    let a_out = *area.last().unwrap();
    Ok(DropParts {
        linear: viscous_linear_term(area, dx, c.healthy_viscous_coeff()),
        quadratic: 0.5 * c.rho * (1.0 / (a_out * a_out) - 1.0 / (a_in * a_in)),
    })
}

/// Flow-coefficient decomposition of the lesion-segment drop:
/// viscous `8πμ/A²` integrated over the segment, plus the expansion term
/// `K_t·ρ/(2A₀²)·(A₀/A_s − 1)²` with `A₀` the mean of the boundary areas
/// and `A_s` the minimum area in the segment.
pub fn stenosis_drop_parts(area: &[f64], dx: f64, c: &HemoConstants) -> Result<DropParts> {
    check_areas(area)?;
    let a0 = 0.5 * (area[0] + area.last().unwrap());
    let a_s = area.iter().cloned().fold(f64::INFINITY, f64::min);
    let ratio = a0 / a_s - 1.0;
    Ok(DropParts {
        linear: viscous_linear_term(area, dx, c.lesion_viscous_coeff()),
        quadratic: c.kt * c.rho / (2.0 * a0 * a0) * ratio * ratio,
    })
}

/// Healthy-segment pressure drop (dyne/cm²) at flow `q` (cm³/s) with
/// uniform point spacing `dx` (cm).
pub fn healthy_drop(area: &[f64], dx: f64, q: f64, c: &HemoConstants) -> Result<f64> {
    if q < 0.0 {
        return hemo_err("flow must be non-negative");
    }
    Ok(healthy_drop_parts(area, dx, c)?.eval(q))
}

/// Lesion-segment pressure drop (dyne/cm²); see [`stenosis_drop_parts`].
pub fn stenosis_drop(area: &[f64], dx: f64, q: f64, c: &HemoConstants) -> Result<f64> {
    if q < 0.0 {
        return hemo_err("flow must be non-negative");
    }
    Ok(stenosis_drop_parts(area, dx, c)?.eval(q))
}

/// Sum of per-segment drop coefficients over the whole map.
pub fn total_drop_parts(area: &[f64], dx: f64, seg: &SegmentMap, c: &HemoConstants) -> Result<DropParts> {
    seg.validate(area.len())?;
    let mut total = DropParts::default();
    for s in &seg.segments {
        let slice = &area[s.start..=s.end];
        let parts = match s.kind {
            SegmentKind::Healthy => healthy_drop_parts(slice, dx, c)?,
            SegmentKind::Lesion => stenosis_drop_parts(slice, dx, c)?,
        };
        total.linear += parts.linear;
        total.quadratic += parts.quadratic;
    }
    Ok(total)
}

/// Total pressure drop: healthy law over healthy segments plus the stenosis
/// law over lesion segments.
pub fn total_drop_from_areas(
    area: &[f64],
    dx: f64,
    seg: &SegmentMap,
    q: f64,
    c: &HemoConstants,
) -> Result<f64> {
    Ok(total_drop_parts(area, dx, seg, c)?.eval(q))
}

/// [`total_drop_from_areas`] on a twin's section areas.
pub fn total_drop(t: &DigitalTwin, seg: &SegmentMap, q: f64, c: &HemoConstants) -> Result<f64> {
    let (area, dx) = twin_area_grid(t)?;
    total_drop_from_areas(&area, dx, seg, q, c)
}

/// Per-point hemodynamic state along the centerline.
#[derive(Debug, Clone, PartialEq)]
pub struct HemoProfile {
    /// Flow rate (cm³/s), constant in steady state.
    pub q: Vec<f64>,
    /// Pressure (dyne/cm²).
    pub p: Vec<f64>,
    /// Lumen area (cm²).
    pub area: Vec<f64>,
    /// Local pressure over inlet pressure.
    pub ffr: Vec<f64>,
}

/// Extracts the per-point area array and the uniform spacing of a twin.
/// Errors when the centerline is not uniformly sampled. Uniform-arc
/// resampling of a curved polyline leaves chord lengths varying at
/// O((κ·Δs)²), so the gate is 1e-3 relative.
pub fn twin_area_grid(t: &DigitalTwin) -> Result<(Vec<f64>, f64)> {
    if !t.centerline.is_uniformly_spaced(1e-3) {
        return hemo_err("physics requires a uniformly resampled centerline");
    }
    let area = t.section_areas().map_err(|e| Error::Hemo(e.to_string()))?;
    let dx = t.centerline.total_length() / (t.centerline.len() as f64 - 1.0);
    Ok((area, dx))
}

/// Marches pressure from the inlet: each interval loses its trapezoid share
/// of the segment's viscous integrand; healthy kinetic losses are spread as
/// telescoping `1/A²` differences (so smooth tapers stay smooth), while a
/// lesion's expansion loss is concentrated on the interval holding the
/// minimum area. The endpoint drop reproduces [`total_drop_from_areas`].
pub fn pressure_profile_from_areas(
    area: &[f64],
    dx: f64,
    seg: &SegmentMap,
    q: f64,
    p_in: f64,
    c: &HemoConstants,
) -> Result<HemoProfile> {
    check_areas(area)?;
    seg.validate(area.len())?;
    if q < 0.0 {
        return hemo_err("flow must be non-negative");
    }
    if p_in <= 0.0 {
        return hemo_err("inlet pressure must be positive");
    }
    let n = area.len();
    let mut loss_per_interval = vec![0.0f64; n - 1];
    for s in &seg.segments {
        let slice = &area[s.start..=s.end];
        let (coeff, kinetic) = match s.kind {
            SegmentKind::Healthy => (c.healthy_viscous_coeff(), None),
            SegmentKind::Lesion => (
                c.lesion_viscous_coeff(),
                Some(stenosis_drop_parts(slice, dx, c)?.quadratic * q * q),
            ),
        };
        for i in s.start..s.end {
            let visc =
                0.5 * coeff * (1.0 / (area[i] * area[i]) + 1.0 / (area[i + 1] * area[i + 1])) * dx;
            loss_per_interval[i] += visc * q;
            if s.kind == SegmentKind::Healthy {
                loss_per_interval[i] += 0.5
                    * c.rho
                    * (1.0 / (area[i + 1] * area[i + 1]) - 1.0 / (area[i] * area[i]))
                    * q
                    * q;
            }
        }
        if let Some(expansion) = kinetic {
            // interval containing the minimum area
            let m = s.start
                + slice
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0;
            let interval = if m < s.end { m } else { s.end - 1 };
            loss_per_interval[interval] += expansion;
        }
    }

    let mut p = Vec::with_capacity(n);
    p.push(p_in);
    for (i, loss) in loss_per_interval.iter().enumerate() {
        let next = p[i] - loss;
        if next < 0.0 {
            return hemo_err(format!(
                "non-physiological configuration: pressure falls below zero at point {}",
                i + 1
            ));
        }
        p.push(next);
    }
    let ffr = p.iter().map(|pi| pi / p_in).collect();
    Ok(HemoProfile {
        q: vec![q; n],
        p,
        area: area.to_vec(),
        ffr,
    })
}

/// [`pressure_profile_from_areas`] on a twin's section areas.
pub fn pressure_profile(
    t: &DigitalTwin,
    seg: &SegmentMap,
    q: f64,
    p_in: f64,
    c: &HemoConstants,
) -> Result<HemoProfile> {
    let (area, dx) = twin_area_grid(t)?;
    pressure_profile_from_areas(&area, dx, seg, q, p_in, c)
}

/// FFR curve: local pressure over inlet pressure, 1 at the inlet.
pub fn ffr_curve(h: &HemoProfile) -> Result<Vec<f64>> {
    let p0 = h.p[0];
    if p0 <= 0.0 {
        return hemo_err("inlet pressure must be positive for FFR");
    }
    Ok(h.p.iter().map(|p| p / p0).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::phantom;
    use crate::MMHG;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    const L: f64 = 3.0;
    const R: f64 = 0.15;

    fn uniform_area(n: usize, r: f64) -> Vec<f64> {
        vec![PI * r * r; n]
    }

    #[test]
    fn healthy_drop_zero_flow_and_uniform_kinetic() {
        let c = HemoConstants::default();
        let n = 101;
        let area = uniform_area(n, R);
        let dx = L / (n as f64 - 1.0);
        assert_eq!(healthy_drop(&area, dx, 0.0, &c).unwrap(), 0.0);
        let parts = healthy_drop_parts(&area, dx, &c).unwrap();
        assert_eq!(parts.quadratic, 0.0, "uniform tube has no kinetic term");
    }

    #[test]
    fn healthy_drop_matches_closed_form() {
        let c = HemoConstants::default();
        let n = 301;
        let area = uniform_area(n, R);
        let a = PI * R * R;
        let dx = L / (n as f64 - 1.0);
        let expected = 2.0 * (c.zeta + 2.0) * PI * c.mu * L * 1.0 / (a * a);
        let got = healthy_drop(&area, dx, 1.0, &c).unwrap();
        assert!((got - expected).abs() < 1e-9 * expected);
        assert_abs_diff_eq!(got, 833.2, epsilon = 0.1);
        assert_abs_diff_eq!(got / MMHG, 0.625, epsilon = 1e-3);
    }

    #[test]
    fn poiseuille_limit_and_paper_ratio() {
        let mut c = HemoConstants::default();
        c.zeta = 2.0;
        let n = 64;
        let area = uniform_area(n, R);
        let dx = L / (n as f64 - 1.0);
        let q = 1.7;
        let poiseuille = 8.0 * c.mu * L * q / (PI * R.powi(4));
        let got = healthy_drop(&area, dx, q, &c).unwrap();
        assert!((got - poiseuille).abs() < 1e-9 * poiseuille);

        let paper = HemoConstants::default();
        let got431 = healthy_drop(&area, dx, q, &paper).unwrap();
        assert!((got431 / poiseuille - (paper.zeta + 2.0) / 4.0).abs() < 1e-12);
        assert!((got431 / poiseuille - 1.5775).abs() < 1e-12);
    }

    #[test]
    fn stenosis_drop_degeneracies_and_viscous_ratio() {
        let c = HemoConstants::default();
        let n = 51;
        let area = uniform_area(n, R);
        let dx = L / (n as f64 - 1.0);
        // uniform: A_s == A_0, expansion term vanishes
        let parts = stenosis_drop_parts(&area, dx, &c).unwrap();
        assert_eq!(parts.quadratic, 0.0);
        assert_eq!(stenosis_drop(&area, dx, 0.0, &c).unwrap(), 0.0);

        let healthy = healthy_drop_parts(&area, dx, &c).unwrap();
        let ratio = parts.linear / healthy.linear;
        assert!((ratio - 8.0 / (2.0 * (c.zeta + 2.0))).abs() < 1e-12);
        assert_abs_diff_eq!(ratio, 0.634, epsilon = 1e-3);
    }

    #[test]
    fn drops_reject_bad_areas() {
        let c = HemoConstants::default();
        let mut area = uniform_area(10, R);
        area[4] = -0.01;
        assert!(healthy_drop(&area, 0.1, 1.0, &c).is_err());
        assert!(stenosis_drop(&area, 0.1, 1.0, &c).is_err());
    }

    #[test]
    fn total_drop_split_invariance() {
        let c = HemoConstants::default();
        let n = 200;
        // tapered areas so both viscous and kinetic parts are nontrivial
        let area: Vec<f64> = (0..n)
            .map(|i| {
                let f = i as f64 / (n as f64 - 1.0);
                let r = 0.2 - 0.06 * f;
                PI * r * r
            })
            .collect();
        let dx = L / (n as f64 - 1.0);
        let q = 1.3;
        let whole = SegmentMap::all_healthy(n);
        let full = total_drop_from_areas(&area, dx, &whole, q, &c).unwrap();
        for split in [1, 57, 100, 198] {
            let seg = SegmentMap {
                segments: vec![
                    Segment {
                        start: 0,
                        end: split,
                        kind: SegmentKind::Healthy,
                    },
                    Segment {
                        start: split,
                        end: n - 1,
                        kind: SegmentKind::Healthy,
                    },
                ],
            };
            let sum = total_drop_from_areas(&area, dx, &seg, q, &c).unwrap();
            assert!(
                (sum - full).abs() < 1e-9 * full.abs().max(1.0),
                "split at {split}: {sum} vs {full}"
            );
        }
    }

    #[test]
    fn total_drop_linearity_and_quadratic_scaling() {
        let c = HemoConstants::default();
        let n = 120;
        let area: Vec<f64> = (0..n)
            .map(|i| {
                let f = i as f64 / (n as f64 - 1.0);
                let dip = 0.4 * (-0.5 * ((f - 0.5) / 0.08).powi(2)).exp();
                let r = 0.18 * (1.0 - dip);
                PI * r * r
            })
            .collect();
        let dx = L / (n as f64 - 1.0);
        let mask: Vec<bool> = area.iter().map(|a| *a < 0.8 * PI * 0.18 * 0.18).collect();
        let seg = segments_from_mask(&mask);
        let parts = total_drop_parts(&area, dx, &seg, &c).unwrap();
        // viscous linear in Q, expansion quadratic in Q
        let q = 0.9;
        assert!((parts.linear * 2.0 * q - parts.linear * q * 2.0).abs() < 1e-12);
        let visc1 = parts.linear * q;
        let visc2 = parts.linear * (2.0 * q);
        assert!((visc2 - 2.0 * visc1).abs() <= 1e-12 * visc1.abs());
        let kin1 = parts.quadratic * q * q;
        let kin2 = parts.quadratic * (2.0 * q) * (2.0 * q);
        assert!((kin2 - 4.0 * kin1).abs() <= 1e-12 * kin1.abs());
    }

    #[test]
    fn derive_segments_examples() {
        // all-false mask: one healthy segment
        let m = segments_from_mask(&vec![false; 50]);
        assert_eq!(
            m.segments,
            vec![Segment {
                start: 0,
                end: 49,
                kind: SegmentKind::Healthy
            }]
        );

        // lesion on [100, 200): healthy / lesion / healthy at exact flips
        let mut mask = vec![false; 300];
        for m in mask.iter_mut().take(200).skip(100) {
            *m = true;
        }
        let m = segments_from_mask(&mask);
        assert_eq!(
            m.segments,
            vec![
                Segment {
                    start: 0,
                    end: 100,
                    kind: SegmentKind::Healthy
                },
                Segment {
                    start: 100,
                    end: 200,
                    kind: SegmentKind::Lesion
                },
                Segment {
                    start: 200,
                    end: 299,
                    kind: SegmentKind::Healthy
                },
            ]
        );

        // alternating run-length-1 mask merges to a single healthy segment
        let alt: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
        let m = segments_from_mask(&alt);
        assert_eq!(
            m.segments,
            vec![Segment {
                start: 0,
                end: 39,
                kind: SegmentKind::Healthy
            }]
        );
        m.validate(40).unwrap();
    }

    #[test]
    fn pressure_profile_zero_flow_is_constant() {
        let t = phantom::stenotic_tube(101, L, R, 0.4, 0.5, 0.08, 16).unwrap();
        let seg = derive_segments(&t);
        let prof = pressure_profile(&t, &seg, 0.0, 100.0 * MMHG, &HemoConstants::default()).unwrap();
        assert!(prof.p.iter().all(|p| (*p - 100.0 * MMHG).abs() < 1e-9));
        assert!(prof.ffr.iter().all(|f| (*f - 1.0).abs() < 1e-12));
    }

    #[test]
    fn pressure_profile_linear_on_uniform_tube() {
        let n = 101;
        let area = uniform_area(n, R);
        let dx = L / (n as f64 - 1.0);
        let seg = SegmentMap::all_healthy(n);
        let prof =
            pressure_profile_from_areas(&area, dx, &seg, 1.0, 100.0 * MMHG, &HemoConstants::default())
                .unwrap();
        let slope = prof.p[1] - prof.p[0];
        for i in 1..n {
            let expect = prof.p[0] + slope * i as f64;
            assert!((prof.p[i] - expect).abs() < 1e-9 * prof.p[0]);
        }
    }

    #[test]
    fn pressure_profile_endpoint_matches_total_drop() {
        let c = HemoConstants::default();
        let t = phantom::stenotic_tube(201, 4.0, 0.17, 0.45, 0.45, 0.07, 16).unwrap();
        let seg = derive_segments(&t);
        let q = 1.1;
        let p_in = 100.0 * MMHG;
        let prof = pressure_profile(&t, &seg, q, p_in, &c).unwrap();
        let drop = total_drop(&t, &seg, q, &c).unwrap();
        let endpoint = p_in - prof.p.last().unwrap();
        assert!((endpoint - drop).abs() < 1e-6 * drop.abs().max(1.0));
    }

    #[test]
    fn pressure_profile_monotone_on_non_expanding_tubes() {
        // Expanding healthy regions recover pressure through the kinetic
        // term (its 1/A² difference turns negative), so strict per-step
        // monotonicity is a property of non-expanding geometry only.
        let c = HemoConstants::default();
        for t in [
            phantom::tapered_tube(151, L, 0.2, 0.12, 16).unwrap(),
            phantom::straight_tube(151, L, R, 16).unwrap(),
        ] {
            let seg = derive_segments(&t);
            let prof = pressure_profile(&t, &seg, 1.4, 100.0 * MMHG, &c).unwrap();
            for w in prof.p.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
        }
        // through a stenosis the drop still dominates end to end
        let t = phantom::stenotic_tube(151, L, R, 0.5, 0.5, 0.08, 16).unwrap();
        let seg = derive_segments(&t);
        let prof = pressure_profile(&t, &seg, 1.4, 100.0 * MMHG, &c).unwrap();
        assert!(*prof.p.last().unwrap() < prof.p[0]);
    }

    #[test]
    fn pressure_profile_flags_negative_pressure() {
        let n = 101;
        let area = uniform_area(n, 0.05); // narrow tube, big drop
        let dx = 10.0 / (n as f64 - 1.0);
        let seg = SegmentMap::all_healthy(n);
        let err = pressure_profile_from_areas(&area, dx, &seg, 5.0, 0.5 * MMHG, &HemoConstants::default());
        assert!(err.is_err());
    }

    #[test]
    fn ffr_curve_basics() {
        let h = HemoProfile {
            q: vec![1.0; 3],
            p: vec![2.0 * MMHG, 1.5 * MMHG, MMHG],
            area: vec![1.0; 3],
            ffr: vec![1.0, 0.75, 0.5],
        };
        let f = ffr_curve(&h).unwrap();
        assert_eq!(f, vec![1.0, 0.75, 0.5]);

        let bad = HemoProfile {
            p: vec![0.0, 1.0],
            q: vec![0.0; 2],
            area: vec![1.0; 2],
            ffr: vec![],
        };
        assert!(ffr_curve(&bad).is_err());
    }

    /// Severe stenosis: A_s/A₀ = 0.25, Q = 2 cm³/s, 3 cm vessel, 100 mmHg
    /// inlet. The lesion mask is chosen so the lesion's boundary areas sit at
    /// the nominal radius, making A₀ = πR² and A_s = A₀/4 exact.
    #[test]
    fn ffr_drops_for_severe_stenosis() {
        let c = HemoConstants::default();
        let n = 301;
        let k = 64;
        let pts: Vec<crate::geometry::Vec3> = (0..n)
            .map(|i| crate::geometry::Vec3::new(0.0, 0.0, L * i as f64 / (n as f64 - 1.0)))
            .collect();
        let cl = crate::geometry::Centerline::new(pts).unwrap();
        let mut radii = Vec::with_capacity(n);
        let mut mask = Vec::with_capacity(n);
        for i in 0..n {
            let f = i as f64 / (n as f64 - 1.0);
            // cosine bump to half radius on [0.35, 0.65]
            let dip = if (0.35..=0.65).contains(&f) {
                let w = (f - 0.35) / 0.30;
                0.5 * 0.5 * (1.0 - (2.0 * PI * w).cos())
            } else {
                0.0
            };
            radii.push(R * (1.0 - dip));
            mask.push((0.33..=0.67).contains(&f));
        }
        let mut twin = crate::augment::sweep(&cl, &crate::geometry::RadiusProfile(radii), k).unwrap();
        twin.lesion_mask = mask;
        let seg = derive_segments(&twin);
        assert_eq!(seg.lesion_count(), 1);

        let p_in = 100.0 * MMHG;
        let q = 2.0;
        let prof = pressure_profile(&twin, &seg, q, p_in, &c).unwrap();
        let ffr = ffr_curve(&prof).unwrap();
        let ffr_out = *ffr.last().unwrap();
        assert!(ffr_out < 0.95, "stenotic outlet FFR {ffr_out}");

        let healthy = phantom::straight_tube(n, L, R, k).unwrap();
        let prof_h =
            pressure_profile(&healthy, &SegmentMap::all_healthy(n), q, p_in, &c).unwrap();
        let ffr_h = *ffr_curve(&prof_h).unwrap().last().unwrap();
        assert!(ffr_out < ffr_h);
    }

    #[test]
    fn grid_refinement_converges() {
        let c = HemoConstants::default();
        let drop_at = |n: usize| {
            let area: Vec<f64> = (0..n)
                .map(|i| {
                    let f = i as f64 / (n as f64 - 1.0);
                    let r = 0.2 - 0.05 * f + 0.01 * (2.0 * PI * f).sin();
                    PI * r * r
                })
                .collect();
            let dx = L / (n as f64 - 1.0);
            total_drop_from_areas(&area, dx, &SegmentMap::all_healthy(n), 1.0, &c).unwrap()
        };
        let coarse = drop_at(100);
        let mid = drop_at(200);
        let fine = drop_at(400);
        // successive refinements shrink the change (smooth integrand)
        assert!((fine - mid).abs() < (mid - coarse).abs());
    }
}
