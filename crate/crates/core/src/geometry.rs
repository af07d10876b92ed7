//! Vessel geometry: centerlines, orthonormal frames, cross-sections, and the
//! assembled digital twin.
//!
//! All lengths are in cm (CGS). A [`Centerline`] owns its cumulative
//! arc-length table; frames are built with rotation-minimizing parallel
//! transport so the swept boundary does not twist across inflections.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentParams;
use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Tolerance for unit-norm / orthogonality checks on frames.
pub const FRAME_TOL: f64 = 1e-9;
/// Tolerance (cm) for boundary points lying in their section plane.
pub const PLANE_TOL: f64 = 1e-6;

fn geom_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Geometry(msg.into()))
}

// ---------------------------------------------------------------------------
// Centerline
// ---------------------------------------------------------------------------

/// An ordered 3D polyline with a cumulative arc-length table.
#[derive(Debug, Clone, PartialEq)]
pub struct Centerline {
    points: Vec<Vec3>,
    arc_length: Vec<f64>,
}

impl Centerline {
    /// Builds a centerline, computing arc lengths. Requires at least two
    /// points, finite coordinates, and no repeated consecutive points.
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.len() < 2 {
            return geom_err("centerline needs at least 2 points");
        }
        for (i, p) in points.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return geom_err(format!("non-finite coordinate at point {i}"));
            }
        }
        let mut arc_length = Vec::with_capacity(points.len());
        arc_length.push(0.0);
        for i in 1..points.len() {
            let d = (points[i] - points[i - 1]).norm();
            if d <= 0.0 {
                return geom_err(format!("repeated consecutive point at index {i}"));
            }
            arc_length.push(arc_length[i - 1] + d);
        }
        Ok(Self { points, arc_length })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn arc_length(&self) -> &[f64] {
        &self.arc_length
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        *self.arc_length.last().unwrap()
    }

    /// Uniform point spacing check: every consecutive arc step within
    /// `rel_tol` (relative to the mean step) of the mean step.
    pub fn is_uniformly_spaced(&self, rel_tol: f64) -> bool {
        let n = self.len();
        let mean = self.total_length() / (n as f64 - 1.0);
        (1..n).all(|i| {
            let step = self.arc_length[i] - self.arc_length[i - 1];
            (step - mean).abs() <= rel_tol * mean
        })
    }

    /// Point at arc-length position `s` by linear interpolation along the
    /// polyline. `s` is clamped to `[0, total_length]`.
    pub fn point_at(&self, s: f64) -> Vec3 {
        let s = s.clamp(0.0, self.total_length());
        // binary search for the segment containing s
        let idx = match self
            .arc_length
            .binary_search_by(|a| a.partial_cmp(&s).unwrap())
        {
            Ok(i) => return self.points[i],
            Err(i) => i - 1,
        };
        let idx = idx.min(self.len() - 2);
        let s0 = self.arc_length[idx];
        let s1 = self.arc_length[idx + 1];
        let t = (s - s0) / (s1 - s0);
        self.points[idx] * (1.0 - t) + self.points[idx + 1] * t
    }
}

/// Resamples to `n` points uniformly spaced in arc length (linear
/// interpolation between input points). Endpoints are preserved exactly.
pub fn resample(c: &Centerline, n: usize) -> Result<Centerline> {
    if n < 2 {
        return geom_err("resample count must be >= 2");
    }
    let total = c.total_length();
    if total <= 0.0 {
        return geom_err("degenerate centerline: total length is zero");
    }
    let mut points = Vec::with_capacity(n);
    points.push(c.points[0]);
    for i in 1..n - 1 {
        let s = total * i as f64 / (n as f64 - 1.0);
        points.push(c.point_at(s));
    }
    points.push(*c.points.last().unwrap());
    Centerline::new(points)
}

/// [`resample`] iterated to a fixed point: one pass places points uniformly
/// in the *input* polyline's arc length, which leaves the output's own chord
/// lengths varying at O((κ·Δs)²) on curved input. Re-resampling the output
/// contracts that variation until consecutive chords agree to `rel_tol`.
pub fn resample_uniform(c: &Centerline, n: usize, rel_tol: f64) -> Result<Centerline> {
    let mut out = resample(c, n)?;
    for _ in 0..16 {
        if out.is_uniformly_spaced(rel_tol) {
            break;
        }
        out = resample(&out, n)?;
    }
    Ok(out)
}

/// Resamples a per-point scalar profile (e.g. radii) from `src`'s arc-length
/// parametrization onto `n` uniform positions of the same curve.
pub fn resample_profile(src_arc: &[f64], values: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(src_arc.len(), values.len());
    let total = *src_arc.last().unwrap();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let s = total * i as f64 / (n as f64 - 1.0);
        let j = match src_arc.binary_search_by(|a| a.partial_cmp(&s).unwrap()) {
            Ok(j) => {
                out.push(values[j]);
                continue;
            }
            Err(j) => (j - 1).min(src_arc.len() - 2),
        };
        let t = (s - src_arc[j]) / (src_arc[j + 1] - src_arc[j]);
        out.push(values[j] * (1.0 - t) + values[j + 1] * t);
    }
    out
}

/// Nearest-neighbor resample of a boolean per-point mask.
pub fn resample_mask(src_arc: &[f64], mask: &[bool], n: usize) -> Vec<bool> {
    assert_eq!(src_arc.len(), mask.len());
    let total = *src_arc.last().unwrap();
    (0..n)
        .map(|i| {
            let s = total * i as f64 / (n as f64 - 1.0);
            let j = match src_arc.binary_search_by(|a| a.partial_cmp(&s).unwrap()) {
                Ok(j) => j,
                Err(j) => {
                    let j = j.clamp(1, src_arc.len() - 1);
                    // pick the nearer of the straddling points
                    if (s - src_arc[j - 1]) <= (src_arc[j] - s) {
                        j - 1
                    } else {
                        j
                    }
                }
            };
            mask[j]
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Frames
// ---------------------------------------------------------------------------

/// Orthonormal frame (tangent, normal, binormal) at a centerline point,
/// with `binormal = tangent × normal`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub tangent: Vec3,
    pub normal: Vec3,
    pub binormal: Vec3,
}

impl Frame {
    /// Checks unit norms, pairwise orthogonality, and the cross-product
    /// relation, all within [`FRAME_TOL`].
    pub fn is_orthonormal(&self) -> bool {
        let Frame {
            tangent: t,
            normal: n,
            binormal: u,
        } = self;
        (t.norm() - 1.0).abs() <= FRAME_TOL
            && (n.norm() - 1.0).abs() <= FRAME_TOL
            && (u.norm() - 1.0).abs() <= FRAME_TOL
            && t.dot(n).abs() <= FRAME_TOL
            && t.dot(u).abs() <= FRAME_TOL
            && n.dot(u).abs() <= FRAME_TOL
            && (t.cross(n) - u).norm() <= FRAME_TOL
    }
}

/// Unit vector orthogonal to `t`, seeded from the coordinate axis least
/// aligned with `t`. Deterministic.
fn seed_normal(t: &Vec3) -> Vec3 {
    let ax = [Vec3::x(), Vec3::y(), Vec3::z()];
    let e = ax
        .iter()
        .min_by(|a, b| t.dot(a).abs().partial_cmp(&t.dot(b).abs()).unwrap())
        .unwrap();
    (e - t * t.dot(e)).normalize()
}

/// Frames along a centerline: tangents by central differences (one-sided at
/// the ends), normals by rotation-minimizing parallel transport (double
/// reflection), binormal as `t × n`.
pub fn compute_frames(c: &Centerline) -> Result<Vec<Frame>> {
    let pts = c.points();
    let n = pts.len();
    let mut tangents = Vec::with_capacity(n);
    for i in 0..n {
        let d = if i == 0 {
            pts[1] - pts[0]
        } else if i == n - 1 {
            pts[n - 1] - pts[n - 2]
        } else {
            pts[i + 1] - pts[i - 1]
        };
        let norm = d.norm();
        if norm < 1e-12 {
            return geom_err(format!("zero-length tangent at point {i}"));
        }
        tangents.push(d / norm);
    }

    let mut frames = Vec::with_capacity(n);
    let mut normal = seed_normal(&tangents[0]);
    frames.push(Frame {
        tangent: tangents[0],
        normal,
        binormal: tangents[0].cross(&normal),
    });
    for i in 0..n - 1 {
        // double-reflection transport of the normal from point i to i+1
        let v1 = pts[i + 1] - pts[i];
        let c1 = v1.dot(&v1);
        let r_l = normal - v1 * (2.0 * v1.dot(&normal) / c1);
        let t_l = tangents[i] - v1 * (2.0 * v1.dot(&tangents[i]) / c1);
        let v2 = tangents[i + 1] - t_l;
        let c2 = v2.dot(&v2);
        let mut next = if c2 < 1e-24 {
            r_l
        } else {
            r_l - v2 * (2.0 * v2.dot(&r_l) / c2)
        };
        // re-orthogonalize against accumulated floating-point drift
        next = (next - tangents[i + 1] * next.dot(&tangents[i + 1])).normalize();
        normal = next;
        frames.push(Frame {
            tangent: tangents[i + 1],
            normal,
            binormal: tangents[i + 1].cross(&normal),
        });
    }
    Ok(frames)
}

// ---------------------------------------------------------------------------
// Cross-sections
// ---------------------------------------------------------------------------

/// Planar lumen contour at a centerline point: `boundary` holds K ordered 3D
/// points in the plane orthogonal to `frame.tangent` through `center`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSection {
    pub center: Vec3,
    pub frame: Frame,
    pub boundary: Vec<Vec3>,
}

impl CrossSection {
    /// In-plane 2D coordinates of the boundary in the (normal, binormal) basis.
    pub fn boundary_2d(&self) -> Vec<(f64, f64)> {
        self.boundary
            .iter()
            .map(|q| {
                let d = q - self.center;
                (d.dot(&self.frame.normal), d.dot(&self.frame.binormal))
            })
            .collect()
    }

    /// Max out-of-plane distance of boundary points (cm).
    pub fn max_plane_deviation(&self) -> f64 {
        self.boundary
            .iter()
            .map(|q| (q - self.center).dot(&self.frame.tangent).abs())
            .fold(0.0, f64::max)
    }

    /// True when consecutive boundary points wind monotonically (all signed
    /// angular steps share one sign).
    pub fn is_angularly_monotone(&self) -> bool {
        let xy = self.boundary_2d();
        let k = xy.len();
        if k < 3 {
            return false;
        }
        let angles: Vec<f64> = xy.iter().map(|(x, y)| y.atan2(*x)).collect();
        let mut sign = 0.0f64;
        for j in 0..k {
            let mut step = angles[(j + 1) % k] - angles[j];
            while step <= -std::f64::consts::PI {
                step += 2.0 * std::f64::consts::PI;
            }
            while step > std::f64::consts::PI {
                step -= 2.0 * std::f64::consts::PI;
            }
            if step == 0.0 {
                return false;
            }
            if sign == 0.0 {
                sign = step.signum();
            } else if step.signum() != sign {
                return false;
            }
        }
        true
    }
}

/// Planar polygon area (cm²) of the boundary projected onto the section
/// plane, by the shoelace formula. Errors when the projected polygon
/// self-intersects.
pub fn section_area(s: &CrossSection) -> Result<f64> {
    let xy = s.boundary_2d();
    let k = xy.len();
    if k < 3 {
        return geom_err("cross-section needs at least 3 boundary points");
    }
    if polygon_self_intersects(&xy) {
        return geom_err("projected section boundary self-intersects");
    }
    let mut twice = 0.0;
    for j in 0..k {
        let (x0, y0) = xy[j];
        let (x1, y1) = xy[(j + 1) % k];
        twice += x0 * y1 - x1 * y0;
    }
    Ok(twice.abs() * 0.5)
}

/// Segment-pair intersection scan over non-adjacent polygon edges.
fn polygon_self_intersects(xy: &[(f64, f64)]) -> bool {
    let k = xy.len();
    let seg = |j: usize| (xy[j], xy[(j + 1) % k]);
    for a in 0..k {
        for b in a + 1..k {
            // skip adjacent edges (shared vertex)
            if b == a + 1 || (a == 0 && b == k - 1) {
                continue;
            }
            let (p1, p2) = seg(a);
            let (p3, p4) = seg(b);
            if segments_intersect(p1, p2, p3, p4) {
                return true;
            }
        }
    }
    false
}

fn segments_intersect(
    p1: (f64, f64),
    p2: (f64, f64),
    p3: (f64, f64),
    p4: (f64, f64),
) -> bool {
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let d1 = cross(p3, p4, p1);
    let d2 = cross(p3, p4, p2);
    let d3 = cross(p1, p2, p3);
    let d4 = cross(p1, p2, p4);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

// ---------------------------------------------------------------------------
// Digital twin
// ---------------------------------------------------------------------------

/// Per-point lumen radius (cm), one entry per centerline point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusProfile(pub Vec<f64>);

impl RadiusProfile {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Provenance of a twin: where it came from and how it was made.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TwinMeta {
    pub id: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub source_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augment: Option<AugmentParams>,
    /// Cumulative scale factor applied by [`normalize_scale`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization_scale: Option<f64>,
}

/// A single-branch coronary artery model: centerline, per-point lumen radius,
/// swept cross-section boundaries, and a per-point lesion mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitalTwin {
    pub centerline: Centerline,
    pub radii: RadiusProfile,
    pub sections: Vec<CrossSection>,
    pub lesion_mask: Vec<bool>,
    pub meta: TwinMeta,
}

impl DigitalTwin {
    pub fn n_points(&self) -> usize {
        self.centerline.len()
    }

    /// Boundary points per section (K). Panics on a twin with no sections.
    pub fn section_k(&self) -> usize {
        self.sections[0].boundary.len()
    }

    /// Per-section lumen area (cm²).
    pub fn section_areas(&self) -> Result<Vec<f64>> {
        self.sections.iter().map(section_area).collect()
    }

    /// Checks every structural invariant; returns the list of violations
    /// (empty when the twin is valid).
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let n = self.centerline.len();
        if self.radii.len() != n {
            errs.push(format!("radii length {} != centerline {}", self.radii.len(), n));
        }
        if self.sections.len() != n {
            errs.push(format!(
                "sections length {} != centerline {}",
                self.sections.len(),
                n
            ));
        }
        if self.lesion_mask.len() != n {
            errs.push(format!(
                "lesion_mask length {} != centerline {}",
                self.lesion_mask.len(),
                n
            ));
        }
        for (i, r) in self.radii.values().iter().enumerate() {
            if !(r.is_finite() && *r > 0.0) {
                errs.push(format!("radius at point {i} not finite-positive: {r}"));
                break;
            }
        }
        // arc-length table consistency
        let arc = self.centerline.arc_length();
        if arc[0] != 0.0 {
            errs.push("arc_length[0] != 0".into());
        }
        for i in 1..n {
            let d = (self.centerline.points()[i] - self.centerline.points()[i - 1]).norm();
            let step = arc[i] - arc[i - 1];
            if step <= 0.0 || (step - d).abs() > 1e-9 * d.max(1e-300) {
                errs.push(format!("arc_length inconsistent at index {i}"));
                break;
            }
        }
        if !self.sections.is_empty() {
            let k = self.sections[0].boundary.len();
            for (i, s) in self.sections.iter().enumerate() {
                if s.boundary.len() != k {
                    errs.push(format!("section {i} has K={} != {}", s.boundary.len(), k));
                    break;
                }
            }
            for (i, s) in self.sections.iter().enumerate() {
                if !s.frame.is_orthonormal() {
                    errs.push(format!("section {i} frame not orthonormal"));
                    break;
                }
            }
            for (i, s) in self.sections.iter().enumerate() {
                if s.max_plane_deviation() > PLANE_TOL {
                    errs.push(format!(
                        "section {i} boundary out of plane by {:.3e} cm",
                        s.max_plane_deviation()
                    ));
                    break;
                }
            }
            for (i, s) in self.sections.iter().enumerate() {
                if !s.is_angularly_monotone() {
                    errs.push(format!("section {i} boundary not angularly ordered"));
                    break;
                }
            }
        }
        errs
    }

    /// Validation for synthetically swept twins: additionally checks every
    /// boundary point sits at distance `r_i` from its section center.
    pub fn validate_synthetic(&self) -> Vec<String> {
        let mut errs = self.validate();
        for (i, (s, r)) in self.sections.iter().zip(self.radii.values()).enumerate() {
            for q in &s.boundary {
                if ((q - s.center).norm() - r).abs() > PLANE_TOL {
                    errs.push(format!("section {i} boundary point not at radius {r}"));
                    return errs;
                }
            }
        }
        errs
    }
}

/// Translates the twin so the first centerline point is the origin and
/// uniformly rescales so the total arc length is 1; radii and boundaries
/// scale by the same factor, recorded (cumulatively) in `meta`.
pub fn normalize_scale(t: &DigitalTwin) -> DigitalTwin {
    let origin = t.centerline.points()[0];
    let scale = 1.0 / t.centerline.total_length();
    let map = |p: &Vec3| (p - origin) * scale;

    let centerline = Centerline::new(t.centerline.points().iter().map(map).collect())
        .expect("normalization preserves centerline validity");
    let radii = RadiusProfile(t.radii.values().iter().map(|r| r * scale).collect());
    let sections = t
        .sections
        .iter()
        .map(|s| CrossSection {
            center: map(&s.center),
            frame: s.frame,
            boundary: s.boundary.iter().map(map).collect(),
        })
        .collect();
    let mut meta = t.meta.clone();
    meta.normalization_scale = Some(meta.normalization_scale.unwrap_or(1.0) * scale);
    DigitalTwin {
        centerline,
        radii,
        sections,
        lesion_mask: t.lesion_mask.clone(),
        meta,
    }
}

// ---------------------------------------------------------------------------
// Phantoms: analytic test vessels
// ---------------------------------------------------------------------------

/// Analytic vessel phantoms, useful as augmentation donors and for
/// calibrating the physics against closed forms.
pub mod phantom {
    use super::*;
    use crate::augment::sweep;

    /// Straight tube along +z with constant radius.
    pub fn straight_tube(n: usize, length: f64, radius: f64, k: usize) -> Result<DigitalTwin> {
        let pts = (0..n)
            .map(|i| Vec3::new(0.0, 0.0, length * i as f64 / (n as f64 - 1.0)))
            .collect();
        let c = Centerline::new(pts)?;
        let mut t = sweep(&c, &RadiusProfile(vec![radius; n]), k)?;
        t.lesion_mask = vec![false; n];
        t.meta.id = "phantom-straight".into();
        Ok(t)
    }

    /// Straight tube whose radius tapers linearly from `r_in` to `r_out`.
    pub fn tapered_tube(
        n: usize,
        length: f64,
        r_in: f64,
        r_out: f64,
        k: usize,
    ) -> Result<DigitalTwin> {
        let pts = (0..n)
            .map(|i| Vec3::new(0.0, 0.0, length * i as f64 / (n as f64 - 1.0)))
            .collect();
        let c = Centerline::new(pts)?;
        let radii = (0..n)
            .map(|i| {
                let f = i as f64 / (n as f64 - 1.0);
                r_in * (1.0 - f) + r_out * f
            })
            .collect();
        let mut t = sweep(&c, &RadiusProfile(radii), k)?;
        t.lesion_mask = vec![false; n];
        t.meta.id = "phantom-tapered".into();
        Ok(t)
    }

    /// Straight tube with a smooth Gaussian narrowing. `severity` is the
    /// fractional radius reduction at the throat (diameter stenosis);
    /// `center_frac`/`width_frac` place and size the lesion along the tube.
    /// The lesion mask flags points where the radius dips more than half of
    /// `severity`.
    pub fn stenotic_tube(
        n: usize,
        length: f64,
        radius: f64,
        severity: f64,
        center_frac: f64,
        width_frac: f64,
        k: usize,
    ) -> Result<DigitalTwin> {
        if !(0.0..1.0).contains(&severity) {
            return geom_err("stenosis severity must be in [0, 1)");
        }
        let pts = (0..n)
            .map(|i| Vec3::new(0.0, 0.0, length * i as f64 / (n as f64 - 1.0)))
            .collect();
        let c = Centerline::new(pts)?;
        let mut radii = Vec::with_capacity(n);
        let mut mask = Vec::with_capacity(n);
        for i in 0..n {
            let f = i as f64 / (n as f64 - 1.0);
            let z = (f - center_frac) / width_frac;
            let dip = severity * (-0.5 * z * z).exp();
            radii.push(radius * (1.0 - dip));
            mask.push(dip > 0.5 * severity);
        }
        let mut t = sweep(&c, &RadiusProfile(radii), k)?;
        t.lesion_mask = mask;
        t.meta.id = "phantom-stenotic".into();
        Ok(t)
    }

    /// Gently helical tube: a curved donor geometry for augmentation tests.
    pub fn helical_tube(
        n: usize,
        length: f64,
        coil_radius: f64,
        turns: f64,
        radius: f64,
        k: usize,
    ) -> Result<DigitalTwin> {
        let pts = (0..n)
            .map(|i| {
                let f = i as f64 / (n as f64 - 1.0);
                let a = 2.0 * std::f64::consts::PI * turns * f;
                Vec3::new(coil_radius * a.cos(), coil_radius * a.sin(), length * f)
            })
            .collect();
        let c = Centerline::new(pts)?;
        let mut t = sweep(&c, &RadiusProfile(vec![radius; n]), k)?;
        t.lesion_mask = vec![false; n];
        t.meta.id = "phantom-helical".into();
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn line_z(n: usize, length: f64) -> Centerline {
        Centerline::new(
            (0..n)
                .map(|i| Vec3::new(0.0, 0.0, length * i as f64 / (n as f64 - 1.0)))
                .collect(),
        )
        .unwrap()
    }

    fn quarter_circle(n: usize) -> Centerline {
        Centerline::new(
            (0..n)
                .map(|i| {
                    let a = std::f64::consts::FRAC_PI_2 * i as f64 / (n as f64 - 1.0);
                    Vec3::new(a.cos(), a.sin(), 0.0)
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn centerline_rejects_degenerate_input() {
        assert!(Centerline::new(vec![Vec3::zeros()]).is_err());
        assert!(
            Centerline::new(vec![Vec3::zeros(), Vec3::zeros(), Vec3::new(0.0, 0.0, 1.0)])
                .is_err()
        );
        assert!(Centerline::new(vec![Vec3::zeros(), Vec3::new(f64::NAN, 0.0, 0.0)]).is_err());
    }

    #[test]
    fn resample_splits_segment_uniformly() {
        let c = Centerline::new(vec![Vec3::zeros(), Vec3::new(0.0, 0.0, 1.0)]).unwrap();
        let r = resample(&c, 3).unwrap();
        let zs: Vec<f64> = r.points().iter().map(|p| p.z).collect();
        assert_abs_diff_eq!(zs[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(zs[1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(zs[2], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn resample_is_idempotent_on_uniform_input() {
        let c = line_z(17, 4.2);
        let r = resample(&c, 17).unwrap();
        for (a, b) in c.points().iter().zip(r.points()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn resample_preserves_quarter_circle_arc_length() {
        let c = quarter_circle(100);
        let r = resample(&c, 50).unwrap();
        assert!((r.total_length() - std::f64::consts::FRAC_PI_2).abs() < 1e-3);
    }

    #[test]
    fn resample_arc_length_converges_on_refinement() {
        let c = quarter_circle(100);
        let coarse = resample(&c, 25).unwrap().total_length();
        let fine = resample(&c, 50).unwrap().total_length();
        let target = c.total_length();
        assert!((fine - target).abs() <= (coarse - target).abs() + 1e-12);
    }

    #[test]
    fn frames_on_straight_line_are_constant() {
        let c = line_z(20, 3.0);
        let frames = compute_frames(&c).unwrap();
        for f in &frames {
            assert!((f.tangent - Vec3::z()).norm() < 1e-12);
            assert!((f.normal - frames[0].normal).norm() < 1e-12);
            assert!(f.is_orthonormal());
        }
    }

    #[test]
    fn frames_on_circle_have_radial_orthogonal_tangents() {
        let n = 200;
        let c = Centerline::new(
            (0..n)
                .map(|i| {
                    let a = 1.5 * std::f64::consts::PI * i as f64 / (n as f64 - 1.0);
                    Vec3::new(a.cos(), a.sin(), 0.0)
                })
                .collect(),
        )
        .unwrap();
        let frames = compute_frames(&c).unwrap();
        for (p, f) in c.points().iter().zip(&frames).skip(1).take(n - 2) {
            let radial = Vec3::new(p.x, p.y, 0.0).normalize();
            assert!(f.tangent.dot(&radial).abs() < 1e-6);
            assert!(f.is_orthonormal());
        }
    }

    #[test]
    fn frames_are_orthonormal_on_helix() {
        let t = phantom::helical_tube(150, 6.0, 0.8, 2.0, 0.15, 8).unwrap();
        let frames = compute_frames(&t.centerline).unwrap();
        assert!(frames.iter().all(Frame::is_orthonormal));
    }

    fn regular_polygon_section(k: usize, radius: f64) -> CrossSection {
        let frame = Frame {
            tangent: Vec3::z(),
            normal: Vec3::x(),
            binormal: Vec3::y(),
        };
        let boundary = (0..k)
            .map(|j| {
                let a = 2.0 * std::f64::consts::PI * j as f64 / k as f64;
                Vec3::new(radius * a.cos(), radius * a.sin(), 0.0)
            })
            .collect();
        CrossSection {
            center: Vec3::zeros(),
            frame,
            boundary,
        }
    }

    #[test]
    fn section_area_matches_regular_polygon_formula() {
        let s = regular_polygon_section(64, 1.0);
        let expected = 32.0 * (2.0 * std::f64::consts::PI / 64.0).sin();
        assert_abs_diff_eq!(section_area(&s).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(section_area(&s).unwrap(), 3.1366, epsilon = 2e-4);
    }

    #[test]
    fn section_area_square_case() {
        let s = regular_polygon_section(4, 1.0);
        assert_abs_diff_eq!(section_area(&s).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn section_area_scales_quadratically() {
        let a1 = section_area(&regular_polygon_section(16, 1.0)).unwrap();
        let a2 = section_area(&regular_polygon_section(16, 2.0)).unwrap();
        assert!((a2 / a1 - 4.0).abs() < 1e-9);
    }

    #[test]
    fn section_area_rejects_self_intersection() {
        let frame = Frame {
            tangent: Vec3::z(),
            normal: Vec3::x(),
            binormal: Vec3::y(),
        };
        // bow-tie quadrilateral
        let boundary = vec![
            Vec3::new(-1.0, -1.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(1.0, -1.0, 0.0),
            Vec3::new(-1.0, 1.0, 0.0),
        ];
        let s = CrossSection {
            center: Vec3::zeros(),
            frame,
            boundary,
        };
        assert!(section_area(&s).is_err());
    }

    #[test]
    fn normalize_scale_definition_and_idempotence() {
        let t = phantom::tapered_tube(60, 12.0, 0.3, 0.18, 16).unwrap();
        let n1 = normalize_scale(&t);
        assert_abs_diff_eq!(n1.centerline.total_length(), 1.0, epsilon = 1e-12);
        assert!(n1.centerline.points()[0].norm() < 1e-12);
        for (r0, r1) in t.radii.values().iter().zip(n1.radii.values()) {
            assert_abs_diff_eq!(r1 * 12.0, *r0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(n1.meta.normalization_scale.unwrap(), 1.0 / 12.0, epsilon = 1e-15);

        let n2 = normalize_scale(&n1);
        for (a, b) in n1.centerline.points().iter().zip(n2.centerline.points()) {
            assert!((a - b).norm() < 1e-12);
        }
        for (a, b) in n1.radii.values().iter().zip(n2.radii.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_scale_preserves_area_ratios() {
        let t = phantom::stenotic_tube(80, 5.0, 0.2, 0.5, 0.5, 0.08, 32).unwrap();
        let areas = t.section_areas().unwrap();
        let ratio = |a: &[f64]| {
            let min = a.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = a.iter().cloned().fold(0.0f64, f64::max);
            min / max
        };
        let n = normalize_scale(&t);
        let nareas = n.section_areas().unwrap();
        assert!((ratio(&areas) - ratio(&nareas)).abs() < 1e-9);
    }

    #[test]
    fn rigid_rotation_preserves_area_and_arc_length() {
        let t = phantom::stenotic_tube(50, 4.0, 0.18, 0.4, 0.5, 0.1, 16).unwrap();
        let rot = nalgebra::Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let map = |p: &Vec3| rot * p;
        let rotated = DigitalTwin {
            centerline: Centerline::new(t.centerline.points().iter().map(map).collect()).unwrap(),
            radii: t.radii.clone(),
            sections: t
                .sections
                .iter()
                .map(|s| CrossSection {
                    center: map(&s.center),
                    frame: Frame {
                        tangent: rot * s.frame.tangent,
                        normal: rot * s.frame.normal,
                        binormal: rot * s.frame.binormal,
                    },
                    boundary: s.boundary.iter().map(map).collect(),
                })
                .collect(),
            lesion_mask: t.lesion_mask.clone(),
            meta: t.meta.clone(),
        };
        assert!(
            (t.centerline.total_length() - rotated.centerline.total_length()).abs() < 1e-9
        );
        for (a, b) in t
            .section_areas()
            .unwrap()
            .iter()
            .zip(rotated.section_areas().unwrap())
        {
            assert!((a - b).abs() < 1e-9 * a.max(1.0));
        }
    }

    #[test]
    fn validate_flags_bad_radius() {
        let mut t = phantom::straight_tube(10, 2.0, 0.2, 8).unwrap();
        t.radii.0[3] = -0.1;
        let errs = t.validate();
        assert!(errs.iter().any(|e| e.contains("radius")));
    }
}
