//! Anatomy-aware twin synthesis: recombines a donor centerline with a donor
//! radius profile under controlled geometric perturbations, then sweeps
//! circular cross-sections along the result.
//!
//! The centerline pipeline is rotate → bend → smooth → resample → normalize;
//! the radius profile is resampled onto the same grid and perturbed with
//! Gaussian noise. Every random draw flows from the explicit seed in
//! [`AugmentParams`], so synthesis is bit-reproducible.

use nalgebra::Rotation3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    compute_frames, normalize_scale, resample_mask, resample_profile, resample_uniform,
    Centerline, CrossSection, DigitalTwin, RadiusProfile, TwinMeta, Vec3,
};

fn aug_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Augment(msg.into()))
}

/// Parameters of one synthesis run.
///
/// `euler_angles` are (z, y, x) intrinsic rotation angles in radians;
/// `bend_amplitude` is a fraction of total arc length; `bend_frequency` is in
/// cycles over the vessel; `smoothing_sigma` is in units of point index;
/// `radius_noise_sigma` is a fraction of the local radius (or cm when
/// `radius_noise_absolute` is set).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub euler_angles: [f64; 3],
    pub bend_amplitude: f64,
    pub bend_frequency: f64,
    pub smoothing_sigma: f64,
    pub radius_noise_sigma: f64,
    #[serde(default)]
    pub radius_noise_absolute: bool,
    pub target_n: usize,
    pub target_k: usize,
    pub seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            euler_angles: [0.0; 3],
            bend_amplitude: 0.0,
            bend_frequency: 0.0,
            smoothing_sigma: 0.0,
            radius_noise_sigma: 0.0,
            radius_noise_absolute: false,
            target_n: 500,
            target_k: 64,
            seed: 0,
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        if self.bend_amplitude < 0.0
            || self.bend_frequency < 0.0
            || self.smoothing_sigma < 0.0
            || self.radius_noise_sigma < 0.0
        {
            return aug_err("augmentation magnitudes must be non-negative");
        }
        if self.target_n < 2 {
            return aug_err("target_n must be >= 2");
        }
        if self.target_k < 3 {
            return aug_err("target_k must be >= 3");
        }
        Ok(())
    }
}

/// Sampling ranges for corpus generation. Angles are drawn uniformly over
/// full Euler ranges; the remaining magnitudes uniformly over `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges {
    pub bend_amplitude: (f64, f64),
    pub bend_frequency: (f64, f64),
    pub smoothing_sigma: (f64, f64),
    pub radius_noise_sigma: (f64, f64),
    pub target_n: usize,
    pub target_k: usize,
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self {
            bend_amplitude: (0.0, 0.05),
            bend_frequency: (0.5, 2.0),
            smoothing_sigma: (0.0, 3.0),
            radius_noise_sigma: (0.0, 0.05),
            target_n: 500,
            target_k: 64,
        }
    }
}

impl ParamRanges {
    /// Draws one parameter set. The synthesis sub-seed is drawn from the same
    /// stream so a corpus is fully determined by its per-twin seeds.
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> AugmentParams {
        use std::f64::consts::PI;
        let u = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
            if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        };
        AugmentParams {
            euler_angles: [
                rng.random_range(-PI..PI),
                rng.random_range(-PI / 2.0..PI / 2.0),
                rng.random_range(-PI..PI),
            ],
            bend_amplitude: u(rng, self.bend_amplitude),
            bend_frequency: u(rng, self.bend_frequency),
            smoothing_sigma: u(rng, self.smoothing_sigma),
            radius_noise_sigma: u(rng, self.radius_noise_sigma),
            radius_noise_absolute: false,
            target_n: self.target_n,
            target_k: self.target_k,
            seed: rng.random(),
        }
    }
}

/// Rotates all points about the centerline centroid by the (z, y, x)
/// intrinsic Euler composition.
pub fn rotate(c: &Centerline, euler: [f64; 3]) -> Centerline {
    let rot = Rotation3::from_euler_angles(euler[2], euler[1], euler[0]);
    let centroid: Vec3 = c.points().iter().sum::<Vec3>() / c.len() as f64;
    let pts = c
        .points()
        .iter()
        .map(|p| centroid + rot * (p - centroid))
        .collect();
    Centerline::new(pts).expect("rotation is an isometry")
}

/// Displaces each point by `α·L·sin(2π f s/L)` along a random unit direction
/// orthogonal to the first-to-last chord.
pub fn bend(c: &Centerline, alpha: f64, freq: f64, rng: &mut ChaCha8Rng) -> Result<Centerline> {
    if alpha < 0.0 || freq < 0.0 {
        return aug_err("bend amplitude and frequency must be non-negative");
    }
    if alpha == 0.0 {
        return Ok(c.clone());
    }
    let chord = c.points().last().unwrap() - c.points()[0];
    if chord.norm() < 1e-9 {
        return aug_err("degenerate chord: centerline is (nearly) a closed loop");
    }
    let chord_dir = chord.normalize();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let dir = loop {
        let v = Vec3::new(
            normal.sample(rng),
            normal.sample(rng),
            normal.sample(rng),
        );
        let ortho = v - chord_dir * v.dot(&chord_dir);
        if ortho.norm() > 1e-6 {
            break ortho.normalize();
        }
    };
    let total = c.total_length();
    let pts = c
        .points()
        .iter()
        .zip(c.arc_length())
        .map(|(p, s)| {
            let w = alpha * total * (2.0 * std::f64::consts::PI * freq * s / total).sin();
            p + dir * w
        })
        .collect();
    Centerline::new(pts)
}

/// 1D Gaussian smoothing of each coordinate channel over point index, with a
/// ±3σ truncated kernel and reflect padding. `sigma = 0` is the identity.
pub fn smooth(c: &Centerline, sigma: f64) -> Result<Centerline> {
    if sigma < 0.0 {
        return aug_err("smoothing sigma must be non-negative");
    }
    if sigma == 0.0 {
        return Ok(c.clone());
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    for j in -radius..=radius {
        kernel.push((-0.5 * (j as f64 / sigma).powi(2)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    let n = c.len() as i64;
    let reflect = |i: i64| -> usize {
        // reflect with edge duplication: -1 -> 0, n -> n-1
        let mut i = i;
        loop {
            if i < 0 {
                i = -i - 1;
            } else if i >= n {
                i = 2 * n - i - 1;
            } else {
                return i as usize;
            }
        }
    };
    let pts: Vec<Vec3> = (0..n)
        .map(|i| {
            let mut acc = Vec3::zeros();
            for (kj, j) in (-radius..=radius).enumerate() {
                acc += c.points()[reflect(i + j)] * kernel[kj];
            }
            acc / norm
        })
        .collect();
    Centerline::new(pts)
}

/// Multiplicative Gaussian radius noise `r·(1 + ε)`, `ε ~ N(0, σ²)` (or
/// additive `r + ε` with `absolute`), clamped to 5% of the median radius.
pub fn perturb_radius(
    r: &RadiusProfile,
    sigma: f64,
    absolute: bool,
    rng: &mut ChaCha8Rng,
) -> Result<RadiusProfile> {
    if sigma < 0.0 {
        return aug_err("radius noise sigma must be non-negative");
    }
    if sigma == 0.0 {
        return Ok(r.clone());
    }
    let mut sorted = r.values().to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[sorted.len() / 2];
    let floor = 0.05 * median;
    let normal = Normal::new(0.0, sigma).unwrap();
    let out = r
        .values()
        .iter()
        .map(|&ri| {
            let eps = normal.sample(rng);
            let v = if absolute { ri + eps } else { ri * (1.0 + eps) };
            v.max(floor)
        })
        .collect();
    Ok(RadiusProfile(out))
}

/// Sliding-window median with the given window (odd count of points),
/// clamped at the ends.
fn moving_median(values: &[f64], window: usize) -> Vec<f64> {
    let n = values.len();
    let half = window / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            let mut w: Vec<f64> = values[lo..hi].to_vec();
            w.sort_by(|a, b| a.partial_cmp(b).unwrap());
            w[w.len() / 2]
        })
        .collect()
}

/// Default lesion labeling for synthetic twins without an inherited mask:
/// points whose radius falls below 70% of the local (101-point) moving
/// median are flagged.
pub fn derive_lesion_mask(radii: &RadiusProfile) -> Vec<bool> {
    let med = moving_median(radii.values(), 101);
    radii
        .values()
        .iter()
        .zip(&med)
        .map(|(r, m)| *r < 0.7 * m)
        .collect()
}

/// Sweeps circular cross-sections of radius `r_i` along the centerline:
/// boundary point `j` of section `i` sits at angle `2πj/k` in the local
/// (normal, binormal) plane. The lesion mask is derived from the radius
/// profile (see [`derive_lesion_mask`]).
pub fn sweep(c: &Centerline, r: &RadiusProfile, k: usize) -> Result<DigitalTwin> {
    if c.len() != r.len() {
        return aug_err(format!(
            "centerline ({}) and radius profile ({}) lengths differ",
            c.len(),
            r.len()
        ));
    }
    if k < 3 {
        return aug_err("at least 3 boundary points per section required");
    }
    for (i, ri) in r.values().iter().enumerate() {
        if !(ri.is_finite() && *ri > 0.0) {
            return aug_err(format!("radius at point {i} must be finite and positive"));
        }
    }
    let frames = compute_frames(c)?;
    let sections = c
        .points()
        .iter()
        .zip(r.values())
        .zip(&frames)
        .map(|((p, ri), f)| {
            let boundary = (0..k)
                .map(|j| {
                    let theta = 2.0 * std::f64::consts::PI * j as f64 / k as f64;
                    p + (f.normal * theta.cos() + f.binormal * theta.sin()) * *ri
                })
                .collect();
            CrossSection {
                center: *p,
                frame: *f,
                boundary,
            }
        })
        .collect();
    let lesion_mask = derive_lesion_mask(r);
    Ok(DigitalTwin {
        centerline: c.clone(),
        radii: r.clone(),
        sections,
        lesion_mask,
        meta: TwinMeta::default(),
    })
}

/// Synthesizes one twin from a centerline donor and a radius donor.
///
/// The donor centerline is rotated, bent, smoothed, and resampled to
/// `target_n`; the donor radius profile is resampled onto the same grid and
/// perturbed; the result is swept with `target_k` boundary points and
/// normalized to unit arc length. The lesion mask is inherited from the
/// radius donor when it marks any point, otherwise derived from the radius
/// profile.
pub fn synthesize(
    donor_centerline: &DigitalTwin,
    donor_radius: &DigitalTwin,
    p: &AugmentParams,
) -> Result<DigitalTwin> {
    p.validate()?;
    if donor_centerline.n_points() < 2 || donor_radius.n_points() < 2 {
        return aug_err("donor twins need at least 2 points");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);

    let c = rotate(&donor_centerline.centerline, p.euler_angles);
    let c = bend(&c, p.bend_amplitude, p.bend_frequency, &mut rng)?;
    let c = smooth(&c, p.smoothing_sigma)?;
    let c = resample_uniform(&c, p.target_n, 1e-9)?;

    let radii = RadiusProfile(resample_profile(
        donor_radius.centerline.arc_length(),
        donor_radius.radii.values(),
        p.target_n,
    ));
    let radii = perturb_radius(&radii, p.radius_noise_sigma, p.radius_noise_absolute, &mut rng)?;

    let mut twin = sweep(&c, &radii, p.target_k)?;
    if donor_radius.lesion_mask.iter().any(|&m| m) {
        twin.lesion_mask = resample_mask(
            donor_radius.centerline.arc_length(),
            &donor_radius.lesion_mask,
            p.target_n,
        );
    }
    let mut twin = normalize_scale(&twin);
    twin.meta = TwinMeta {
        id: String::new(),
        source_ids: vec![
            donor_centerline.meta.id.clone(),
            donor_radius.meta.id.clone(),
        ],
        seed: Some(p.seed),
        augment: Some(p.clone()),
        normalization_scale: twin.meta.normalization_scale,
    };
    Ok(twin)
}
