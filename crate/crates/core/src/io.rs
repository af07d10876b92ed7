//! File formats: versioned twin JSON, graph export JSON, and ASCII PLY
//! point clouds for visualization.
//!
//! Twin files carry `format_version`, provenance metadata, the centerline,
//! per-point radii and lesion mask, and (optionally) the swept section
//! boundaries; absent sections are re-swept on import. Serialization is
//! deterministic, so identical twins produce identical bytes.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::sweep;
use crate::error::{Error, Result};
use crate::geometry::{Centerline, CrossSection, DigitalTwin, RadiusProfile, TwinMeta, Vec3};
use crate::graph::VascularGraph;

pub const TWIN_FORMAT_VERSION: u32 = 1;
pub const GRAPH_FORMAT_VERSION: u32 = 1;

fn fmt_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

#[derive(Debug, Serialize, Deserialize)]
struct SectionsFile {
    k: usize,
    boundary: Vec<Vec<[f64; 3]>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TwinFile {
    format_version: u32,
    meta: TwinMeta,
    centerline: Vec<[f64; 3]>,
    radii: Vec<f64>,
    lesion_mask: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sections: Option<SectionsFile>,
}

fn to_arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn from_arr(a: &[f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

/// Serializes a twin to deterministic JSON bytes.
pub fn twin_to_json(t: &DigitalTwin) -> Result<Vec<u8>> {
    let file = TwinFile {
        format_version: TWIN_FORMAT_VERSION,
        meta: t.meta.clone(),
        centerline: t.centerline.points().iter().map(to_arr).collect(),
        radii: t.radii.values().to_vec(),
        lesion_mask: t.lesion_mask.clone(),
        sections: Some(SectionsFile {
            k: t.section_k(),
            boundary: t
                .sections
                .iter()
                .map(|s| s.boundary.iter().map(to_arr).collect())
                .collect(),
        }),
    };
    serde_json::to_vec(&file).map_err(|e| Error::Format(e.to_string()))
}

/// Parses a twin from JSON bytes. When the file has no sections they are
/// re-swept from the centerline and radii (default K = 64).
pub fn twin_from_json(bytes: &[u8]) -> Result<DigitalTwin> {
    let file: TwinFile =
        serde_json::from_slice(bytes).map_err(|e| Error::Format(e.to_string()))?;
    if file.format_version != TWIN_FORMAT_VERSION {
        return fmt_err(format!(
            "unsupported twin format_version {} (expected {TWIN_FORMAT_VERSION})",
            file.format_version
        ));
    }
    let centerline = Centerline::new(file.centerline.iter().map(from_arr).collect())?;
    let n = centerline.len();
    if file.radii.len() != n {
        return fmt_err(format!(
            "radii length {} does not match centerline {}",
            file.radii.len(),
            n
        ));
    }
    if file.lesion_mask.len() != n {
        return fmt_err(format!(
            "lesion_mask length {} does not match centerline {}",
            file.lesion_mask.len(),
            n
        ));
    }
    let radii = RadiusProfile(file.radii);
    let sections = match file.sections {
        Some(sf) => {
            if sf.boundary.len() != n {
                return fmt_err(format!(
                    "sections count {} does not match centerline {}",
                    sf.boundary.len(),
                    n
                ));
            }
            let frames = crate::geometry::compute_frames(&centerline)?;
            sf.boundary
                .iter()
                .zip(centerline.points())
                .zip(frames)
                .map(|((b, center), frame)| {
                    if b.len() != sf.k {
                        return fmt_err(format!("section boundary has {} points, expected {}", b.len(), sf.k));
                    }
                    Ok(CrossSection {
                        center: *center,
                        frame,
                        boundary: b.iter().map(from_arr).collect(),
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
        None => sweep(&centerline, &radii, 64)?.sections,
    };
    Ok(DigitalTwin {
        centerline,
        radii,
        sections,
        lesion_mask: file.lesion_mask,
        meta: file.meta,
    })
}

pub fn save_twin(t: &DigitalTwin, path: &Path) -> Result<()> {
    fs::write(path, twin_to_json(t)?)?;
    Ok(())
}

pub fn load_twin(path: &Path) -> Result<DigitalTwin> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    twin_from_json(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Graph export
// ---------------------------------------------------------------------------

/// Flat JSON layout of a vascular graph: node count, coordinates, 5-wide
/// features, undirected edge pairs (smaller index first), and the section
/// index of each node.
#[derive(Debug, Serialize, Deserialize)]
pub struct GraphFile {
    pub format_version: u32,
    pub n_nodes: usize,
    pub coords: Vec<[f64; 3]>,
    pub features: Vec<[f64; 5]>,
    pub edges: Vec<(u32, u32)>,
    pub section_of_node: Vec<u32>,
}

pub fn graph_to_json(g: &VascularGraph) -> Result<Vec<u8>> {
    let file = GraphFile {
        format_version: GRAPH_FORMAT_VERSION,
        n_nodes: g.n_nodes(),
        coords: g.node_coords.iter().map(to_arr).collect(),
        features: g.node_features.clone(),
        edges: g.edges.clone(),
        section_of_node: g.section_of_node.clone(),
    };
    serde_json::to_vec(&file).map_err(|e| Error::Format(e.to_string()))
}

// ---------------------------------------------------------------------------
// PLY export
// ---------------------------------------------------------------------------

/// Writes the twin's boundary point cloud as ASCII PLY with one scalar
/// channel per point (named by `channel`).
pub fn export_ply(
    t: &DigitalTwin,
    channel_name: &str,
    channel: &[f64],
    path: &Path,
) -> Result<()> {
    let n_points: usize = t.sections.iter().map(|s| s.boundary.len()).sum();
    if channel.len() != n_points {
        return fmt_err(format!(
            "scalar channel length {} does not match {} boundary points",
            channel.len(),
            n_points
        ));
    }
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    out.push_str(&format!("element vertex {n_points}\n"));
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    out.push_str(&format!("property double {channel_name}\n"));
    out.push_str("end_header\n");
    let mut i = 0;
    for s in &t.sections {
        for q in &s.boundary {
            out.push_str(&format!("{} {} {} {}\n", q.x, q.y, q.z, channel[i]));
            i += 1;
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}
