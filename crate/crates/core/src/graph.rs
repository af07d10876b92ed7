//! Vascular graph construction: boundary points become nodes, connected by
//! ring edges within each cross-section and 3-nearest-neighbor links to the
//! adjacent sections. Node features are `[x, y, z, section area, distance to
//! centerline]`.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::geometry::{section_area, Centerline, DigitalTwin, Vec3};

/// Number of nearest neighbors linked in each adjacent section.
pub const INTER_SECTION_KNN: usize = 3;

/// Boundary-point graph of a digital twin. Nodes are ordered section-major:
/// node `i·K + j` is boundary point `j` of section `i`. Edges are undirected,
/// deduplicated, and stored with the smaller index first.
#[derive(Debug, Clone)]
pub struct VascularGraph {
    pub node_coords: Vec<Vec3>,
    /// Per-node `[x, y, z, a, r]`: coordinates, section lumen area, shortest
    /// distance to the centerline polyline.
    pub node_features: Vec<[f64; 5]>,
    pub edges: Vec<(u32, u32)>,
    pub section_of_node: Vec<u32>,
    pub centerline: Centerline,
}

impl VascularGraph {
    pub fn n_nodes(&self) -> usize {
        self.node_coords.len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.n_nodes()];
        for &(a, b) in &self.edges {
            deg[a as usize] += 1;
            deg[b as usize] += 1;
        }
        deg
    }

    /// True when every node is reachable from node 0 (union-find sweep).
    pub fn is_connected(&self) -> bool {
        let n = self.n_nodes();
        if n == 0 {
            return false;
        }
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &(a, b) in &self.edges {
            let (ra, rb) = (find(&mut parent, a as usize), find(&mut parent, b as usize));
            if ra != rb {
                parent[ra] = rb;
            }
        }
        let root = find(&mut parent, 0);
        (1..n).all(|i| find(&mut parent, i) == root)
    }
}

/// `k` nearest candidates (by Euclidean distance to `from`, ties broken by
/// lower node index) among the nodes of one section.
fn knn_in_section(
    from: Vec3,
    coords: &[Vec3],
    section_start: usize,
    k_per_section: usize,
    knn: usize,
) -> Vec<usize> {
    let mut cand: Vec<(f64, usize)> = (section_start..section_start + k_per_section)
        .map(|idx| ((coords[idx] - from).norm_squared(), idx))
        .collect();
    cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    cand.into_iter().take(knn).map(|(_, idx)| idx).collect()
}

/// Builds the boundary graph: ring edges inside each section plus 3-NN links
/// to the previous and next sections, symmetrized and deduplicated.
pub fn build_graph(t: &DigitalTwin) -> Result<VascularGraph> {
    let n_sections = t.sections.len();
    if n_sections < 2 {
        return Err(Error::Graph("need at least 2 sections".into()));
    }
    let k = t.section_k();
    if k < 3 {
        return Err(Error::Graph("ring topology needs K >= 3".into()));
    }
    let mut coords = Vec::with_capacity(n_sections * k);
    let mut section_of_node = Vec::with_capacity(n_sections * k);
    for (i, s) in t.sections.iter().enumerate() {
        if s.boundary.len() != k {
            return Err(Error::Graph(format!(
                "section {i} has {} boundary points, expected {k}",
                s.boundary.len()
            )));
        }
        for q in &s.boundary {
            coords.push(*q);
            section_of_node.push(i as u32);
        }
    }

    let mut edges: BTreeSet<(u32, u32)> = BTreeSet::new();
    let mut add = |a: usize, b: usize| {
        let (a, b) = (a.min(b) as u32, a.max(b) as u32);
        if a != b {
            edges.insert((a, b));
        }
    };

    for i in 0..n_sections {
        let base = i * k;
        for j in 0..k {
            let node = base + j;
            // ring: two angular neighbors
            add(node, base + (j + 1) % k);
            // 3-NN into each adjacent section
            if i > 0 {
                for nb in knn_in_section(coords[node], &coords, base - k, k, INTER_SECTION_KNN) {
                    add(node, nb);
                }
            }
            if i + 1 < n_sections {
                for nb in knn_in_section(coords[node], &coords, base + k, k, INTER_SECTION_KNN) {
                    add(node, nb);
                }
            }
        }
    }

    let node_features = compute_features(t)?;
    Ok(VascularGraph {
        node_coords: coords,
        node_features,
        edges: edges.into_iter().collect(),
        section_of_node,
        centerline: t.centerline.clone(),
    })
}

/// Shortest distance from a point to the centerline polyline (minimum over
/// all point-to-segment distances).
pub fn distance_to_polyline(p: Vec3, polyline: &[Vec3]) -> f64 {
    let mut best = f64::INFINITY;
    for w in polyline.windows(2) {
        let (a, b) = (w[0], w[1]);
        let ab = b - a;
        let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
        let d = (p - (a + ab * t)).norm();
        if d < best {
            best = d;
        }
    }
    best
}

/// Per-node feature matrix `[x, y, z, a, r]` in section-major node order.
pub fn compute_features(t: &DigitalTwin) -> Result<Vec<[f64; 5]>> {
    let areas: Vec<f64> = t
        .sections
        .iter()
        .map(section_area)
        .collect::<Result<_>>()?;
    let pts = t.centerline.points();
    let mut features = Vec::with_capacity(t.sections.len() * t.section_k());
    for (s, a) in t.sections.iter().zip(&areas) {
        for q in &s.boundary {
            let r = distance_to_polyline(*q, pts);
            features.push([q.x, q.y, q.z, *a, r]);
        }
    }
    Ok(features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::sweep;
    use crate::geometry::{phantom, Centerline, RadiusProfile};

    fn straight(n: usize, k: usize, r: f64) -> DigitalTwin {
        phantom::straight_tube(n, n as f64 * 0.1, r, k).unwrap()
    }

    #[test]
    fn two_section_graph_builds_and_single_section_is_rejected() {
        let c = Centerline::new(vec![Vec3::zeros(), Vec3::new(0.0, 0.0, 0.2)]).unwrap();
        let t = sweep(&c, &RadiusProfile(vec![0.2; 2]), 4).unwrap();
        let g = build_graph(&t).unwrap();
        assert_eq!(g.n_nodes(), 8);

        // a single-section twin has no adjacent sections to link
        let mut t1 = t.clone();
        t1.sections.truncate(1);
        assert!(build_graph(&t1).is_err());
    }

    #[test]
    fn node_count_and_degree_recipe() {
        let t = straight(10, 8, 0.2);
        let g = build_graph(&t).unwrap();
        assert_eq!(g.n_nodes(), 80);
        let deg = g.degrees();
        for (node, &d) in deg.iter().enumerate() {
            let s = g.section_of_node[node];
            if s == 0 || s == 9 {
                assert!(d >= 5, "boundary-section node {node} degree {d}");
            } else {
                assert!(d >= 8, "interior node {node} degree {d}");
            }
        }
        assert!(g.is_connected());
    }

    #[test]
    fn straight_tube_links_angularly_closest_neighbors() {
        let k = 8;
        let t = straight(5, k, 0.25);
        let g = build_graph(&t).unwrap();
        // on an aligned cylinder the 3 nearest in the next section are the
        // same angular index and its two ring neighbors
        for j in 0..k {
            let node = k + j; // section 1
            let expect: BTreeSet<u32> = [(2 * k + j), (2 * k + (j + 1) % k), (2 * k + (j + k - 1) % k)]
                .into_iter()
                .map(|v| v as u32)
                .collect();
            let actual: BTreeSet<u32> = g
                .edges
                .iter()
                .filter_map(|&(a, b)| {
                    let (a, b) = (a as usize, b as usize);
                    if a == node && b >= 2 * k && b < 3 * k {
                        Some(b as u32)
                    } else if b == node && a >= 2 * k && a < 3 * k {
                        Some(a as u32)
                    } else {
                        None
                    }
                })
                .collect();
            assert_eq!(actual, expect, "node {node}");
        }
    }

    #[test]
    fn knn_matches_brute_force_on_small_twins() {
        let t = phantom::helical_tube(12, 3.0, 0.4, 1.0, 0.12, 6).unwrap();
        let g = build_graph(&t).unwrap();
        let k = 6;
        // brute-force reference edge set
        let mut expect: BTreeSet<(u32, u32)> = BTreeSet::new();
        let mut add = |a: usize, b: usize| {
            expect.insert((a.min(b) as u32, a.max(b) as u32));
        };
        let coords = &g.node_coords;
        for i in 0..12usize {
            for j in 0..k {
                let node = i * k + j;
                add(node, i * k + (j + 1) % k);
                for adj in [i.wrapping_sub(1), i + 1] {
                    if adj >= 12 {
                        continue;
                    }
                    let mut cand: Vec<(f64, usize)> = (0..k)
                        .map(|jj| {
                            let idx = adj * k + jj;
                            ((coords[idx] - coords[node]).norm_squared(), idx)
                        })
                        .collect();
                    cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                    for (_, idx) in cand.into_iter().take(3) {
                        add(node, idx);
                    }
                }
            }
        }
        let actual: BTreeSet<(u32, u32)> = g.edges.iter().cloned().collect();
        assert_eq!(actual, expect);
    }

    #[test]
    fn features_on_straight_tube() {
        let r = 0.2;
        let t = straight(8, 8, r);
        let g = build_graph(&t).unwrap();
        let area = section_area(&t.sections[0]).unwrap();
        for (node, f) in g.node_features.iter().enumerate() {
            assert!((f[4] - r).abs() < 1e-9, "node {node} centerline distance");
            assert!((f[3] - area).abs() < 1e-12);
            let q = g.node_coords[node];
            assert_eq!([f[0], f[1], f[2]], [q.x, q.y, q.z]);
        }
    }

    #[test]
    fn polyline_distance_never_exceeds_own_section_center_distance() {
        let t = phantom::helical_tube(40, 5.0, 0.7, 1.3, 0.15, 8).unwrap();
        let feats = compute_features(&t).unwrap();
        let k = t.section_k();
        for (node, f) in feats.iter().enumerate() {
            let sec = node / k;
            let q = Vec3::new(f[0], f[1], f[2]);
            let d_center = (q - t.sections[sec].center).norm();
            assert!(f[4] <= d_center + 1e-12);
        }
    }

    #[test]
    fn build_graph_is_deterministic_and_rotation_invariant() {
        let t = phantom::stenotic_tube(20, 3.0, 0.2, 0.4, 0.5, 0.1, 8).unwrap();
        let g1 = build_graph(&t).unwrap();
        let g2 = build_graph(&t).unwrap();
        assert_eq!(g1.edges, g2.edges);

        let rot = nalgebra::Rotation3::from_euler_angles(0.9, 0.2, -1.3);
        let rotated = DigitalTwin {
            centerline: Centerline::new(t.centerline.points().iter().map(|p| rot * p).collect())
                .unwrap(),
            radii: t.radii.clone(),
            sections: t
                .sections
                .iter()
                .map(|s| crate::geometry::CrossSection {
                    center: rot * s.center,
                    frame: crate::geometry::Frame {
                        tangent: rot * s.frame.tangent,
                        normal: rot * s.frame.normal,
                        binormal: rot * s.frame.binormal,
                    },
                    boundary: s.boundary.iter().map(|q| rot * q).collect(),
                })
                .collect(),
            lesion_mask: t.lesion_mask.clone(),
            meta: t.meta.clone(),
        };
        let g3 = build_graph(&rotated).unwrap();
        assert_eq!(g1.edges, g3.edges);
    }
}
