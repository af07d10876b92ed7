//! Primitive differentiable operations: dense linear layers, rectifiers,
//! symmetric-normalized graph propagation, Top-K gating, and the
//! nearest-neighbor gather behind centerline aggregation.
//!
//! Each forward has a matching hand-derived backward; the unit tests check
//! every rule against central finite differences.

use ndarray::{Array1, Array2, Axis};

use crate::geometry::Vec3;

/// Dense affine layer `y = x·w + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    /// Returns `(dx, dw, db)` for upstream gradient `dy`.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
        let dx = dy.dot(&self.w.t());
        let dw = x.t().dot(dy);
        let db = dy.sum_axis(Axis(0));
        (dx, dw, db)
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Backward of the rectifier given its *output* (output > 0 iff input > 0).
pub fn relu_backward(y: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |g, &yv| {
        if yv <= 0.0 {
            *g = 0.0;
        }
    });
    dx
}

/// Symmetric-normalized propagation operator `D̂^{-1/2}(A + I)D̂^{-1/2}`,
/// stored as per-node neighbor lists (self-loop included). Symmetric, so it
/// is its own transpose in backward passes.
#[derive(Debug, Clone)]
pub struct Propagation {
    nbrs: Vec<Vec<(u32, f64)>>,
}

impl Propagation {
    pub fn from_edges(n: usize, edges: &[(u32, u32)]) -> Self {
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
        for &(a, b) in edges {
            adj[a as usize].push(b);
            adj[b as usize].push(a);
        }
        let deg: Vec<f64> = adj.iter().map(|a| 1.0 + a.len() as f64).collect();
        let mut nbrs = Vec::with_capacity(n);
        for i in 0..n {
            let mut row: Vec<(u32, f64)> = Vec::with_capacity(adj[i].len() + 1);
            row.push((i as u32, 1.0 / deg[i]));
            for &j in &adj[i] {
                row.push((j, 1.0 / (deg[i] * deg[j as usize]).sqrt()));
            }
            row.sort_by_key(|&(j, _)| j);
            nbrs.push(row);
        }
        Self { nbrs }
    }

    pub fn n_nodes(&self) -> usize {
        self.nbrs.len()
    }

    /// `y = S·x`.
    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = Array2::zeros(x.raw_dim());
        for (i, row) in self.nbrs.iter().enumerate() {
            for &(j, w) in row {
                let src = x.row(j as usize);
                let mut dst = y.row_mut(i);
                dst.scaled_add(w, &src);
            }
        }
        y
    }

    /// Dense matrix form, for oracle comparisons on small graphs.
    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.n_nodes();
        let mut m = Array2::zeros((n, n));
        for (i, row) in self.nbrs.iter().enumerate() {
            for &(j, w) in row {
                m[[i, j as usize]] = w;
            }
        }
        m
    }
}

/// Top-K node selection: indices of the `⌈ratio·n⌉` largest scores, ties
/// broken toward the lower index, returned in ascending node order.
pub fn topk_select(scores: &[f64], ratio: f64) -> Vec<usize> {
    let n = scores.len();
    let m = ((ratio * n as f64).ceil() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = order.into_iter().take(m).collect();
    kept.sort_unstable();
    kept
}

/// Induces the subgraph on `kept` (ascending), reindexing edges.
pub fn induce_edges(edges: &[(u32, u32)], kept: &[usize], n_old: usize) -> Vec<(u32, u32)> {
    let mut remap = vec![u32::MAX; n_old];
    for (new, &old) in kept.iter().enumerate() {
        remap[old] = new as u32;
    }
    edges
        .iter()
        .filter_map(|&(a, b)| {
            let (ra, rb) = (remap[a as usize], remap[b as usize]);
            (ra != u32::MAX && rb != u32::MAX).then_some((ra.min(rb), ra.max(rb)))
        })
        .collect()
}

/// Nearest `k` node indices for each query point, ties toward the lower
/// node index.
#[derive(Debug, Clone)]
pub struct CaSelection {
    /// `k` neighbor node indices per query, query-major.
    pub neighbors: Vec<usize>,
    pub k: usize,
}

pub fn ca_select(queries: &[Vec3], coords: &[Vec3], k: usize) -> CaSelection {
    let mut neighbors = Vec::with_capacity(queries.len() * k);
    for q in queries {
        let mut cand: Vec<(f64, usize)> = coords
            .iter()
            .enumerate()
            .map(|(i, c)| ((c - q).norm_squared(), i))
            .collect();
        cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        neighbors.extend(cand.into_iter().take(k).map(|(_, i)| i));
    }
    CaSelection { neighbors, k }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_mat(&mut rng, 7, 4);
        let lin = Linear {
            w: rand_mat(&mut rng, 4, 3),
            b: Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0)),
        };
        // scalar objective: sum of squares of outputs
        let loss = |lin: &Linear, x: &Array2<f64>| lin.forward(x).mapv(|v| v * v).sum();
        let y = lin.forward(&x);
        let dy = y.mapv(|v| 2.0 * v);
        let (dx, dw, db) = lin.backward(&x, &dy);

        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let up = loss(&lin, &xp);
                xp[[i, j]] -= 2.0 * h;
                let dn = loss(&lin, &xp);
                let fd = (up - dn) / (2.0 * h);
                worst = worst.max((fd - dx[[i, j]]).abs());
            }
        }
        for i in 0..lin.w.nrows() {
            for j in 0..lin.w.ncols() {
                let mut lp = lin.clone();
                lp.w[[i, j]] += h;
                let up = loss(&lp, &x);
                lp.w[[i, j]] -= 2.0 * h;
                let dn = loss(&lp, &x);
                let fd = (up - dn) / (2.0 * h);
                worst = worst.max((fd - dw[[i, j]]).abs());
            }
        }
        for j in 0..lin.b.len() {
            let mut lp = lin.clone();
            lp.b[j] += h;
            let up = loss(&lp, &x);
            lp.b[j] -= 2.0 * h;
            let dn = loss(&lp, &x);
            let fd = (up - dn) / (2.0 * h);
            worst = worst.max((fd - db[j]).abs());
        }
        assert!(worst < 1e-6, "worst abs gradient error {worst}");
    }

    #[test]
    fn propagation_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 9;
        let edges = vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (5, 6), (6, 7), (7, 8), (8, 5), (0, 5)];
        let prop = Propagation::from_edges(n, &edges);
        let x = rand_mat(&mut rng, n, 4);
        let sparse = prop.apply(&x);
        let dense = prop.to_dense().dot(&x);
        for (a, b) in sparse.iter().zip(dense.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        // symmetric operator
        let d = prop.to_dense();
        for i in 0..n {
            for j in 0..n {
                assert!((d[[i, j]] - d[[j, i]]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn propagation_isolated_node_is_identity_row() {
        let prop = Propagation::from_edges(3, &[(0, 1)]);
        let x = Array2::from_shape_fn((3, 2), |(i, j)| (i * 2 + j) as f64 + 1.0);
        let y = prop.apply(&x);
        // node 2 has only its self-loop with weight 1
        assert_eq!(y.row(2).to_vec(), x.row(2).to_vec());
    }

    #[test]
    fn topk_selection_examples() {
        assert_eq!(topk_select(&[3.0, 1.0, 2.0, 0.0], 0.5), vec![0, 2]);
        assert_eq!(topk_select(&[1.0, 1.0, 1.0], 0.34), vec![0, 1]);
        assert_eq!(topk_select(&[0.5, 0.9], 1.0), vec![0, 1]);
        // ties keep the lower index
        assert_eq!(topk_select(&[2.0, 5.0, 5.0, 5.0], 0.5), vec![1, 2]);
    }

    #[test]
    fn induce_edges_reindexes() {
        let edges = vec![(0, 1), (1, 2), (2, 3), (0, 3)];
        let kept = vec![1, 2, 3];
        let out = induce_edges(&edges, &kept, 4);
        assert_eq!(out, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn ca_select_matches_exhaustive_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let coords: Vec<Vec3> = (0..10)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let queries: Vec<Vec3> = (0..3)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let sel = ca_select(&queries, &coords, 2);
        for (qi, q) in queries.iter().enumerate() {
            let mut all: Vec<(f64, usize)> = coords
                .iter()
                .enumerate()
                .map(|(i, c)| ((c - q).norm_squared(), i))
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            assert_eq!(sel.neighbors[qi * 2], all[0].1);
            assert_eq!(sel.neighbors[qi * 2 + 1], all[1].1);
        }
    }
}
