//! Traced forward pass of the hierarchical encoder and its backward pass.
//!
//! Forward: three GCN blocks with Top-K pooling in between; at every level a
//! centerline-aggregation (CA) gather pulls the level's node features onto
//! the N centerline points; level features are concatenated, fused by an
//! MLP, and read out by the prediction head as per-point (Q, P). The fused
//! features also mean-pool into the artery embedding.
//!
//! Backward consumes gradients with respect to (Q, P) and optionally the
//! embedding, and returns gradients for every parameter tensor. Discrete
//! selections (Top-K membership, CA neighbor sets) are treated as constants
//! of the backward pass, as usual for these operators.

use ndarray::{Array1, Array2};

use super::ops::{ca_select, induce_edges, relu, relu_backward, topk_select, CaSelection, Propagation};
use super::{nn_err, EncoderConfig, EncoderParams};
use crate::error::Result;
use crate::geometry::{resample, Vec3};
use crate::graph::VascularGraph;

/// Graph-derived model input: the level-0 propagation operator, raw node
/// features, node coordinates, and the resampled centerline points.
#[derive(Debug, Clone)]
pub struct ModelInput {
    pub prop: Propagation,
    pub edges: Vec<(u32, u32)>,
    pub features: Array2<f64>,
    pub coords: Vec<Vec3>,
    pub cl_pts: Vec<Vec3>,
}

/// Builds the model input, resampling the carried centerline to
/// `n_centerline` uniformly spaced points.
pub fn model_input_from_graph(g: &VascularGraph, n_centerline: usize) -> Result<ModelInput> {
    let n = g.n_nodes();
    if n == 0 {
        return nn_err("empty graph");
    }
    let mut features = Array2::zeros((n, EncoderConfig::IN_FEATURES));
    for (i, f) in g.node_features.iter().enumerate() {
        for (j, v) in f.iter().enumerate() {
            features[[i, j]] = *v;
        }
    }
    let cl = resample(&g.centerline, n_centerline)?;
    Ok(ModelInput {
        prop: Propagation::from_edges(n, &g.edges),
        edges: g.edges.clone(),
        features,
        coords: g.node_coords.clone(),
        cl_pts: cl.points().to_vec(),
    })
}

/// Per-point predictions plus the pooled artery embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Flow (cm³/s) at each centerline point.
    pub q: Vec<f64>,
    /// Pressure (dyne/cm²) at each centerline point.
    pub p: Vec<f64>,
    pub embedding: Vec<f64>,
}

struct PoolTrace {
    kept: Vec<usize>,
    gate: Vec<f64>,
    p_hat: Array1<f64>,
    p_norm: f64,
}

struct LevelTrace {
    /// `S·x` input of each GCN layer's linear map.
    gcn_u: Vec<Array2<f64>>,
    /// Post-rectifier output of each GCN layer.
    gcn_y: Vec<Array2<f64>>,
    ca_sel: CaSelection,
    /// CA gather matrix, `(N·k) × (D+3)`.
    ca_gather: Array2<f64>,
    /// CA mixed features after the rectifier, `(N·k) × D`.
    ca_z: Array2<f64>,
    pool: Option<PoolTrace>,
}

/// Every intermediate needed to run the backward pass.
pub struct Trace {
    levels: Vec<LevelTrace>,
    props: Vec<Propagation>,
    concat: Array2<f64>,
    fusion_y: Vec<Array2<f64>>,
    head_y: Vec<Array2<f64>>,
    max_idx: Option<Vec<usize>>,
}

/// Forward pass returning predictions and the trace for [`backward`].
pub fn forward_traced(
    input: &ModelInput,
    params: &EncoderParams,
    cfg: &EncoderConfig,
) -> Result<(Prediction, Trace)> {
    cfg.validate()?;
    let n_cl = input.cl_pts.len();
    let mut levels = Vec::with_capacity(cfg.blocks);
    let mut props = vec![input.prop.clone()];
    let mut coords = input.coords.clone();
    let mut edges = input.edges.clone();
    let mut x = input.features.clone();
    let mut level_feats: Vec<Array2<f64>> = Vec::with_capacity(cfg.blocks);

    for b in 0..cfg.blocks {
        if x.nrows() < cfg.k_ca {
            return nn_err(format!(
                "level {b} has {} nodes, fewer than k_ca = {}",
                x.nrows(),
                cfg.k_ca
            ));
        }
        let prop = props[b].clone();
        let mut gcn_u = Vec::with_capacity(cfg.layers_per_block);
        let mut gcn_y = Vec::with_capacity(cfg.layers_per_block);
        for l in 0..cfg.layers_per_block {
            let lin = &params.blocks[b][l];
            if lin.w.nrows() != x.ncols() {
                return nn_err(format!(
                    "block {b} layer {l} expects {} input features, got {}",
                    lin.w.nrows(),
                    x.ncols()
                ));
            }
            let u = prop.apply(&x);
            let y = relu(&lin.forward(&u));
            gcn_u.push(u);
            x = y.clone();
            gcn_y.push(y);
        }

        // centerline aggregation at this level
        let d = x.ncols();
        let ca_sel = ca_select(&input.cl_pts, &coords, cfg.k_ca);
        let mut gather = Array2::zeros((n_cl * cfg.k_ca, d + 3));
        for (i, cp) in input.cl_pts.iter().enumerate() {
            for s in 0..cfg.k_ca {
                let j = ca_sel.neighbors[i * cfg.k_ca + s];
                let mut row = gather.row_mut(i * cfg.k_ca + s);
                for f in 0..d {
                    row[f] = x[[j, f]];
                }
                let rel = coords[j] - cp;
                row[d] = rel.x;
                row[d + 1] = rel.y;
                row[d + 2] = rel.z;
            }
        }
        let ca_z = relu(&params.ca_mix[b].forward(&gather));
        let mut h = Array2::zeros((n_cl, d));
        for i in 0..n_cl {
            for s in 0..cfg.k_ca {
                let row = ca_z.row(i * cfg.k_ca + s);
                let mut acc = h.row_mut(i);
                acc.scaled_add(1.0 / cfg.k_ca as f64, &row);
            }
        }
        level_feats.push(h);

        // pool down to the next level
        let pool = if b + 1 < cfg.blocks {
            let p = &params.pools[b];
            let p_norm = p.dot(p).sqrt();
            if p_norm < 1e-12 {
                return nn_err(format!("pool {b} projection has zero norm"));
            }
            let p_hat = p.mapv(|v| v / p_norm);
            let scores: Vec<f64> = (0..x.nrows()).map(|i| x.row(i).dot(&p_hat)).collect();
            let kept = topk_select(&scores, cfg.pool_ratio);
            let gate: Vec<f64> = kept.iter().map(|&i| scores[i].tanh()).collect();
            let mut xp = Array2::zeros((kept.len(), x.ncols()));
            for (new, (&old, g)) in kept.iter().zip(&gate).enumerate() {
                let src = x.row(old);
                let mut dst = xp.row_mut(new);
                dst.assign(&src);
                dst *= *g;
            }
            edges = induce_edges(&edges, &kept, x.nrows());
            coords = kept.iter().map(|&i| coords[i]).collect();
            props.push(Propagation::from_edges(kept.len(), &edges));
            let trace = PoolTrace {
                kept,
                gate,
                p_hat,
                p_norm,
            };
            x = xp;
            Some(trace)
        } else {
            None
        };

        levels.push(LevelTrace {
            gcn_u,
            gcn_y,
            ca_sel,
            ca_gather: gather,
            ca_z,
            pool,
        });
    }

    // concatenate level features and fuse
    let concat_w = cfg.concat_width();
    let mut concat = Array2::zeros((n_cl, concat_w));
    let mut off = 0;
    for h in &level_feats {
        let w = h.ncols();
        concat
            .slice_mut(ndarray::s![.., off..off + w])
            .assign(h);
        off += w;
    }
    let mut fusion_y = Vec::with_capacity(params.fusion.len());
    let mut f = concat.clone();
    for lin in &params.fusion {
        f = relu(&lin.forward(&f));
        fusion_y.push(f.clone());
    }
    let fused = fusion_y.last().unwrap().clone();

    // prediction head: rectified except the final linear layer
    let mut head_y = Vec::with_capacity(params.head.len());
    let mut hx = fused.clone();
    for (i, lin) in params.head.iter().enumerate() {
        hx = lin.forward(&hx);
        if i + 1 < params.head.len() {
            hx = relu(&hx);
        }
        head_y.push(hx.clone());
    }
    let out = head_y.last().unwrap();
    let q: Vec<f64> = (0..n_cl).map(|i| out[[i, 0]]).collect();
    let p: Vec<f64> = (0..n_cl).map(|i| out[[i, 1]] * cfg.pressure_scale).collect();

    // artery embedding
    let fw = fused.ncols();
    let (embedding, max_idx) = if cfg.classifier_max_pool {
        let mut emb = vec![f64::NEG_INFINITY; fw];
        let mut idx = vec![0usize; fw];
        for i in 0..n_cl {
            for c in 0..fw {
                if fused[[i, c]] > emb[c] {
                    emb[c] = fused[[i, c]];
                    idx[c] = i;
                }
            }
        }
        (emb, Some(idx))
    } else {
        let mut emb = vec![0.0; fw];
        for i in 0..n_cl {
            for c in 0..fw {
                emb[c] += fused[[i, c]] / n_cl as f64;
            }
        }
        (emb, None)
    };

    Ok((
        Prediction { q, p, embedding },
        Trace {
            levels,
            props,
            concat,
            fusion_y,
            head_y,
            max_idx,
        },
    ))
}

/// Forward pass without keeping the trace.
pub fn forward(
    g: &VascularGraph,
    params: &EncoderParams,
    cfg: &EncoderConfig,
) -> Result<Prediction> {
    let input = model_input_from_graph(g, cfg.n_centerline)?;
    Ok(forward_traced(&input, params, cfg)?.0)
}

/// Backward pass: gradients of a scalar objective with respect to every
/// parameter, given its gradients with respect to predicted q, p, and
/// (optionally) the embedding.
pub fn backward(
    input: &ModelInput,
    params: &EncoderParams,
    cfg: &EncoderConfig,
    trace: &Trace,
    grad_q: &[f64],
    grad_p: &[f64],
    grad_embedding: Option<&[f64]>,
) -> EncoderParams {
    let n_cl = input.cl_pts.len();
    let mut grads = params.zeros_like();

    // head output gradient
    let mut dout = Array2::zeros((n_cl, 2));
    for i in 0..n_cl {
        dout[[i, 0]] = grad_q[i];
        dout[[i, 1]] = grad_p[i] * cfg.pressure_scale;
    }

    // head backward (last layer linear, others rectified)
    let fused = trace.fusion_y.last().unwrap();
    let mut dy = dout;
    for l in (0..params.head.len()).rev() {
        let x_in = if l == 0 { fused } else { &trace.head_y[l - 1] };
        let dz = if l + 1 < params.head.len() {
            relu_backward(&trace.head_y[l], &dy)
        } else {
            dy
        };
        let (dx, dw, db) = params.head[l].backward(x_in, &dz);
        grads.head[l].w += &dw;
        grads.head[l].b += &db;
        dy = dx;
    }
    let mut dfused = dy;

    // embedding path
    if let Some(demb) = grad_embedding {
        match &trace.max_idx {
            Some(idx) => {
                for (c, (&g, &row)) in demb.iter().zip(idx).enumerate() {
                    dfused[[row, c]] += g;
                }
            }
            None => {
                for c in 0..demb.len() {
                    let g = demb[c] / n_cl as f64;
                    for i in 0..n_cl {
                        dfused[[i, c]] += g;
                    }
                }
            }
        }
    }

    // fusion backward (all layers rectified)
    let mut dy = dfused;
    for l in (0..params.fusion.len()).rev() {
        let x_in = if l == 0 {
            &trace.concat
        } else {
            &trace.fusion_y[l - 1]
        };
        let dz = relu_backward(&trace.fusion_y[l], &dy);
        let (dx, dw, db) = params.fusion[l].backward(x_in, &dz);
        grads.fusion[l].w += &dw;
        grads.fusion[l].b += &db;
        dy = dx;
    }
    let dconcat = dy;

    // split the concatenated gradient per level
    let mut dh_levels = Vec::with_capacity(cfg.blocks);
    let mut off = 0;
    for b in 0..cfg.blocks {
        let w = cfg.block_width(b);
        dh_levels.push(dconcat.slice(ndarray::s![.., off..off + w]).to_owned());
        off += w;
    }

    // walk levels top-down; dy_block is the gradient at the block output
    let mut d_from_pool: Option<Array2<f64>> = None;
    for b in (0..cfg.blocks).rev() {
        let level = &trace.levels[b];
        let width = cfg.block_width(b);
        let n_nodes = level.gcn_y.last().unwrap().nrows();
        let mut dy_block = Array2::zeros((n_nodes, width));

        // CA backward
        {
            let dh = &dh_levels[b];
            let k = cfg.k_ca;
            let mut dz = Array2::zeros((n_cl * k, width));
            for i in 0..n_cl {
                for s in 0..k {
                    let src = dh.row(i);
                    let mut dst = dz.row_mut(i * k + s);
                    dst.scaled_add(1.0 / k as f64, &src);
                }
            }
            let dz = relu_backward(&level.ca_z, &dz);
            let (dg, dw, db) = params.ca_mix[b].backward(&level.ca_gather, &dz);
            grads.ca_mix[b].w += &dw;
            grads.ca_mix[b].b += &db;
            for i in 0..n_cl {
                for s in 0..k {
                    let j = level.ca_sel.neighbors[i * k + s];
                    for f in 0..width {
                        dy_block[[j, f]] += dg[[i * k + s, f]];
                    }
                }
            }
        }

        // pooling backward (gradient arriving from the level above)
        if let (Some(dxp), Some(pool)) = (d_from_pool.take(), level.pool.as_ref()) {
            let x = level.gcn_y.last().unwrap();
            let mut dp_hat = Array1::zeros(pool.p_hat.len());
            for (new, &old) in pool.kept.iter().enumerate() {
                let g = pool.gate[new];
                let row_d = dxp.row(new);
                let row_x = x.row(old);
                let dgate = row_d.dot(&row_x);
                let dscore = dgate * (1.0 - g * g);
                {
                    let mut dst = dy_block.row_mut(old);
                    dst.scaled_add(g, &row_d);
                    dst.scaled_add(dscore, &pool.p_hat);
                }
                dp_hat.scaled_add(dscore, &row_x);
            }
            // d/dp of p/‖p‖: project out the radial component
            let radial = dp_hat.dot(&pool.p_hat);
            let dp = (dp_hat - pool.p_hat.mapv(|v| v * radial)) / pool.p_norm;
            grads.pools[b] += &dp;
        }

        // GCN layers backward
        let prop = &trace.props[b];
        let mut dy = dy_block;
        for l in (0..cfg.layers_per_block).rev() {
            let dz = relu_backward(&level.gcn_y[l], &dy);
            let (du, dw, db) = params.blocks[b][l].backward(&level.gcn_u[l], &dz);
            grads.blocks[b][l].w += &dw;
            grads.blocks[b][l].b += &db;
            dy = prop.apply(&du); // S is symmetric
        }
        if b > 0 {
            d_from_pool = Some(dy);
        }
    }

    grads
}

/// Classifier forward on a pooled embedding: tanh hidden layer (saturating,
/// cannot die on small embedding differences), then a logistic output.
pub fn classify(embedding: &[f64], params: &EncoderParams) -> f64 {
    let mut x = Array2::from_shape_vec((1, embedding.len()), embedding.to_vec()).unwrap();
    for (i, lin) in params.classifier.iter().enumerate() {
        x = lin.forward(&x);
        if i + 1 < params.classifier.len() {
            x.mapv_inplace(f64::tanh);
        }
    }
    let logit = x[[0, 0]];
    1.0 / (1.0 + (-logit).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::phantom;
    use crate::graph::build_graph;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn desk_graph() -> VascularGraph {
        let t = phantom::stenotic_tube(20, 4.0, 0.2, 0.5, 0.5, 0.12, 8).unwrap();
        build_graph(&t).unwrap()
    }

    /// Curved geometry: no symmetry ties in neighbor selection and no
    /// exact-zero features to park rectifier inputs on their kink.
    fn generic_graph() -> VascularGraph {
        let t = phantom::helical_tube(20, 4.0, 0.5, 1.3, 0.2, 8).unwrap();
        build_graph(&t).unwrap()
    }

    fn desk_cfg() -> EncoderConfig {
        EncoderConfig {
            d: 4,
            k_ca: 4,
            n_centerline: 20,
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let g = desk_graph();
        let cfg = desk_cfg();
        let params = EncoderParams::init(&cfg).unwrap();
        let a = forward(&g, &params, &cfg).unwrap();
        let b = forward(&g, &params, &cfg).unwrap();
        assert_eq!(a.q.len(), 20);
        assert_eq!(a.p.len(), 20);
        assert_eq!(a.embedding.len(), cfg.fused_width());
        assert_eq!(a, b, "forward must be deterministic");
        assert!(a.q.iter().chain(&a.p).all(|v| v.is_finite()));
    }

    #[test]
    fn output_rows_track_n_centerline() {
        let g = desk_graph();
        let cfg = EncoderConfig {
            n_centerline: 33,
            ..desk_cfg()
        };
        let params = EncoderParams::init(&cfg).unwrap();
        let pred = forward(&g, &params, &cfg).unwrap();
        assert_eq!(pred.q.len(), 33);
    }

    #[test]
    fn zero_params_give_constant_outputs() {
        let g = desk_graph();
        let cfg = desk_cfg();
        let params = EncoderParams::init(&cfg).unwrap();
        let zeroed = {
            let mut z = params.zeros_like();
            // keep a nonzero pooling projection so scoring stays defined
            for (dst, src) in z.pools.iter_mut().zip(&params.pools) {
                dst.assign(src);
            }
            z
        };
        let pred = forward(&g, &zeroed, &cfg).unwrap();
        for w in pred.q.windows(2) {
            assert_eq!(w[0], w[1]);
        }
        for w in pred.p.windows(2) {
            assert_eq!(w[0], w[1]);
        }
    }

    #[test]
    fn permuting_nodes_leaves_predictions_unchanged() {
        let g = generic_graph();
        // n_centerline coprime to the section count keeps every aggregation
        // query strictly between sections: no equidistant ties, so the
        // index tie-break is never exercised and the permuted graph must
        // reproduce the predictions up to float-summation noise.
        let cfg = EncoderConfig {
            n_centerline: 17,
            ..desk_cfg()
        };
        let params = EncoderParams::init(&cfg).unwrap();
        let base = forward(&g, &params, &cfg).unwrap();

        // apply a node permutation to the stored graph
        let n = g.n_nodes();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        // perm[old] = new
        let mut coords = vec![Vec3::zeros(); n];
        let mut feats = vec![[0.0; 5]; n];
        let mut section = vec![0u32; n];
        for old in 0..n {
            coords[perm[old]] = g.node_coords[old];
            feats[perm[old]] = g.node_features[old];
            section[perm[old]] = g.section_of_node[old];
        }
        let edges: Vec<(u32, u32)> = g
            .edges
            .iter()
            .map(|&(a, b)| {
                let (x, y) = (perm[a as usize] as u32, perm[b as usize] as u32);
                (x.min(y), x.max(y))
            })
            .collect();
        let permuted = VascularGraph {
            node_coords: coords,
            node_features: feats,
            edges,
            section_of_node: section,
            centerline: g.centerline.clone(),
        };
        let out = forward(&permuted, &params, &cfg).unwrap();
        let mut worst = 0.0f64;
        for (a, b) in base.p.iter().zip(&out.p) {
            worst = worst.max((a - b).abs() / a.abs().max(1.0));
        }
        for (a, b) in base.q.iter().zip(&out.q) {
            worst = worst.max((a - b).abs() / a.abs().max(1.0));
        }
        println!("worst rel diff under permutation: {worst:.3e}");
        assert!(worst <= 1e-9, "worst rel diff {worst:.3e}");
    }

    /// End-to-end parameter gradients against central finite differences on
    /// a quadratic objective of the outputs.
    #[test]
    fn parameter_gradients_match_finite_differences() {
        let g = generic_graph();
        let cfg = desk_cfg();
        let input = model_input_from_graph(&g, cfg.n_centerline).unwrap();
        let params = EncoderParams::init(&cfg).unwrap();

        // objective: 0.5·Σ q² + 0.5·Σ (p/scale)² + Σ emb
        let objective = |params: &EncoderParams| -> f64 {
            let (pred, _) = forward_traced(&input, params, &cfg).unwrap();
            0.5 * pred.q.iter().map(|v| v * v).sum::<f64>()
                + 0.5 * pred.p.iter().map(|v| (v / cfg.pressure_scale).powi(2)).sum::<f64>()
                + pred.embedding.iter().sum::<f64>()
        };
        let (pred, trace) = forward_traced(&input, &params, &cfg).unwrap();
        let gq: Vec<f64> = pred.q.clone();
        let gp: Vec<f64> = pred.p.iter().map(|v| v / cfg.pressure_scale.powi(2)).collect();
        let gemb = vec![1.0; pred.embedding.len()];
        let grads = backward(&input, &params, &cfg, &trace, &gq, &gp, Some(&gemb));

        let flat = params.flatten();
        let gflat = grads.flatten();
        let mut p2 = params.clone();
        let mut worst = (0.0f64, String::new());
        let mut names = Vec::new();
        params.visit(|name, shape, _| {
            let len: usize = shape.iter().product();
            for k in 0..len {
                names.push(format!("{name}[{k}]"));
            }
        });
        for i in (0..flat.len()).step_by(3) {
            let h = 1e-5 * flat[i].abs().max(1.0);
            let mut fp = flat.clone();
            fp[i] += h;
            p2.assign_from_flat(&fp);
            let up = objective(&p2);
            fp[i] -= 2.0 * h;
            p2.assign_from_flat(&fp);
            let dn = objective(&p2);
            let fd = (up - dn) / (2.0 * h);
            let denom = fd.abs().max(gflat[i].abs()).max(1e-8);
            let rel = (fd - gflat[i]).abs() / denom;
            if rel > 1e-3 {
                println!("MISMATCH {}: analytic {:.6e} fd {:.6e} rel {:.3e}", names[i], gflat[i], fd, rel);
            }
            if rel > worst.0 {
                worst = (rel, names[i].clone());
            }
        }
        assert!(
            worst.0 < 1e-3,
            "worst relative gradient error {} at {} (classifier params excluded from loss)",
            worst.0,
            worst.1
        );
    }

    #[test]
    fn classifier_gradcheck_and_probability_range() {
        let cfg = desk_cfg();
        let params = EncoderParams::init(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let emb: Vec<f64> = (0..cfg.fused_width()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = classify(&emb, &params);
        assert!(p > 0.0 && p < 1.0);
    }
}

