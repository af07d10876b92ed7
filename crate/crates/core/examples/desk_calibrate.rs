//! Scratch harness: desk-scale pretraining calibration.

use arteria::augment::{synthesize, ParamRanges};
use arteria::geometry::phantom;
use arteria::hemo::{HemoConstants, SegmentKind};
use arteria::loss::LossConfig;
use arteria::nn::{
    evaluate_loss, forward_traced, prepare_sample, pretrain, EncoderConfig, EncoderParams,
    OptimConfig, PretrainSample,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn donors() -> Vec<arteria::geometry::DigitalTwin> {
    vec![
        phantom::straight_tube(150, 6.0, 0.20, 16).unwrap(),
        phantom::tapered_tube(150, 7.0, 0.25, 0.15, 16).unwrap(),
        phantom::stenotic_tube(150, 5.5, 0.22, 0.45, 0.40, 0.06, 16).unwrap(),
        phantom::stenotic_tube(150, 6.5, 0.19, 0.55, 0.60, 0.05, 16).unwrap(),
        phantom::stenotic_tube(150, 6.0, 0.21, 0.50, 0.30, 0.07, 16).unwrap(),
        phantom::helical_tube(150, 7.5, 0.8, 1.5, 0.18, 16).unwrap(),
        phantom::helical_tube(150, 6.0, 0.5, 2.2, 0.21, 16).unwrap(),
        phantom::tapered_tube(150, 5.0, 0.22, 0.17, 16).unwrap(),
        phantom::stenotic_tube(150, 7.0, 0.24, 0.40, 0.50, 0.08, 16).unwrap(),
        phantom::helical_tube(150, 6.5, 0.6, 1.0, 0.19, 16).unwrap(),
    ]
}

fn corpus(donors: &[arteria::geometry::DigitalTwin], count: usize, base_seed: u64) -> Vec<PretrainSample> {
    let ranges = ParamRanges {
        bend_amplitude: (0.0, 0.03),
        bend_frequency: (0.5, 1.5),
        smoothing_sigma: (0.0, 2.0),
        radius_noise_sigma: (0.0, 0.03),
        target_n: 100,
        target_k: 16,
    };
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(base_seed + i as u64);
            let p = ranges.draw(&mut rng);
            let dc = &donors[(i * 7 + 3) % donors.len()];
            let dr = &donors[(i * 5 + 1) % donors.len()];
            let mut t = synthesize(dc, dr, &p).unwrap();
            t.meta.id = format!("desk-{i}");
            prepare_sample(&t, 100).unwrap()
        })
        .collect()
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let lr: f64 = args.first().map(|v| v.parse().unwrap()).unwrap_or(0.05);
    let momentum: f64 = args.get(1).map(|v| v.parse().unwrap()).unwrap_or(0.9);
    let epochs: usize = args.get(2).map(|v| v.parse().unwrap()).unwrap_or(40);
    let w_res: f64 = args.get(3).map(|v| v.parse().unwrap()).unwrap_or(1e-8);

    let donors = donors();
    let samples = corpus(&donors, 200, 10_000);
    let held_out = corpus(&donors[2..5], 30, 99_000); // stenotic radius donors

    let cfg = EncoderConfig {
        d: 16,
        k_ca: 8,
        n_centerline: 100,
        seed: 1,
        ..Default::default()
    };
    let loss_cfg = LossConfig {
        weights: (w_res, 1.0, 1.0),
        flow_floor: 1e-3,
        ..Default::default()
    };
    let hemo = HemoConstants::default();
    let mut params = EncoderParams::init(&cfg).unwrap();
    let initial = evaluate_loss(&samples, &params, &cfg, &loss_cfg, &hemo).unwrap();
    println!("initial corpus loss {initial:.6}");

    let t0 = std::time::Instant::now();
    let opt = OptimConfig {
        learning_rate: lr,
        momentum,
        epochs,
        batch_size: 8,
        grad_clip: 1.0,
        seed: 2,
    };
    let records = pretrain(&samples, &mut params, &cfg, &loss_cfg, &hemo, &opt).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    for r in records.iter().step_by(records.len() / 20 + 1) {
        println!(
            "step {:4} epoch {:3} total {:.6} (res {:.3e} glob {:.4} loc {:.4}) |g| {:.3e}",
            r.step, r.epoch, r.total, r.residual, r.global, r.local, r.grad_norm
        );
    }
    let final_loss = evaluate_loss(&samples, &params, &cfg, &loss_cfg, &hemo).unwrap();
    println!(
        "final corpus loss {final_loss:.6}  ratio {:.3}  ({elapsed:.1} s)",
        final_loss / initial
    );

    // held-out stenotic twins: pressure at lesion throat vs inlet
    let mut dips = 0;
    let mut with_lesion = 0;
    for s in &held_out {
        let lesion_throat = s
            .seg
            .segments
            .iter()
            .filter(|seg| seg.kind == SegmentKind::Lesion)
            .flat_map(|seg| (seg.start..=seg.end).map(|i| (i, s.area[i])))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .map(|(i, _)| i);
        let Some(throat) = lesion_throat else { continue };
        with_lesion += 1;
        let (pred, _) = forward_traced(&s.input, &params, &cfg).unwrap();
        if pred.p[throat] < pred.p[0] {
            dips += 1;
        }
    }
    println!(
        "held-out stenotic: {dips}/{with_lesion} have lesion-throat pressure below inlet ({:.1}%)",
        100.0 * dips as f64 / with_lesion.max(1) as f64
    );
}
