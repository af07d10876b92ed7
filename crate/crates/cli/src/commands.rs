//! Subcommand implementations. Each returns the process exit code:
//! 0 success, 1 validation/runtime failure, 2 usage error (argument and
//! config problems exit earlier, in `main`).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use arteria::augment::{synthesize, ParamRanges};
use arteria::graph::build_graph;
use arteria::hemo::{derive_segments, pressure_profile, total_drop, SegmentKind};
use arteria::io::{export_ply, graph_to_json, load_twin, save_twin};
use arteria::metrics::{auprc, auroc, confusion_metrics, decision_curve, pr_points, roc_points, EvalSet};
use arteria::nn::{
    finetune, load_checkpoint, model_input_from_graph, prepare_sample, pretrain, save_checkpoint,
    EncoderParams,
};
use arteria::MMHG;
use rand::{Rng, SeedableRng};

use crate::config::{
    expand_twin_paths, EvalConfig, FinetuneConfig, GraphConfig, HemoConfig, PretrainConfig,
    RunConfig, SynthConfig,
};

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_effective_config(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    cfg.save(&out_dir.join("effective-config.toml"))
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

pub fn cmd_synth(run: &RunConfig, cfg: &SynthConfig) -> Result<i32> {
    let donors = if cfg.count > 0 || !cfg.donors.is_empty() {
        expand_twin_paths(&cfg.donors).context("resolving donors")?
    } else {
        Vec::new()
    };
    ensure_dir(&cfg.out_dir)?;
    write_effective_config(run, &cfg.out_dir)?;

    let manifest_path = cfg.out_dir.join("manifest.jsonl");
    if cfg.count == 0 {
        fs::write(&manifest_path, "")?;
        println!("synth: wrote 0 twins to {}", cfg.out_dir.display());
        return Ok(0);
    }

    let mut loaded = Vec::with_capacity(donors.len());
    for p in &donors {
        let mut t = load_twin(p).with_context(|| format!("loading donor {}", p.display()))?;
        if t.meta.id.is_empty() {
            t.meta.id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        }
        loaded.push(t);
    }

    let ranges = ParamRanges {
        bend_amplitude: cfg.bend_amplitude,
        bend_frequency: cfg.bend_frequency,
        smoothing_sigma: cfg.smoothing_sigma,
        radius_noise_sigma: cfg.radius_noise_sigma,
        target_n: cfg.target_n,
        target_k: cfg.target_k,
    };

    // per-twin derived seeds keep the corpus identical under any job count
    let results: Vec<(String, String)> = (0..cfg.count)
        .into_par_iter()
        .map(|i| -> Result<(String, String)> {
            let mut rng =
                rand_chacha::ChaCha8Rng::seed_from_u64(run.seed.wrapping_add(i as u64));
            let dc = &loaded[rng.random_range(0..loaded.len())];
            let dr = &loaded[rng.random_range(0..loaded.len())];
            let params = ranges.draw(&mut rng);
            let mut twin = synthesize(dc, dr, &params)
                .with_context(|| format!("synthesizing twin {i}"))?;
            twin.meta.id = format!("synth-{:08}-{i:06}", run.seed);
            let path = cfg.out_dir.join(format!("{}.json", twin.meta.id));
            save_twin(&twin, &path)?;
            let meta_line = serde_json::to_string(&twin.meta)?;
            Ok((twin.meta.id, meta_line))
        })
        .collect::<Result<_>>()?;

    let mut manifest = fs::File::create(&manifest_path)?;
    for (_, line) in &results {
        writeln!(manifest, "{line}")?;
    }
    println!("synth: wrote {} twins to {}", results.len(), cfg.out_dir.display());
    Ok(0)
}

// ---------------------------------------------------------------------------
// graph
// ---------------------------------------------------------------------------

pub fn cmd_graph(run: &RunConfig, cfg: &GraphConfig) -> Result<i32> {
    let twins = expand_twin_paths(&cfg.twins)?;
    ensure_dir(&cfg.out_dir)?;
    write_effective_config(run, &cfg.out_dir)?;
    for path in &twins {
        let twin = load_twin(path)?;
        let graph = build_graph(&twin)?;
        let stem = path.file_stem().unwrap_or_default().to_string_lossy();
        let out = cfg.out_dir.join(format!("{stem}.graph.json"));
        fs::write(&out, graph_to_json(&graph)?)?;
        println!(
            "graph: {} -> {} ({} nodes, {} edges)",
            path.display(),
            out.display(),
            graph.n_nodes(),
            graph.edges.len()
        );
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// hemo
// ---------------------------------------------------------------------------

pub fn cmd_hemo(run: &RunConfig, cfg: &HemoConfig) -> Result<i32> {
    let twins = expand_twin_paths(&cfg.twins)?;
    ensure_dir(&cfg.out_dir)?;
    write_effective_config(run, &cfg.out_dir)?;
    let constants = cfg.constants();
    let p_in = cfg.inlet_pressure();

    let mut summary = String::from("twin,status,flow_cm3_s,dp_dyne_cm2,dp_mmhg,min_ffr,lesion_count\n");
    for (idx, path) in twins.iter().enumerate() {
        let twin = load_twin(path)?;
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let q = cfg.flow.unwrap_or_else(|| {
            let mut rng =
                rand_chacha::ChaCha8Rng::seed_from_u64(run.seed.wrapping_add(idx as u64));
            let (lo, hi) = cfg.flow_range;
            if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        });
        let seg = derive_segments(&twin);
        match pressure_profile(&twin, &seg, q, p_in, &constants) {
            Ok(profile) => {
                let drop = total_drop(&twin, &seg, q, &constants)?;
                let min_ffr = profile.ffr.iter().cloned().fold(f64::INFINITY, f64::min);
                let arc = twin.centerline.arc_length();
                let mut csv = String::from(
                    "index,s_cm,area_cm2,q_cm3_s,p_dyne_cm2,p_mmhg,ffr,segment\n",
                );
                for i in 0..profile.p.len() {
                    let kind = if i + 1 < profile.p.len() {
                        seg.kind_of_interval(i)
                    } else {
                        seg.kind_of_interval(i - 1)
                    };
                    csv.push_str(&format!(
                        "{},{},{},{},{},{},{},{}\n",
                        i,
                        arc[i],
                        profile.area[i],
                        profile.q[i],
                        profile.p[i],
                        profile.p[i] / MMHG,
                        profile.ffr[i],
                        match kind {
                            SegmentKind::Healthy => "healthy",
                            SegmentKind::Lesion => "lesion",
                        }
                    ));
                }
                fs::write(cfg.out_dir.join(format!("{stem}.csv")), csv)?;
                summary.push_str(&format!(
                    "{stem},ok,{q},{drop},{},{min_ffr},{}\n",
                    drop / MMHG,
                    seg.lesion_count()
                ));
            }
            Err(e) => {
                eprintln!("hemo: {} flagged: {e}", path.display());
                summary.push_str(&format!("{stem},non_physiological,{q},,,,\n"));
            }
        }
    }
    fs::write(cfg.out_dir.join("summary.csv"), summary)?;
    println!("hemo: profiles written to {}", cfg.out_dir.display());
    Ok(0)
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

pub fn cmd_pretrain(run: &RunConfig, cfg: &PretrainConfig) -> Result<i32> {
    let twins = expand_twin_paths(std::slice::from_ref(&cfg.twin_dir))?;
    ensure_dir(&cfg.out_dir)?;
    write_effective_config(run, &cfg.out_dir)?;

    let encoder_cfg = cfg.encoder_config(run.seed);
    let loss_cfg = cfg.loss_config();
    let constants = cfg.constants();
    let optim = cfg.optim(run.seed);

    let samples = twins
        .par_iter()
        .map(|path| {
            let twin = load_twin(path)?;
            prepare_sample(&twin, encoder_cfg.n_centerline)
                .map_err(|e| anyhow::anyhow!("preparing {}: {e}", path.display()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut params = EncoderParams::init(&encoder_cfg)?;
    let records = pretrain(&samples, &mut params, &encoder_cfg, &loss_cfg, &constants, &optim)?;

    save_checkpoint(&cfg.out_dir.join("checkpoint.json"), &encoder_cfg, &params)?;
    let mut log = fs::File::create(cfg.out_dir.join("training-log.jsonl"))?;
    for r in &records {
        writeln!(log, "{}", serde_json::to_string(r)?)?;
    }
    if let (Some(first), Some(last)) = (records.first(), records.last()) {
        println!(
            "pretrain: {} steps over {} twins, loss {:.6} -> {:.6}",
            records.len(),
            samples.len(),
            first.total,
            last.total
        );
    } else {
        println!("pretrain: no steps run (epochs = 0); checkpoint is the initialization");
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// finetune
// ---------------------------------------------------------------------------

fn read_labels(path: &Path) -> Result<Vec<(PathBuf, bool)>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading labels {}", path.display()))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("path")) {
            continue;
        }
        let (p, l) = line
            .rsplit_once(',')
            .with_context(|| format!("labels line {} is not `path,label`", lineno + 1))?;
        let label = match l.trim() {
            "0" => false,
            "1" => true,
            other => bail!("labels line {}: label must be 0 or 1, got {other}", lineno + 1),
        };
        out.push((PathBuf::from(p.trim()), label));
    }
    if out.is_empty() {
        bail!("labels file {} holds no rows", path.display());
    }
    Ok(out)
}

pub fn cmd_finetune(run: &RunConfig, cfg: &FinetuneConfig) -> Result<i32> {
    ensure_dir(&cfg.out_dir)?;
    write_effective_config(run, &cfg.out_dir)?;
    let (encoder_cfg, mut params) = load_checkpoint(&cfg.checkpoint)?;
    params.check_shapes(&encoder_cfg)?;
    let labeled_paths = read_labels(&cfg.labels)?;

    let labeled = labeled_paths
        .par_iter()
        .map(|(path, label)| {
            let twin = load_twin(path)?;
            let graph = build_graph(&twin)?;
            let input = model_input_from_graph(&graph, encoder_cfg.n_centerline)?;
            Ok((input, *label))
        })
        .collect::<Result<Vec<_>>>()?;

    let optim = arteria::nn::OptimConfig {
        learning_rate: cfg.learning_rate,
        momentum: cfg.momentum,
        epochs: cfg.epochs,
        batch_size: labeled.len().max(1),
        grad_clip: 0.0,
        seed: run.seed,
    };
    let result = finetune(&labeled, &mut params, &encoder_cfg, &optim)?;

    save_checkpoint(&cfg.out_dir.join("classifier.json"), &encoder_cfg, &params)?;
    let mut log = fs::File::create(cfg.out_dir.join("finetune-log.jsonl"))?;
    for r in &result.records {
        writeln!(log, "{}", serde_json::to_string(r)?)?;
    }
    let mut csv = String::from("path,probability,label\n");
    for ((path, label), prob) in labeled_paths.iter().zip(&result.probabilities) {
        csv.push_str(&format!(
            "{},{},{}\n",
            path.display(),
            prob,
            if *label { 1 } else { 0 }
        ));
    }
    fs::write(cfg.out_dir.join("predictions.csv"), csv)?;
    let final_acc = result.records.last().map(|r| r.accuracy).unwrap_or(f64::NAN);
    println!(
        "finetune: {} twins, final training accuracy {final_acc:.3}",
        labeled.len()
    );
    Ok(0)
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn read_predictions(path: &Path) -> Result<EvalSet> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading predictions {}", path.display()))?;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("path")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 {
            bail!("predictions line {} is not `path,probability,label`", lineno + 1);
        }
        scores.push(fields[fields.len() - 2].trim().parse::<f64>()?);
        labels.push(fields[fields.len() - 1].trim() == "1");
    }
    EvalSet::new(scores, labels).map_err(|e| anyhow::anyhow!("{e}"))
}

pub fn cmd_eval(run: &RunConfig, cfg: &EvalConfig) -> Result<i32> {
    ensure_dir(&cfg.out_dir)?;
    write_effective_config(run, &cfg.out_dir)?;
    let eval = read_predictions(&cfg.predictions)?;

    let m = confusion_metrics(&eval, cfg.threshold);
    let auroc_v = auroc(&eval)?;
    let auprc_v = auprc(&eval)?;
    let metrics_csv = format!(
        "metric,value\nauroc,{auroc_v}\nauprc,{auprc_v}\naccuracy,{}\nf1,{}\ntp,{}\nfp,{}\ntn,{}\nfn,{}\n",
        m.accuracy, m.f1, m.tp, m.fp, m.tn, m.fn_
    );
    fs::write(cfg.out_dir.join("metrics.csv"), metrics_csv)?;

    let mut roc = String::from("fpr,tpr\n");
    for (fpr, tpr) in roc_points(&eval)? {
        roc.push_str(&format!("{fpr},{tpr}\n"));
    }
    fs::write(cfg.out_dir.join("roc.csv"), roc)?;

    let mut pr = String::from("recall,precision\n");
    for (r, p) in pr_points(&eval)? {
        pr.push_str(&format!("{r},{p}\n"));
    }
    fs::write(cfg.out_dir.join("pr.csv"), pr)?;

    let mut dc = String::from("pt,model,treat_all,treat_none\n");
    for (pt, nb) in decision_curve(&eval)? {
        dc.push_str(&format!("{pt},{},{},{}\n", nb.model, nb.treat_all, nb.treat_none));
    }
    fs::write(cfg.out_dir.join("decision_curve.csv"), dc)?;

    println!(
        "eval: auroc {auroc_v:.4}  auprc {auprc_v:.4}  accuracy {:.4}  f1 {:.4}",
        m.accuracy, m.f1
    );
    Ok(0)
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

pub fn cmd_validate(paths: &[PathBuf]) -> Result<i32> {
    let twins = expand_twin_paths(paths)?;
    let mut failures = 0usize;
    for path in &twins {
        match load_twin(path) {
            Ok(twin) => {
                let errs = if twin.meta.augment.is_some() {
                    twin.validate_synthetic()
                } else {
                    twin.validate()
                };
                if errs.is_empty() {
                    println!("PASS {}", path.display());
                } else {
                    failures += 1;
                    println!("FAIL {}: {}", path.display(), errs.join("; "));
                }
            }
            Err(e) => {
                failures += 1;
                println!("FAIL {}: {e}", path.display());
            }
        }
    }
    if failures > 0 {
        eprintln!("validate: {failures} of {} files failed", twins.len());
        Ok(1)
    } else {
        println!("validate: all {} files pass", twins.len());
        Ok(0)
    }
}

// ---------------------------------------------------------------------------
// export-ply
// ---------------------------------------------------------------------------

pub fn cmd_export_ply(twin_path: &Path, out: &Path, channel: &str) -> Result<i32> {
    let twin = load_twin(twin_path)?;
    let k = twin.section_k();
    let values: Vec<f64> = match channel {
        "area" => twin
            .section_areas()?
            .iter()
            .flat_map(|a| std::iter::repeat_n(*a, k))
            .collect(),
        "radius" => twin
            .radii
            .values()
            .iter()
            .flat_map(|r| std::iter::repeat_n(*r, k))
            .collect(),
        other => bail!("unknown channel {other}; expected area or radius"),
    };
    export_ply(&twin, channel, &values, out)?;
    println!("export-ply: {} -> {}", twin_path.display(), out.display());
    Ok(0)
}

