//! Subcommand implementations. Each command is deterministic given
//! (config, seed, inputs) and never mutates its input dataset directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use ossod_core::config::ExperimentConfig;
use ossod_core::evalkit::{
    ablation_csv, evaluate, evaluate_oracle, run_ablation, run_sensitivity_sweep, sweep_csv,
    EvalReport, SweepTable,
};
use ossod_core::metrics::read_metrics;
use ossod_core::scenes::{generate_pools, io as dataset_io, pool_statistics, SamplePools};
use ossod_core::trainer::{
    load_checkpoint, read_checkpoint_header, run_training, RunContext, TrainerState,
};

use crate::chart;

fn load_dataset(cfg: &ExperimentConfig) -> Result<SamplePools> {
    let pools = dataset_io::load_pools(&cfg.dataset.dir).with_context(|| {
        format!(
            "loading dataset from {} (run `ossod gen-data` first?)",
            cfg.dataset.dir.display()
        )
    })?;
    Ok(pools)
}

fn print_pool_stats(name: &str, pools: &SamplePools, scenes: &[ossod_core::scenes::Scene]) {
    let stats = pool_statistics(scenes, &pools.vocab);
    println!(
        "{name}: {} scenes, {} objects, contamination {:.3}",
        stats.scenes, stats.total_objects, stats.contamination_rate
    );
    for (cat, count) in &stats.objects_per_category {
        if *count > 0 {
            println!("    {cat}: {count}");
        }
    }
}

pub fn gen_data(cfg: &ExperimentConfig) -> Result<()> {
    let pools = generate_pools(&cfg.dataset, cfg.seed)?;
    dataset_io::write_pools(&cfg.dataset.dir, &pools)?;
    println!("dataset written to {}", cfg.dataset.dir.display());
    print_pool_stats("labeled", &pools, &pools.labeled);
    print_pool_stats("unlabeled", &pools, &pools.unlabeled);
    print_pool_stats("test", &pools, &pools.test);
    Ok(())
}

pub fn train(cfg: &ExperimentConfig) -> Result<()> {
    let pools = load_dataset(cfg)?;
    let det = cfg.effective_detector();
    fs::create_dir_all(&cfg.output_dir)?;

    // Refuse to resume a checkpoint from a different trajectory: the run
    // would silently diverge from both configs.
    let ckpt = cfg.output_dir.join("state.ckpt");
    if ckpt.exists() {
        let (echo, iteration) = read_checkpoint_header(&ckpt)?;
        if let Ok(stored) = serde_json::from_str::<ExperimentConfig>(&echo) {
            if stored.trajectory_fingerprint() != cfg.trajectory_fingerprint() {
                bail!(ossod_core::Error::Config(format!(
                    "checkpoint at {} was trained with a different configuration; \
                     refusing to resume (delete it or change output_dir)",
                    ckpt.display()
                )));
            }
        }
        if iteration >= cfg.train.total_iterations {
            println!(
                "checkpoint already at iteration {iteration} >= total {}; nothing to do",
                cfg.train.total_iterations
            );
            return Ok(());
        }
        println!("resuming from iteration {iteration}");
    }

    let ctx = RunContext { output_dir: Some(&cfg.output_dir), config_echo: cfg.echo() };
    let out = run_training::<f32>(&pools, &det, &cfg.train, &cfg.eval, cfg.seed, &ctx)?;
    println!(
        "trained to iteration {} ({} metric records); checkpoint at {}",
        out.state.iteration,
        out.metrics.len(),
        ckpt.display()
    );
    if let Some(map) = out.final_map {
        println!("final teacher mAP@0.5: {map:.4}");
    }
    log::info!("diagnostics: {:?}", out.diagnostics);
    Ok(())
}

fn print_report(report: &EvalReport) {
    println!("mAP@0.5: {:.4}", report.map);
    for c in &report.per_category {
        match c.ap {
            Some(ap) => println!(
                "    {}: AP {:.4} ({} gt, {} detections)",
                c.name, ap, c.gt_count, c.detection_count
            ),
            None => println!("    {}: no ground truth, excluded", c.name),
        }
    }
}

pub fn eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>, oracle: bool) -> Result<()> {
    let pools = load_dataset(cfg)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let (report, out_name) = if oracle {
        (evaluate_oracle(&pools.test, &pools.vocab, &cfg.eval, cfg.seed)?, "eval_oracle.json")
    } else {
        let ckpt: PathBuf =
            checkpoint.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.join("state.ckpt"));
        let (state, _): (TrainerState<f32>, _) =
            load_checkpoint(&ckpt, &cfg.effective_detector())?;
        println!("evaluating teacher from {} (iteration {})", ckpt.display(), state.iteration);
        (evaluate(&state.teacher, &pools.test, &pools.vocab, &cfg.eval, cfg.seed)?, "eval.json")
    };
    print_report(&report);
    let path = cfg.output_dir.join(out_name);
    fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    println!("report written to {}", path.display());
    Ok(())
}

pub fn ablate(cfg: &ExperimentConfig, num_seeds: usize) -> Result<()> {
    let pools = load_dataset(cfg)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let seeds: Vec<u64> = (0..num_seeds as u64).map(|i| cfg.seed + i).collect();
    println!("running 6 ablation rows x {} seed(s) {:?}", seeds.len(), seeds);
    let table = run_ablation::<f32>(
        &pools,
        &cfg.effective_detector(),
        &cfg.train,
        &cfg.eval,
        &seeds,
    )?;
    for row in &table.rows {
        println!(
            "({}) flexible={} imt={} dbn={}: mAP mean {:.4} (min {:.4}, max {:.4}){}",
            row.index,
            row.flexible_labels,
            row.interactive_teaching,
            row.dbn,
            row.map_mean,
            row.map_min,
            row.map_max,
            row.failure.as_deref().map(|f| format!("  FAILED: {f}")).unwrap_or_default()
        );
    }
    fs::write(cfg.output_dir.join("ablation.json"), serde_json::to_string_pretty(&table)?)?;
    fs::write(cfg.output_dir.join("ablation.csv"), ablation_csv(&table))?;
    println!("tables written to {}", cfg.output_dir.display());
    Ok(())
}

pub fn sweep(cfg: &ExperimentConfig, tau_up: &[f64], tau_low: &[f64]) -> Result<()> {
    let pools = load_dataset(cfg)?;
    fs::create_dir_all(&cfg.output_dir)?;
    println!(
        "sweeping tau_up over {tau_up:?} (tau_low {}) and tau_low over {tau_low:?} (tau_up {})",
        cfg.train.tau_low, cfg.train.tau_up
    );
    let table = run_sensitivity_sweep::<f32>(
        &pools,
        &cfg.effective_detector(),
        &cfg.train,
        &cfg.eval,
        tau_up,
        tau_low,
        cfg.seed,
    )?;
    for p in &table.points {
        match (p.map, &p.annotation) {
            (Some(m), _) => println!("tau_up {:.2} tau_low {:.2}: mAP {m:.4}", p.tau_up, p.tau_low),
            (None, Some(a)) => println!("tau_up {:.2} tau_low {:.2}: {a}", p.tau_up, p.tau_low),
            _ => {}
        }
    }
    fs::write(cfg.output_dir.join("sweep.json"), serde_json::to_string_pretty(&table)?)?;
    fs::write(cfg.output_dir.join("sweep.csv"), sweep_csv(&table))?;
    println!("tables written to {}", cfg.output_dir.display());
    Ok(())
}

pub fn plot(cfg: &ExperimentConfig) -> Result<()> {
    let plots = cfg.output_dir.join("plots");
    fs::create_dir_all(&plots)?;
    let mut made = 0usize;

    let metrics_path = cfg.output_dir.join("metrics.jsonl");
    if metrics_path.exists() {
        let (records, skipped) = read_metrics(&metrics_path)?;
        if skipped > 0 {
            eprintln!("warning: skipped {skipped} malformed metrics line(s)");
        }
        let series = |f: fn(&ossod_core::metrics::MetricsRecord) -> f64, name: &str| {
            (
                name.to_string(),
                records.iter().map(|r| (r.iteration as f64, f(r))).collect::<Vec<_>>(),
            )
        };
        chart::line_chart(
            &plots.join("loss_curves.png"),
            "TRAINING LOSSES",
            "ITERATION",
            "LOSS",
            &[
                series(|r| r.losses.total, "TOTAL"),
                series(|r| r.losses.sup_rpn_cls + r.losses.sup_rpn_reg, "SUP RPN"),
                series(|r| r.losses.sup_roi_cls + r.losses.sup_roi_reg, "SUP ROI"),
                series(
                    |r| r.losses.unsup_rpn_cls + r.losses.unsup_rpn_reg,
                    "UNSUP RPN",
                ),
                series(|r| r.losses.unsup_roi_cls + r.losses.unsup_roi_reg, "UNSUP ROI"),
            ],
        )?;
        made += 1;

        let map_points: Vec<(f64, f64)> = records
            .iter()
            .filter_map(|r| r.map.map(|m| (r.iteration as f64, m)))
            .collect();
        if !map_points.is_empty() {
            chart::line_chart(
                &plots.join("map_curve.png"),
                "TEACHER MAP AT 0.5 IOU",
                "ITERATION",
                "MAP",
                &[("MAP".to_string(), map_points)],
            )?;
            made += 1;
        }
    }

    let ablation_path = cfg.output_dir.join("ablation.json");
    if ablation_path.exists() {
        let table: ossod_core::evalkit::AblationTable =
            serde_json::from_str(&fs::read_to_string(&ablation_path)?)?;
        let bars: Vec<(String, f64)> = table
            .rows
            .iter()
            .map(|r| {
                let mut label = format!("({})", r.index);
                if r.flexible_labels {
                    label.push_str(" FL");
                }
                if r.interactive_teaching {
                    label.push_str(" IMT");
                }
                if r.dbn {
                    label.push_str(" DBN");
                }
                (label, r.map_mean)
            })
            .collect();
        chart::bar_chart(&plots.join("ablation_map.png"), "ABLATION MAP", "ROW", "MAP", &bars)?;
        made += 1;
    }

    let sweep_path = cfg.output_dir.join("sweep.json");
    if sweep_path.exists() {
        let table: SweepTable = serde_json::from_str(&fs::read_to_string(&sweep_path)?)?;
        let bars: Vec<(String, f64)> = table
            .points
            .iter()
            .filter_map(|p| {
                p.map.map(|m| (format!("{:.2}/{:.2}", p.tau_up, p.tau_low), m))
            })
            .collect();
        if !bars.is_empty() {
            chart::bar_chart(
                &plots.join("sweep_map.png"),
                "THRESHOLD SENSITIVITY",
                "TAU UP / TAU LOW",
                "MAP",
                &bars,
            )?;
            made += 1;
        }
    }

    if made == 0 {
        bail!("nothing to plot: no metrics.jsonl, ablation.json or sweep.json under {}",
            cfg.output_dir.display());
    }
    println!("{made} figure(s) written to {}", plots.display());
    Ok(())
}
