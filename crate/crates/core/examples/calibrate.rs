// Calibration harness: train one configuration on the default benchmark and
// print the final teacher mAP. Arguments: <mode> <seed> [iters] where mode is
// "full", "baseline", or row1|row2|...|row6.
use ossod_core::detector::DetectorConfig;
use ossod_core::evalkit::{evaluate, row_config, EvalConfig, ABLATION_ROWS};
use ossod_core::norm::NormKind;
use ossod_core::scenes::{generate_pools, DatasetConfig};
use ossod_core::trainer::{init_trainer_state, run_training, RunContext, TrainConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(String::as_str).unwrap_or("full");
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(7);
    let iters: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(4000);

    let dcfg = DatasetConfig::default();
    let pools = generate_pools(&dcfg, 1000 + seed).unwrap();

    let base_train = TrainConfig {
        total_iterations: iters,
        eval_every: 0,
        checkpoint_every: 0,
        log_every: 200,
        ..Default::default()
    };
    let base_det = DetectorConfig::default();

    let (tcfg, det) = match mode {
        "full" => row_config(&base_train, &base_det, ABLATION_ROWS[5]),
        "baseline" => (
            TrainConfig { lambda: 0.0, dbn: false, ..base_train.clone() },
            DetectorConfig { norm: NormKind::Batch, ..base_det.clone() },
        ),
        m if m.starts_with("row") => {
            let r: usize = m[3..].parse().unwrap();
            row_config(&base_train, &base_det, ABLATION_ROWS[r - 1])
        }
        m if m.starts_with("tau:") => {
            let mut parts = m[4..].split(',');
            let tau_up: f64 = parts.next().unwrap().parse().unwrap();
            let tau_low: f64 = parts.next().unwrap().parse().unwrap();
            let (t, d) = row_config(&base_train, &base_det, ABLATION_ROWS[5]);
            (TrainConfig { tau_up, tau_low, ..t }, d)
        }
        _ => panic!("unknown mode {mode}"),
    };

    let ecfg = EvalConfig::default();
    let init = init_trainer_state::<f32>(&pools, &det, &tcfg, seed).unwrap();
    let r0 = evaluate(&init.teacher, &pools.test, &pools.vocab, &ecfg, seed).unwrap();

    let t = Instant::now();
    let out = run_training::<f32>(&pools, &det, &tcfg, &ecfg, seed, &RunContext::default()).unwrap();
    println!(
        "{mode} seed {seed} iters {iters}: map0 {:.4} -> map {:.4}  ({:.0}s, diag {:?})",
        r0.map,
        out.final_map.unwrap(),
        t.elapsed().as_secs_f64(),
        out.diagnostics,
    );
    for rec in out.metrics.iter().rev().take(3).rev() {
        println!(
            "  it {}: total {:.3} sup {:.3}/{:.3}/{:.3}/{:.3} unsup {:.3}/{:.3}/{:.3}",
            rec.iteration,
            rec.losses.total,
            rec.losses.sup_rpn_cls,
            rec.losses.sup_rpn_reg,
            rec.losses.sup_roi_cls,
            rec.losses.sup_roi_reg,
            rec.losses.unsup_rpn_cls,
            rec.losses.unsup_rpn_reg,
            rec.losses.unsup_roi_cls,
        );
    }
}
