// Scratch: trace K growth for one preset/scene.

use splatlab::harness::{apply_preset, calibrate_tau0, run_experiment, ExperimentConfig};
use splatlab::scenes::{GeneratorKind, SceneSpec};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let preset = args.first().cloned().unwrap_or_else(|| "baseline".into());
    let kind = match args.get(1).map(|s| s.as_str()) {
        Some("articulated") => GeneratorKind::ArticulatedTwoPart,
        Some("bouncing") => GeneratorKind::Bouncing,
        _ => GeneratorKind::RigidOrbit,
    };
    let scene = SceneSpec::stock(kind, 7);
    let mut cfg = ExperimentConfig::desk_default(scene, 0);
    apply_preset(&mut cfg, &preset).unwrap();
    let t0 = std::time::Instant::now();
    let tau = calibrate_tau0(&cfg).unwrap();
    eprintln!("tau0 = {tau:.4e} ({} ms)", t0.elapsed().as_millis());
    cfg.adc.base_threshold = Some(tau);
    let t1 = std::time::Instant::now();
    let out = run_experiment(&cfg).unwrap();
    let r = &out.record;
    for w in r.k_trajectory.windows(2) {
        if w[1].0 / 150 != w[0].0 / 150 || w[1].0 == r.iterations {
            eprintln!("iter {:5} K {:6}", w[1].0, w[1].1);
        }
    }
    eprintln!(
        "final: K={} train={:.2} test={:.2} gap={:.2} strain={:.3e} in {} ms",
        r.final_k, r.train_psnr, r.test_psnr, r.gap, r.mean_strain,
        t1.elapsed().as_millis()
    );
    let splits = out.audit.iter().filter(|e| matches!(e.op, splatlab::adc::AdcOp::Split)).count();
    let clones = out.audit.iter().filter(|e| matches!(e.op, splatlab::adc::AdcOp::Clone)).count();
    let prunes = out.audit.iter().filter(|e| matches!(e.op, splatlab::adc::AdcOp::Prune)).count();
    eprintln!("events: {splits} splits, {clones} clones, {prunes} prunes");
}
