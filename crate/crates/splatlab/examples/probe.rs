// Scratch probe for tuning desk defaults; prints per-preset outcomes.

use splatlab::harness::{apply_preset, calibrate_tau0, run_experiment, ExperimentConfig};
use splatlab::scenes::{GeneratorKind, SceneSpec};

fn main() {
    let presets: Vec<String> = std::env::args().skip(1).collect();
    let presets = if presets.is_empty() {
        vec![
            "baseline".to_string(),
            "a1".into(),
            "a2".into(),
            "a7".into(),
            "a8".into(),
            "gad".into(),
            "eer_strain".into(),
            "eer_no_norm".into(),
            "eer_on_embed".into(),
        ]
    } else {
        presets
    };
    for kind in [
        GeneratorKind::RigidOrbit,
        GeneratorKind::ArticulatedTwoPart,
        GeneratorKind::Bouncing,
    ] {
        let scene = SceneSpec::stock(kind, 7);
        let base = ExperimentConfig::desk_default(scene.clone(), 0);
        let tau = calibrate_tau0(&base).unwrap();
        println!("== scene {} tau0={tau:.3e}", scene.name);
        for preset in &presets {
            for seed in [0u64, 1] {
                let mut cfg = ExperimentConfig::desk_default(scene.clone(), seed);
                apply_preset(&mut cfg, preset).unwrap();
                cfg.adc.base_threshold = Some(tau);
                let t0 = std::time::Instant::now();
                match run_experiment(&cfg) {
                    Ok(out) => {
                        let r = &out.record;
                        println!(
                            "{:12} s{} K={:5} train={:6.2} test={:6.2} gap={:6.2} strain={:9.3e} med={:9.3e} {}ms{}",
                            preset, seed, r.final_k, r.train_psnr, r.test_psnr, r.gap,
                            r.mean_strain, r.median_strain,
                            t0.elapsed().as_millis(),
                            if r.diverged { " DIVERGED" } else { "" },
                        );
                    }
                    Err(e) => println!("{preset:12} s{seed} ERROR: {e}"),
                }
            }
        }
    }
}
