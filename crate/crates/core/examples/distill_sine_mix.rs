//! Distill 6000 training samples of a sine mixture into 384 and check how
//! well a forecaster trained on the result does, next to a random slice.

use tsdistill::data::{apply_norm, fit_norm, split, SplitSpec};
use tsdistill::distill::{baseline_random, distill, init_rng, DistillConfig};
use tsdistill::eval::{evaluate_distilled, EvalSettings};
use tsdistill::forecaster::{ModelKind, WindowBatch};
use tsdistill::synth::{generate, sine_mix_fixture};

fn main() -> tsdistill::Result<()> {
    let iters: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(100);
    let series = generate(&sine_mix_fixture())?;
    let (train, val, test) = split(&series, &SplitSpec::ett())?;
    let stats = fit_norm(&train)?;
    let (train, val, test) = (apply_norm(&train, &stats)?, apply_norm(&val, &stats)?, apply_norm(&test, &stats)?);

    let cfg = DistillConfig { lambda: 1e-5, eta: 1e4, window_eta: 10.0, outer_max_iters: iters, patience: 0, ..Default::default() };
    let result = distill(&train, &val, &cfg)?;
    for row in result.history.iter().filter(|r| r.val_mse.is_some()) {
        println!(
            "iter {:>4}: harmonic {:>8.2} trajectory {:.4} val {:.4}",
            row.iteration,
            row.harmonic,
            row.trajectory,
            row.val_mse.unwrap_or(f64::NAN)
        );
    }

    let settings = EvalSettings { repeats: 1, seed: 7, ..Default::default() };
    let val_b = WindowBatch::from_series(&val, 96, 96)?;
    let test_b = WindowBatch::from_series(&test, 96, 96)?;
    let score = |s| evaluate_distilled(s, &val_b, &test_b, ModelKind::Linear, &settings, &settings.seeds()).map(|o| o.mean);
    let random = baseline_random(&train, cfg.length, &mut init_rng(cfg.seed))?;
    println!("test mse: distilled {:.4}, random slice {:.4}", score(&result.synthetic)?, score(&random)?);
    Ok(())
}
