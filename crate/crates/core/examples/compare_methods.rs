//! Compare every synthesis method on a small problem and write the report
//! as CSV and JSON.

use tsdistill::data::{apply_norm, fit_norm, split, SplitSpec};
use tsdistill::distill::DistillConfig;
use tsdistill::eval::{emit_report, run_comparison, ComparisonConfig, EvalSettings, Method, ReportFormat};
use tsdistill::forecaster::{EarlyStopping, ModelKind};
use tsdistill::synth::{generate, sine_mix_fixture, SineMixSpec};

fn main() -> tsdistill::Result<()> {
    let spec = SineMixSpec { length: 2048, ..sine_mix_fixture() };
    let series = generate(&spec)?;
    let (train, val, test) = split(&series, &SplitSpec::ett())?;
    let stats = fit_norm(&train)?;
    let (train, val, test) = (apply_norm(&train, &stats)?, apply_norm(&val, &stats)?, apply_norm(&test, &stats)?);

    let cfg = ComparisonConfig {
        dataset: "sine_mix_small".into(),
        methods: Method::ALL.to_vec(),
        eval_models: vec![ModelKind::Linear, ModelKind::decomp()],
        distill: DistillConfig {
            length: 192,
            lookback: 48,
            horizon: 48,
            lambda: 1e-5,
            eta: 2e3,
            window_eta: 2.0,
            outer_max_iters: 60,
            eval_every: 20,
            ..Default::default()
        },
        eval: EvalSettings {
            lookback: 48,
            horizon: 48,
            repeats: 2,
            schedule: EarlyStopping { max_epochs: 50, ..Default::default() },
            seed: 0,
        },
        record_runtime: true,
    };
    let report = run_comparison(&train, &val, &test, &cfg)?;
    for e in &report.entries {
        println!("{:<10} {:<14} {:.4} +- {:.4} ({:.1}s)", e.method, e.eval_model, e.mse_mean, e.mse_std, e.runtime_s);
    }
    let dir = std::env::temp_dir();
    for format in [ReportFormat::Csv, ReportFormat::Json] {
        let path = dir.join(format!("comparison.{}", format.extension()));
        emit_report(&report, format, &path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
