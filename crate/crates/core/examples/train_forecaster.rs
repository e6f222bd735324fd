//! Fit the linear and the trend/seasonal linear forecaster on a generated
//! series and score them on held-out data.

use tsdistill::data::{apply_norm, fit_norm, split, SplitSpec};
use tsdistill::forecaster::{train_to_convergence, EarlyStopping, Forecaster, ModelKind, WindowBatch};
use tsdistill::random::seeded;
use tsdistill::synth::{generate, sine_mix_fixture};

fn main() -> tsdistill::Result<()> {
    let series = generate(&sine_mix_fixture())?;
    let (train, val, test) = split(&series, &SplitSpec::ett())?;
    let stats = fit_norm(&train)?;
    let (train, val, test) = (apply_norm(&train, &stats)?, apply_norm(&val, &stats)?, apply_norm(&test, &stats)?);

    let (l, t) = (96, 96);
    let train_b = WindowBatch::from_series(&train, l, t)?;
    let val_b = WindowBatch::from_series(&val, l, t)?;
    let test_b = WindowBatch::from_series(&test, l, t)?;
    let schedule = EarlyStopping { max_epochs: 30, ..Default::default() };

    for kind in [ModelKind::Linear, ModelKind::decomp()] {
        let init = Forecaster::init_uniform(kind, l, t, &mut seeded(0))?;
        let out = train_to_convergence(&init, &train_b, &val_b, &schedule, 0)?;
        println!(
            "{kind}: best epoch {} of {}, val {:.4}, test {:.4}",
            out.best_epoch,
            out.epochs_run,
            out.best_val_mse,
            out.model.batch_mse(&test_b)?
        );
    }
    Ok(())
}
