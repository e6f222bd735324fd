//! Pick the dominant harmonics of a noisy sine mixture and rebuild the
//! series from them alone.

use tsdistill::spectral::{acf_circular, amplitudes, filter, irfft, periodogram, rfft, select_harmonics};
use tsdistill::synth::{generate, Component, NoiseKind, SineMixSpec};

fn main() -> tsdistill::Result<()> {
    let spec = SineMixSpec {
        length: 512,
        components: vec![Component::with_period(32.0, 1.0, 0.2), Component::with_period(8.0, 0.4, 1.0)],
        noise: NoiseKind::White,
        noise_scale: 0.3,
        seed: 3,
        ..Default::default()
    };
    let x = generate(&spec)?.channel(0);

    let f = rfft(&x)?;
    let top = select_harmonics(&f, 4);
    let amps = amplitudes(&f);
    println!("top bins by amplitude:");
    for &j in top.indices() {
        println!("  bin {j:>3} (period {:>6.1}) amplitude {:.1}", 512.0 / j.max(1) as f64, amps[j]);
    }

    let clean = irfft(&filter(&f, &top)?)?;
    let residual: f64 = x.iter().zip(&clean).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64;
    println!("mean squared residual after keeping 4 bins: {residual:.4}");

    let psd = periodogram(&x)?;
    let share: f64 = top.indices().iter().map(|&j| psd.values[j]).sum::<f64>() / psd.values.iter().sum::<f64>();
    println!("share of one-sided power in those bins: {:.1}%", 100.0 * share);

    let acf = acf_circular(&x, 16)?;
    let r: Vec<String> = acf.values.iter().map(|v| format!("{:.2}", v / acf.values[0])).collect();
    println!("normalized autocorrelation, lags 0..16: {}", r.join(" "));
    Ok(())
}
