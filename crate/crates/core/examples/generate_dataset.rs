//! Write a three-channel sine mixture with AR(1) noise to CSV and read it
//! back.

use tsdistill::data::{load_csv, write_csv, IngestOptions};
use tsdistill::synth::{generate, Component, NoiseKind, SineMixSpec};

fn main() -> tsdistill::Result<()> {
    let spec = SineMixSpec {
        length: 1000,
        channels: 3,
        components: vec![Component::with_period(24.0, 1.0, 0.0), Component::with_period(7.5, 0.3, 0.5)],
        noise: NoiseKind::Ar1,
        noise_scale: 0.2,
        ar_phi: 0.9,
        seed: 11,
        allow_off_bin: true,
    };
    let series = generate(&spec)?;
    let path = std::env::temp_dir().join("sine_mix.csv");
    write_csv(&series, &path)?;
    let back = load_csv(&path, &IngestOptions::default())?;
    println!("wrote {} rows x {} channels to {}", back.len(), back.channels(), path.display());
    println!("identical after reload: {}", back == series);
    Ok(())
}
