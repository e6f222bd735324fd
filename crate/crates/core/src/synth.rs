//! Sinusoid mixtures with optional white or AR(1) noise.

use std::f64::consts::PI;

use ndarray::Array2;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::TimeSeries;
use crate::error::{Error, Result};
use crate::random::{derive_seed, seeded};

/// One cosine term. Exactly one of `bin` (cycles over the whole series) and
/// `period` (samples per cycle) must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    #[serde(default)]
    pub bin: Option<usize>,
    #[serde(default)]
    pub period: Option<f64>,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

impl Component {
    pub fn at_bin(bin: usize, amplitude: f64, phase: f64) -> Self {
        Self { bin: Some(bin), period: None, amplitude, phase }
    }

    pub fn with_period(period: f64, amplitude: f64, phase: f64) -> Self {
        Self { bin: None, period: Some(period), amplitude, phase }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    None,
    White,
    Ar1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SineMixSpec {
    pub length: usize,
    pub channels: usize,
    pub components: Vec<Component>,
    pub noise: NoiseKind,
    pub noise_scale: f64,
    pub ar_phi: f64,
    pub seed: u64,
    /// Accept periods that do not divide the length (spectral leakage).
    pub allow_off_bin: bool,
}

impl Default for SineMixSpec {
    fn default() -> Self {
        Self {
            length: 1024,
            channels: 1,
            components: Vec::new(),
            noise: NoiseKind::None,
            noise_scale: 0.0,
            ar_phi: 0.0,
            seed: 0,
            allow_off_bin: false,
        }
    }
}

impl SineMixSpec {
    /// Frequencies in cycles per series length.
    fn frequencies(&self) -> Result<Vec<f64>> {
        let n = self.length as f64;
        self.components
            .iter()
            .map(|c| {
                if !(c.amplitude >= 0.0 && c.amplitude.is_finite()) || !c.phase.is_finite() {
                    return Err(Error::InvalidSpec(format!("bad amplitude/phase in {c:?}")));
                }
                match (c.bin, c.period) {
                    (Some(b), None) => Ok(b as f64),
                    (None, Some(p)) if p > 0.0 && p.is_finite() => {
                        let f = n / p;
                        if !self.allow_off_bin && (f - f.round()).abs() > 1e-9 {
                            return Err(Error::InvalidSpec(format!(
                                "period {p} does not divide length {}; set allow_off_bin",
                                self.length
                            )));
                        }
                        Ok(f)
                    }
                    _ => Err(Error::InvalidSpec(format!("component needs exactly one of bin/period: {c:?}"))),
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.length < 2 {
            return Err(Error::InvalidSpec(format!("length {} < 2", self.length)));
        }
        if self.channels == 0 {
            return Err(Error::InvalidSpec("channels must be >= 1".into()));
        }
        if !(self.ar_phi.abs() < 1.0) {
            return Err(Error::InvalidSpec(format!("|ar_phi| = {} must be < 1", self.ar_phi.abs())));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::InvalidSpec(format!("noise_scale {}", self.noise_scale)));
        }
        self.frequencies().map(|_| ())
    }
}

/// Three harmonics (periods 16, 32, 64) over AR(1) noise, 8192 samples on
/// two channels.
pub fn sine_mix_fixture() -> SineMixSpec {
    SineMixSpec {
        length: 8192,
        channels: 2,
        components: vec![
            Component::with_period(16.0, 1.0, 0.3),
            Component::with_period(32.0, 0.7, 1.1),
            Component::with_period(64.0, 0.5, 2.0),
        ],
        noise: NoiseKind::Ar1,
        noise_scale: 0.3,
        ar_phi: 0.8,
        seed: 1,
        allow_off_bin: false,
    }
}

/// Every channel carries the same cosines plus its own noise draw.
pub fn generate(spec: &SineMixSpec) -> Result<TimeSeries> {
    spec.validate()?;
    let n = spec.length;
    let freqs = spec.frequencies()?;
    let clean: Vec<f64> = (0..n)
        .map(|i| {
            spec.components
                .iter()
                .zip(&freqs)
                .map(|(c, f)| c.amplitude * (2.0 * PI * f * i as f64 / n as f64 + c.phase).cos())
                .sum()
        })
        .collect();
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let mut values = Array2::zeros((n, spec.channels));
    for c in 0..spec.channels {
        let mut rng = seeded(derive_seed(spec.seed, c as u64));
        let mut prev = 0.0;
        for i in 0..n {
            let w = spec.noise_scale * normal.sample(&mut rng);
            let e = match spec.noise {
                NoiseKind::None => 0.0,
                NoiseKind::White => w,
                // start from the stationary distribution
                NoiseKind::Ar1 if i == 0 => w / (1.0 - spec.ar_phi * spec.ar_phi).sqrt(),
                NoiseKind::Ar1 => spec.ar_phi * prev + w,
            };
            prev = e;
            values[[i, c]] = clean[i] + e;
        }
    }
    TimeSeries::from_values(values)
}
