//! One-sided real DFT, harmonic selection, and the periodogram/ACF estimators.
//!
//! Conventions: the forward transform is unnormalized,
//! `F[j] = sum_n x_n exp(-i 2 pi j n / M)`, and the inverse carries `1/M`.
//! A length-`M` real signal is stored as its `floor(M/2) + 1` non-negative
//! frequency bins; the DC bin and (for even `M`) the Nyquist bin are real.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut guard = p.borrow_mut();
        let (planner, cache) = &mut *guard;
        cache
            .entry((len, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(len)
                } else {
                    planner.plan_fft_forward(len)
                }
            })
            .clone()
    })
}

pub fn bin_count(len: usize) -> usize {
    len / 2 + 1
}

/// True when bin `j` of a length-`len` signal must be real.
pub fn is_self_conjugate(j: usize, len: usize) -> bool {
    j == 0 || (len.is_multiple_of(2) && j == len / 2)
}

/// Weight of a one-sided bin in the full two-sided spectrum (1 or 2).
pub fn bin_multiplicity(j: usize, len: usize) -> f64 {
    if is_self_conjugate(j, len) {
        1.0
    } else {
        2.0
    }
}

/// One-sided spectrum of a single real channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    coeffs: Vec<Complex64>,
    source_length: usize,
}

impl Spectrum {
    /// Wrap raw coefficients. Fails if the bin count does not match `source_length`.
    /// Hermitian constraints are checked at inversion time, not here.
    pub fn from_coeffs(coeffs: Vec<Complex64>, source_length: usize) -> Result<Self> {
        if source_length < 2 {
            return Err(Error::LengthTooSmall(source_length));
        }
        if coeffs.len() != bin_count(source_length) {
            return Err(Error::LengthMismatch(coeffs.len(), bin_count(source_length)));
        }
        Ok(Self { coeffs, source_length })
    }

    pub fn zeros(source_length: usize) -> Result<Self> {
        Self::from_coeffs(vec![Complex64::new(0.0, 0.0); bin_count(source_length)], source_length)
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn source_length(&self) -> usize {
        self.source_length
    }

    pub fn bins(&self) -> usize {
        self.coeffs.len()
    }

    /// First bin whose imaginary part should be zero but is not.
    pub fn hermitian_violation(&self) -> Option<usize> {
        (0..self.bins())
            .filter(|&j| is_self_conjugate(j, self.source_length))
            .find(|&j| self.coeffs[j].im != 0.0)
    }

    /// Zero the imaginary parts of the DC and Nyquist bins.
    pub fn project_hermitian(&mut self) {
        let len = self.source_length;
        for (j, c) in self.coeffs.iter_mut().enumerate() {
            if is_self_conjugate(j, len) {
                c.im = 0.0;
            }
        }
    }
}

pub fn rfft(seq: &[f64]) -> Result<Spectrum> {
    let m = seq.len();
    if m < 2 {
        return Err(Error::LengthTooSmall(m));
    }
    let mut buf: Vec<Complex64> = seq.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    plan(m, false).process(&mut buf);
    buf.truncate(bin_count(m));
    let mut spec = Spectrum { coeffs: buf, source_length: m };
    spec.project_hermitian();
    Ok(spec)
}

pub fn irfft(spec: &Spectrum) -> Result<Vec<f64>> {
    if let Some(j) = spec.hermitian_violation() {
        return Err(Error::BrokenHermitianSymmetry(j));
    }
    let m = spec.source_length;
    let mut full = vec![Complex64::new(0.0, 0.0); m];
    for (j, c) in spec.coeffs.iter().enumerate() {
        full[j] = *c;
        if j > 0 && m - j != j {
            full[m - j] = c.conj();
        }
    }
    plan(m, true).process(&mut full);
    let scale = 1.0 / m as f64;
    Ok(full.iter().map(|c| c.re * scale).collect())
}

pub fn amplitudes(spec: &Spectrum) -> Vec<f64> {
    spec.coeffs.iter().map(|c| c.norm()).collect()
}

/// Indices of the dominant bins of a spectrum, in increasing order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HarmonicSet {
    indices: Vec<usize>,
}

impl HarmonicSet {
    pub fn new(mut indices: Vec<usize>, bins: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&index) = indices.iter().find(|&&i| i >= bins) {
            return Err(Error::IndexOutOfRange { index, bins });
        }
        Ok(Self { indices })
    }

    pub fn all(bins: usize) -> Self {
        Self { indices: (0..bins).collect() }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn k(&self) -> usize {
        self.indices.len()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }
}

/// The `k` largest-amplitude bins; ties go to the lower index.
pub fn select_harmonics(spec: &Spectrum, k: usize) -> HarmonicSet {
    select_harmonics_from(&amplitudes(spec), k, false)
}

/// Like [`select_harmonics`] but with the DC bin optionally removed from
/// the candidate pool.
pub fn select_harmonics_excluding_dc(spec: &Spectrum, k: usize, exclude_dc: bool) -> HarmonicSet {
    select_harmonics_from(&amplitudes(spec), k, exclude_dc)
}

pub fn select_harmonics_from(amps: &[f64], k: usize, exclude_dc: bool) -> HarmonicSet {
    let first = usize::from(exclude_dc).min(amps.len());
    let mut order: Vec<usize> = (first..amps.len()).collect();
    order.sort_by(|&a, &b| amps[b].total_cmp(&amps[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    HarmonicSet { indices: order }
}

/// Keep the coefficients on `h`, zero the rest.
pub fn filter(spec: &Spectrum, h: &HarmonicSet) -> Result<Spectrum> {
    if let Some(&index) = h.indices.iter().find(|&&i| i >= spec.bins()) {
        return Err(Error::IndexOutOfRange { index, bins: spec.bins() });
    }
    let mut out = Spectrum::zeros(spec.source_length)?;
    for &j in &h.indices {
        out.coeffs[j] = spec.coeffs[j];
    }
    Ok(out)
}

/// Periodogram values at `omega_j = 2 pi j / M`, `j = 0..=M/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdEstimate {
    pub values: Vec<f64>,
    pub source_length: usize,
}

impl PsdEstimate {
    pub fn frequencies(&self) -> Vec<f64> {
        let m = self.source_length as f64;
        (0..self.values.len()).map(|j| 2.0 * std::f64::consts::PI * j as f64 / m).collect()
    }
}

fn demeaned(seq: &[f64]) -> Vec<f64> {
    let mean = seq.iter().sum::<f64>() / seq.len() as f64;
    seq.iter().map(|x| x - mean).collect()
}

/// `|F[j]|^2 / M` of the demeaned sequence.
pub fn periodogram(seq: &[f64]) -> Result<PsdEstimate> {
    if seq.len() < 2 {
        return Err(Error::LengthTooSmall(seq.len()));
    }
    let m = seq.len() as f64;
    let spec = rfft(&demeaned(seq))?;
    Ok(PsdEstimate {
        values: spec.coeffs.iter().map(|c| c.norm_sqr() / m).collect(),
        source_length: seq.len(),
    })
}

/// Circular autocovariance `r(k) = (1/M) sum_n x~_n x~_{(n+k) mod M}` for
/// `k = 0..=max_lag`, computed as the inverse transform of the periodogram.
#[derive(Debug, Clone, PartialEq)]
pub struct AcfEstimate {
    pub values: Vec<f64>,
}

impl AcfEstimate {
    pub fn max_lag(&self) -> usize {
        self.values.len() - 1
    }
}

pub fn acf_circular(seq: &[f64], max_lag: usize) -> Result<AcfEstimate> {
    let m = seq.len();
    if m < 2 {
        return Err(Error::LengthTooSmall(m));
    }
    if max_lag >= m {
        return Err(Error::LagOutOfRange { lag: max_lag, len: m });
    }
    let psd = periodogram(seq)?;
    let power = Spectrum {
        coeffs: psd.values.iter().map(|&p| Complex64::new(p, 0.0)).collect(),
        source_length: m,
    };
    let r = irfft(&power)?;
    Ok(AcfEstimate { values: r[..=max_lag].to_vec() })
}
