//! Pseudo-QMF filter banks and the decimation frontends they are compared
//! against (plain downsampling, average pooling).
//!
//! The prototype is a Kaiser-windowed lowpass whose cutoff is grid-searched
//! (no RNG involved) to minimize the bank's round-trip error on a unit
//! impulse. Analysis filter k is the cosine modulation
//! `h_k[n] = 2 p[n] cos((2k+1) (pi/2N) (n - (T-1)/2) + (-1)^k pi/4)`,
//! synthesis filters are the time-reversed analysis filters.

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

pub const KAISER_BETA: f64 = 9.0;
pub const TAPS_PER_BAND: usize = 16;

#[derive(Debug, Clone)]
pub struct PqmfBank {
    pub n_bands: usize,
    pub prototype: Vec<f32>,
    /// `n_bands × taps`.
    pub analysis_filters: Vec<Vec<f32>>,
    pub synthesis_filters: Vec<Vec<f32>>,
    /// Round-trip delay in samples: `taps - 1` (0 for the identity bank).
    pub delay: usize,
}

/// Zeroth-order modified Bessel function, by series.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0f64;
    let mut term = 1.0f64;
    let half = x / 2.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < 1e-21 * sum {
            break;
        }
    }
    sum
}

fn kaiser_window(len: usize, beta: f64) -> Vec<f64> {
    let denom = bessel_i0(beta);
    let center = (len - 1) as f64 / 2.0;
    (0..len)
        .map(|n| {
            let r = (n as f64 - center) / center;
            bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom
        })
        .collect()
}

/// Kaiser-windowed sinc lowpass with the given cutoff (cycles/sample).
fn lowpass_prototype(taps: usize, cutoff: f64, beta: f64) -> Vec<f64> {
    let win = kaiser_window(taps, beta);
    let center = (taps - 1) as f64 / 2.0;
    (0..taps)
        .map(|n| {
            let x = n as f64 - center;
            let sinc = if x == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * std::f64::consts::PI * cutoff * x).sin() / (std::f64::consts::PI * x)
            };
            sinc * win[n]
        })
        .collect()
}

fn modulate(prototype: &[f64], n_bands: usize) -> (Vec<Vec<f32>>, Vec<Vec<f32>>) {
    let taps = prototype.len();
    let center = (taps - 1) as f64 / 2.0;
    let mut analysis = Vec::with_capacity(n_bands);
    for k in 0..n_bands {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let row: Vec<f32> = (0..taps)
            .map(|n| {
                let phase = (2 * k + 1) as f64 * std::f64::consts::PI / (2.0 * n_bands as f64)
                    * (n as f64 - center)
                    + sign * std::f64::consts::PI / 4.0;
                (2.0 * prototype[n] * phase.cos()) as f32
            })
            .collect();
        analysis.push(row);
    }
    let synthesis: Vec<Vec<f32>> =
        analysis.iter().map(|h| h.iter().rev().copied().collect()).collect();
    (analysis, synthesis)
}

fn build_bank(n_bands: usize, taps: usize, cutoff: f64) -> PqmfBank {
    let proto = lowpass_prototype(taps, cutoff, KAISER_BETA);
    let (analysis, synthesis) = modulate(&proto, n_bands);
    PqmfBank {
        n_bands,
        prototype: proto.iter().map(|&x| x as f32).collect(),
        analysis_filters: analysis,
        synthesis_filters: synthesis,
        delay: taps - 1,
    }
}

/// Round-trip error of the bank on a unit impulse, after delay compensation.
fn impulse_error(bank: &PqmfBank) -> f64 {
    let taps = bank.prototype.len();
    let len = 4 * taps;
    let mut x = vec![0.0f32; len];
    x[taps] = 1.0;
    let input = Tensor3::from_samples(&x);
    let sub = pqmf_analyze(&input, bank).unwrap();
    let y = pqmf_synthesize(&sub, bank).unwrap();
    let mut err = 0.0f64;
    for n in 0..len {
        let target = if n >= bank.delay && n - bank.delay < len { x[n - bank.delay] } else { 0.0 };
        let got = if n < y.time { y.get(0, 0, n) } else { 0.0 };
        err += ((got - target) as f64).powi(2);
    }
    err
}

/// Design an `n_bands`-band bank with `taps` filter taps. The cutoff is
/// searched over `1/(4N) * [0.8, 1.2]` minimizing the impulse round-trip
/// error. `N = 1` yields the exact identity bank.
pub fn design_pqmf(n_bands: usize, taps: usize) -> Result<PqmfBank> {
    if n_bands == 0 {
        return Err(Error::config("pqmf needs at least one band"));
    }
    if n_bands == 1 {
        return Ok(PqmfBank {
            n_bands: 1,
            prototype: vec![1.0],
            analysis_filters: vec![vec![1.0]],
            synthesis_filters: vec![vec![1.0]],
            delay: 0,
        });
    }
    if taps < 2 * n_bands {
        return Err(Error::config(format!("{taps} taps infeasible for {n_bands} bands")));
    }
    let ideal = 0.5 / (2.0 * n_bands as f64);
    let mut best: Option<(f64, PqmfBank)> = None;
    for i in 0..=40 {
        let factor = 0.8 + 0.4 * i as f64 / 40.0;
        let bank = build_bank(n_bands, taps, ideal * factor);
        let err = impulse_error(&bank);
        if best.as_ref().map_or(true, |(e, _)| err < *e) {
            best = Some((err, bank));
        }
    }
    Ok(best.unwrap().1)
}

/// Default bank for `n` bands: `16 n` taps.
pub fn design_pqmf_default(n_bands: usize) -> Result<PqmfBank> {
    if n_bands <= 1 {
        design_pqmf(n_bands, 1)
    } else {
        design_pqmf(n_bands, TAPS_PER_BAND * n_bands)
    }
}

/// Split a mono waveform into `N` sub-bands decimated by `N`.
pub fn pqmf_analyze(wave: &Tensor3, bank: &PqmfBank) -> Result<Tensor3> {
    if wave.channels != 1 {
        return Err(Error::config("pqmf_analyze expects mono input"));
    }
    let n = bank.n_bands;
    if n == 1 {
        let mut out = Tensor3::zeros(wave.batch, 1, wave.time);
        out.data.copy_from_slice(&wave.data);
        return Ok(out);
    }
    let frames = if wave.time == 0 { 0 } else { (wave.time - 1) / n + 1 };
    let taps = bank.prototype.len();
    let mut out = Tensor3::zeros(wave.batch, n, frames);
    for b in 0..wave.batch {
        let x = wave.row(b, 0);
        for (k, h) in bank.analysis_filters.iter().enumerate() {
            for m in 0..frames {
                let anchor = m * n;
                let mut acc = 0.0f32;
                for (i, &w) in h.iter().enumerate().take(taps) {
                    let pos = anchor as isize - i as isize;
                    if pos >= 0 {
                        acc += w * x[pos as usize];
                    }
                }
                out.set(b, k, m, acc);
            }
        }
    }
    Ok(out)
}

/// Upsample each sub-band by `N`, filter, and sum; `synthesize(analyze(x))`
/// reconstructs `x` delayed by `taps - 1` samples.
pub fn pqmf_synthesize(subbands: &Tensor3, bank: &PqmfBank) -> Result<Tensor3> {
    let n = bank.n_bands;
    if subbands.channels != n {
        return Err(Error::config(format!(
            "expected {n} sub-bands, got {}",
            subbands.channels
        )));
    }
    if n == 1 {
        let mut out = Tensor3::zeros(subbands.batch, 1, subbands.time);
        out.data.copy_from_slice(&subbands.data);
        return Ok(out);
    }
    let time = subbands.time * n;
    let mut out = Tensor3::zeros(subbands.batch, 1, time);
    for b in 0..subbands.batch {
        for (k, g) in bank.synthesis_filters.iter().enumerate() {
            let sub = subbands.row(b, k);
            for t in 0..time {
                // y[t] = N * sum_i g[i] * up(sub)[t - i], up has zeros except
                // at multiples of N
                let mut acc = 0.0f32;
                let mut i = t % n;
                while i < g.len() && i <= t {
                    let j = (t - i) / n;
                    if j < sub.len() {
                        acc += g[i] * sub[j];
                    }
                    i += n;
                }
                let idx = out.idx(b, 0, t);
                out.data[idx] += n as f32 * acc;
            }
        }
    }
    Ok(out)
}

/// Reconstruction SNR (dB) of an analysis/synthesis round trip on `x`,
/// delay-compensated.
pub fn reconstruction_snr(bank: &PqmfBank, x: &[f32]) -> Result<f64> {
    let input = Tensor3::from_samples(x);
    let sub = pqmf_analyze(&input, bank)?;
    let y = pqmf_synthesize(&sub, bank)?;
    let d = bank.delay;
    let mut sig = 0.0f64;
    let mut err = 0.0f64;
    for t in 0..x.len().saturating_sub(d) {
        let target = x[t] as f64;
        let got = if t + d < y.time { y.get(0, 0, t + d) as f64 } else { 0.0 };
        sig += target * target;
        err += (got - target) * (got - target);
    }
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (sig / err).log10())
}

/// Magnitude response (dB, 0 dB at DC) of a length-`taps` moving average on
/// `n_points` frequencies spanning `[0, 0.5]` cycles/sample. Nulls are
/// floored at -200 dB for reporting.
pub fn avgpool_response(taps: usize, n_points: usize) -> Vec<(f64, f64)> {
    assert!(taps >= 1 && n_points >= 2);
    (0..n_points)
        .map(|i| {
            let f = 0.5 * i as f64 / (n_points - 1) as f64;
            let mag = if f == 0.0 {
                1.0
            } else {
                let num = (std::f64::consts::PI * f * taps as f64).sin();
                let den = taps as f64 * (std::f64::consts::PI * f).sin();
                (num / den).abs()
            };
            let db = if mag <= 1e-10 { -200.0 } else { 20.0 * mag.log10() };
            (f, db)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frontend {
    /// Keep every `factor`-th sample.
    Plain,
    /// `factor`-tap moving average, then decimate.
    AvgPool,
    /// PQMF analysis, band 0.
    Pqmf,
}

/// Energy folded below the post-decimation Nyquist, as a fraction of input
/// energy.
///
/// Only content above the new Nyquist can alias, so the input is split with
/// an FFT brickwall at `1/(2*factor)`; the high part is passed through the
/// frontend and the energy surviving decimation is reported relative to the
/// whole input: `factor * E_out(hi) / E_in`. Band-limited inputs therefore
/// measure ~0, and factors below 2 trivially return 0.
pub fn alias_energy(wave: &[f32], factor: usize, frontend: Frontend) -> Result<f64> {
    if factor < 2 {
        return Ok(0.0);
    }
    if wave.is_empty() {
        return Err(Error::config("alias_energy needs a non-empty signal"));
    }
    let x_hi = highpass_brickwall(wave, 1.0 / (2.0 * factor as f64));
    let e_total: f64 = wave.iter().map(|&v| (v as f64) * (v as f64)).sum();
    if e_total == 0.0 {
        return Ok(0.0);
    }
    let y = match frontend {
        Frontend::Plain => x_hi.iter().step_by(factor).copied().collect::<Vec<f32>>(),
        Frontend::AvgPool => {
            let mut out = Vec::with_capacity(x_hi.len() / factor + 1);
            let mut m = 0usize;
            while m * factor < x_hi.len() {
                let anchor = m * factor;
                let mut acc = 0.0f32;
                for i in 0..factor {
                    if anchor >= i {
                        acc += x_hi[anchor - i];
                    }
                }
                out.push(acc / factor as f32);
                m += 1;
            }
            out
        }
        Frontend::Pqmf => {
            let bank = design_pqmf_default(factor)?;
            let sub = pqmf_analyze(&Tensor3::from_samples(&x_hi), &bank)?;
            sub.row(0, 0).to_vec()
        }
    };
    let e_out: f64 = y.iter().map(|&v| (v as f64) * (v as f64)).sum();
    Ok(factor as f64 * e_out / e_total)
}

/// Remove all content below `cutoff` (cycles/sample) with an FFT brickwall.
fn highpass_brickwall(x: &[f32], cutoff: f64) -> Vec<f32> {
    use rustfft::num_complex::Complex64;
    use rustfft::FftPlanner;
    let n = x.len();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v as f64, 0.0)).collect();
    fwd.process(&mut buf);
    let edge = (cutoff * n as f64).round() as usize;
    for (k, c) in buf.iter_mut().enumerate() {
        let f_bin = k.min(n - k);
        if f_bin < edge {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    inv.process(&mut buf);
    buf.iter().map(|c| (c.re / n as f64) as f32).collect()
}

/// Linear sweep covering `[f0, f1]` cycles/sample.
pub fn chirp(len: usize, f0: f64, f1: f64) -> Vec<f32> {
    let mut phase = 0.0f64;
    (0..len)
        .map(|i| {
            let f = f0 + (f1 - f0) * i as f64 / len as f64;
            phase += 2.0 * std::f64::consts::PI * f;
            (phase.sin()) as f32
        })
        .collect()
}
