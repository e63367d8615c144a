//! Causal short-time Fourier transform and mel filter banks.
//!
//! Frame `t` of the causal STFT covers input samples
//! `(t*hop - fft_size + 1 ..= t*hop)` with zero left padding, so no frame
//! depends on samples newer than `t*hop`. Frame counts follow the same
//! `floor((T-1)/hop) + 1` rule as the causal strided convolutions, which keeps
//! spectrogram resolutions aligned with the encoder blocks for any chunking.

use crate::error::{Error, Result};
use crate::tensor::Tensor3;
use rustfft::num_complex::Complex32;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Complex spectrogram as two real tensors of shape `batch × bins × frames`.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub re: Tensor3,
    pub im: Tensor3,
}

impl Spectrogram {
    pub fn bins(&self) -> usize {
        self.re.channels
    }

    pub fn frames(&self) -> usize {
        self.re.time
    }

    /// ln(|S| + floor); the floor keeps zero spectra finite.
    pub fn log_magnitude(&self, floor: f32) -> Tensor3 {
        let mut out = Tensor3::zeros(self.re.batch, self.re.channels, self.re.time);
        for i in 0..out.data.len() {
            let m = (self.re.data[i] * self.re.data[i] + self.im.data[i] * self.im.data[i]).sqrt();
            out.data[i] = (m + floor).ln();
        }
        out
    }

    /// |S| as a tensor.
    pub fn magnitude(&self) -> Tensor3 {
        let mut out = Tensor3::zeros(self.re.batch, self.re.channels, self.re.time);
        for i in 0..out.data.len() {
            out.data[i] =
                (self.re.data[i] * self.re.data[i] + self.im.data[i] * self.im.data[i]).sqrt();
        }
        out
    }
}

/// Periodic Hann window: `0.5 * (1 - cos(2 pi n / N))`.
pub fn hann_window(len: usize) -> Vec<f32> {
    (0..len)
        .map(|n| {
            let x = 2.0 * std::f64::consts::PI * n as f64 / len as f64;
            (0.5 * (1.0 - x.cos())) as f32
        })
        .collect()
}

/// Causal STFT with a fixed FFT size and hop.
#[derive(Clone)]
pub struct CausalStft {
    pub fft_size: usize,
    pub hop: usize,
    window: Vec<f32>,
    plan: Arc<dyn Fft<f32>>,
}

impl std::fmt::Debug for CausalStft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CausalStft").field("fft_size", &self.fft_size).field("hop", &self.hop).finish()
    }
}

impl CausalStft {
    pub fn new(fft_size: usize, hop: usize) -> Result<Self> {
        if hop == 0 {
            return Err(Error::config("stft hop must be positive"));
        }
        if !fft_size.is_power_of_two() {
            return Err(Error::config(format!("fft size {fft_size} is not a power of two")));
        }
        if hop > fft_size {
            return Err(Error::config("stft hop must not exceed the fft size"));
        }
        let mut planner = FftPlanner::new();
        let plan = planner.plan_fft_forward(fft_size);
        Ok(CausalStft { fft_size, hop, window: hann_window(fft_size), plan })
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn frames_for(&self, time: usize) -> usize {
        if time == 0 {
            0
        } else {
            (time - 1) / self.hop + 1
        }
    }

    /// One windowed DFT over a buffer whose last sample is the frame anchor.
    /// `window_buf` must hold exactly `fft_size` samples.
    fn frame_dft(&self, window_buf: &[f32], scratch: &mut Vec<Complex32>, out_re: &mut [f32], out_im: &mut [f32]) {
        scratch.clear();
        scratch.extend(
            window_buf.iter().zip(&self.window).map(|(&x, &w)| Complex32::new(x * w, 0.0)),
        );
        self.plan.process(scratch);
        for (k, c) in scratch.iter().take(self.bins()).enumerate() {
            out_re[k] = c.re;
            out_im[k] = c.im;
        }
    }

    /// Offline causal STFT over a mono tensor (`channels == 1`).
    pub fn forward(&self, input: &Tensor3) -> Result<Spectrogram> {
        if input.channels != 1 {
            return Err(Error::config("causal stft expects a mono signal"));
        }
        let frames = self.frames_for(input.time);
        let bins = self.bins();
        let mut re = Tensor3::zeros(input.batch, bins, frames);
        let mut im = Tensor3::zeros(input.batch, bins, frames);
        let mut scratch = Vec::with_capacity(self.fft_size);
        let mut window_buf = vec![0.0f32; self.fft_size];
        let mut fre = vec![0.0f32; bins];
        let mut fim = vec![0.0f32; bins];
        for b in 0..input.batch {
            let row = input.row(b, 0);
            for t in 0..frames {
                let anchor = t * self.hop; // newest sample in the frame
                for (i, slot) in window_buf.iter_mut().enumerate() {
                    let pos = anchor as isize - (self.fft_size - 1 - i) as isize;
                    *slot = if pos < 0 { 0.0 } else { row[pos as usize] };
                }
                self.frame_dft(&window_buf, &mut scratch, &mut fre, &mut fim);
                for k in 0..bins {
                    re.set(b, k, t, fre[k]);
                    im.set(b, k, t, fim[k]);
                }
            }
        }
        Ok(Spectrogram { re, im })
    }
}

/// Streaming counterpart of [`CausalStft`]; emits exactly the frames the
/// offline transform would emit for the samples consumed so far.
#[derive(Debug, Clone)]
pub struct StftStream {
    stft: CausalStft,
    /// Window history: starts as `fft_size - 1` zeros.
    buf: Vec<f32>,
}

impl StftStream {
    pub fn new(stft: CausalStft) -> Self {
        let buf = vec![0.0f32; stft.fft_size - 1];
        StftStream { stft, buf }
    }

    pub fn reset(&mut self) {
        self.buf.clear();
        self.buf.resize(self.stft.fft_size - 1, 0.0);
    }

    /// Push mono samples, get the newly available frames.
    pub fn push(&mut self, samples: &[f32]) -> Spectrogram {
        self.buf.extend_from_slice(samples);
        let span = self.stft.fft_size - 1;
        let frames = if self.buf.len() > span { (self.buf.len() - 1 - span) / self.stft.hop + 1 } else { 0 };
        let bins = self.stft.bins();
        let mut re = Tensor3::zeros(1, bins, frames);
        let mut im = Tensor3::zeros(1, bins, frames);
        let mut scratch = Vec::with_capacity(self.stft.fft_size);
        let mut fre = vec![0.0f32; bins];
        let mut fim = vec![0.0f32; bins];
        for t in 0..frames {
            let start = t * self.stft.hop;
            self.stft.frame_dft(&self.buf[start..start + self.stft.fft_size], &mut scratch, &mut fre, &mut fim);
            for k in 0..bins {
                re.set(0, k, t, fre[k]);
                im.set(0, k, t, fim[k]);
            }
        }
        if frames > 0 {
            self.buf.drain(..frames * self.stft.hop);
        }
        Spectrogram { re, im }
    }
}

/// Triangular mel filter bank on the Slaney scale (linear below 1 kHz,
/// logarithmic above). Every row is checked to carry at least one strictly
/// positive weight; configurations with an empty filter are rejected.
pub fn mel_filterbank(fft_size: usize, n_mels: usize, sample_rate: u32) -> Result<Vec<Vec<f32>>> {
    if n_mels < 1 {
        return Err(Error::config("mel bank needs at least one filter"));
    }
    let bins = fft_size / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    let peaks: Vec<f64> =
        (0..n_mels + 2).map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64)).collect();
    let mut bank = vec![vec![0.0f32; bins]; n_mels];
    for m in 0..n_mels {
        let (lo, mid, hi) = (peaks[m], peaks[m + 1], peaks[m + 2]);
        for (k, w) in bank[m].iter_mut().enumerate() {
            let f = k as f64 * sample_rate as f64 / fft_size as f64;
            if f > lo && f < hi {
                let v = if f <= mid { (f - lo) / (mid - lo) } else { (hi - f) / (hi - mid) };
                *w = v.max(0.0) as f32;
            }
        }
        if !bank[m].iter().any(|&w| w > 0.0) {
            return Err(Error::config(format!(
                "mel filter {m} of {n_mels} is empty for fft size {fft_size}; pick fewer mels"
            )));
        }
    }
    Ok(bank)
}

fn hz_to_mel(f: f64) -> f64 {
    if f < 1000.0 {
        3.0 * f / 200.0
    } else {
        15.0 + 27.0 * (f / 1000.0).ln() / 6.4f64.ln()
    }
}

fn mel_to_hz(m: f64) -> f64 {
    if m < 15.0 {
        200.0 * m / 3.0
    } else {
        1000.0 * ((m - 15.0) / 27.0 * 6.4f64.ln()).exp()
    }
}

/// Apply a mel bank to a magnitude spectrogram: `out[m][t] = sum_k w[m][k] |S|[k][t]`.
pub fn apply_mel(bank: &[Vec<f32>], magnitude: &Tensor3) -> Tensor3 {
    let n_mels = bank.len();
    let mut out = Tensor3::zeros(magnitude.batch, n_mels, magnitude.time);
    for b in 0..magnitude.batch {
        for (m, row) in bank.iter().enumerate() {
            for t in 0..magnitude.time {
                let mut acc = 0.0f32;
                for (k, &w) in row.iter().enumerate() {
                    if w != 0.0 {
                        acc += w * magnitude.get(b, k, t);
                    }
                }
                out.set(b, m, t, acc);
            }
        }
    }
    out
}
