//! Discriminator forward passes: the multi-filter-bank discriminator (MFBD)
//! over PQMF sub-bands and the multi-resolution spectrogram discriminator
//! (MRSD) over complex STFTs.
//!
//! Weights are randomly He-initialized; nothing here trains. Outputs carry
//! the per-layer activations the feature-matching loss consumes. 2-D feature
//! maps are folded to `batch × channels × (freq * time)` tensors.

use crate::conv::{init_layer_with_gain, sample_standard_normal, ConvWeights, LayerSpec};
use crate::error::{Error, Result};
use crate::pqmf::{design_pqmf_default, pqmf_analyze, PqmfBank};
use crate::stft::CausalStft;
use crate::tensor::Tensor3;
use rand::Rng;

pub const MFBD_BAND_COUNTS: [usize; 6] = [1, 2, 3, 5, 7, 11];
pub const MRSD_FFT_SIZES: [usize; 4] = [128, 256, 512, 1024];
pub const MRSD_HOPS: [usize; 4] = [32, 64, 128, 256];
pub const MRSD_CHANNELS: [usize; 6] = [16, 16, 32, 64, 128, 1];

const LEAKY_SLOPE: f32 = 0.1;

/// Final score map plus the intermediate activations of every conv layer.
#[derive(Debug, Clone)]
pub struct DiscriminatorOutput {
    pub logits: Tensor3,
    pub features: Vec<Tensor3>,
}

fn leaky_relu(x: &mut Tensor3) {
    for v in &mut x.data {
        if *v < 0.0 {
            *v *= LEAKY_SLOPE;
        }
    }
}

// ---------------------------------------------------------------------------
// MFBD
// ---------------------------------------------------------------------------

/// One weight-shared sub-discriminator: 1-D conv stack applied independently
/// to every sub-band (sub-bands are folded into the batch dimension).
#[derive(Debug, Clone)]
pub struct SubDiscriminator {
    layers: Vec<(LayerSpec, ConvWeights)>,
}

impl SubDiscriminator {
    /// Five kernel-5 stride-3 convs widening to (32,128,512,1024,1024), a
    /// kernel-3 conv, then the 1-channel score conv.
    pub fn init(rng: &mut impl Rng) -> Self {
        let widths = [32usize, 128, 512, 1024, 1024];
        let mut layers = Vec::new();
        let mut c_in = 1usize;
        for &c_out in &widths {
            layers.push(LayerSpec { causal: false, ..LayerSpec::conv(c_in, c_out, 5, 3) });
            c_in = c_out;
        }
        layers.push(LayerSpec { causal: false, ..LayerSpec::conv(c_in, c_in, 3, 1) });
        layers.push(LayerSpec { causal: false, ..LayerSpec::conv(c_in, 1, 3, 1) });
        let layers = layers
            .into_iter()
            .map(|spec| {
                let w = init_layer_with_gain(&spec, 2.0, rng);
                (spec, w)
            })
            .collect();
        SubDiscriminator { layers }
    }

    fn forward(&self, x: &Tensor3) -> Result<DiscriminatorOutput> {
        let mut features = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, (spec, w)) in self.layers.iter().enumerate() {
            h = crate::conv::conv1d_forward(&h, spec, w)?;
            if i < last {
                leaky_relu(&mut h);
            }
            features.push(h.clone());
        }
        Ok(DiscriminatorOutput { logits: h, features })
    }
}

/// Multi-filter-bank discriminator: PQMF banks for the coprime band counts,
/// one shared sub-discriminator per bank.
pub struct Mfbd {
    pub banks: Vec<PqmfBank>,
    pub subs: Vec<SubDiscriminator>,
}

impl Mfbd {
    pub fn init(rng: &mut impl Rng) -> Result<Self> {
        let mut banks = Vec::new();
        let mut subs = Vec::new();
        for &n in &MFBD_BAND_COUNTS {
            banks.push(design_pqmf_default(n)?);
            subs.push(SubDiscriminator::init(rng));
        }
        Ok(Mfbd { banks, subs })
    }

    /// One output per band count. Sub-bands share the bank's discriminator:
    /// band `k` of the input maps to batch row `b * N + k` of the output.
    pub fn forward(&self, wave: &Tensor3) -> Result<Vec<DiscriminatorOutput>> {
        if wave.channels != 1 {
            return Err(Error::config("mfbd expects mono input"));
        }
        let mut outputs = Vec::with_capacity(self.banks.len());
        for (bank, sub) in self.banks.iter().zip(&self.subs) {
            let bands = pqmf_analyze(wave, bank)?;
            // fold sub-bands into the batch dimension: (B, N, T/N) -> (B*N, 1, T/N)
            let folded = Tensor3 {
                data: bands.data.clone(),
                batch: bands.batch * bands.channels,
                channels: 1,
                time: bands.time,
            };
            outputs.push(sub.forward(&folded)?);
        }
        Ok(outputs)
    }
}

// ---------------------------------------------------------------------------
// MRSD
// ---------------------------------------------------------------------------

/// Plain 2-D convolution over `batch × channels × freq × time` data kept in
/// a flat buffer. Only what the spectrogram discriminators need.
#[derive(Debug, Clone)]
struct Conv2d {
    in_ch: usize,
    out_ch: usize,
    kh: usize,
    kw: usize,
    stride_w: usize,
    weights: Vec<f32>, // [out][in][kh][kw]
    bias: Vec<f32>,
}

#[derive(Debug, Clone)]
struct Map4 {
    data: Vec<f32>,
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
}

impl Map4 {
    fn get(&self, b: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[((b * self.channels + c) * self.height + y) * self.width + x]
    }

    fn to_tensor3(&self) -> Tensor3 {
        Tensor3 {
            data: self.data.clone(),
            batch: self.batch,
            channels: self.channels,
            time: self.height * self.width,
        }
    }
}

impl Conv2d {
    fn init(in_ch: usize, out_ch: usize, kh: usize, kw: usize, stride_w: usize, rng: &mut impl Rng) -> Self {
        let fan_in = in_ch * kh * kw;
        let std = (2.0 / fan_in as f64).sqrt();
        let weights =
            (0..out_ch * fan_in).map(|_| (sample_standard_normal(rng) * std) as f32).collect();
        Conv2d { in_ch, out_ch, kh, kw, stride_w, weights, bias: vec![0.0; out_ch] }
    }

    /// Symmetric zero padding of (kh-1)/2 in freq and (kw-1)/2 in time;
    /// stride applies along time.
    fn forward(&self, x: &Map4) -> Map4 {
        let ph = (self.kh - 1) / 2;
        let pw = (self.kw - 1) / 2;
        let out_h = x.height;
        let out_w = if x.width == 0 { 0 } else { (x.width - 1) / self.stride_w + 1 };
        let mut out = Map4 {
            data: vec![0.0; x.batch * self.out_ch * out_h * out_w],
            batch: x.batch,
            channels: self.out_ch,
            height: out_h,
            width: out_w,
        };
        let per_out = self.in_ch * self.kh * self.kw;
        for b in 0..x.batch {
            for o in 0..self.out_ch {
                let w_row = &self.weights[o * per_out..(o + 1) * per_out];
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        let mut acc = self.bias[o];
                        for ci in 0..self.in_ch {
                            for ky in 0..self.kh {
                                let y = oy as isize + ky as isize - ph as isize;
                                if y < 0 || y >= x.height as isize {
                                    continue;
                                }
                                for kx in 0..self.kw {
                                    let xx = (ox * self.stride_w) as isize + kx as isize - pw as isize;
                                    if xx < 0 || xx >= x.width as isize {
                                        continue;
                                    }
                                    let w = w_row[(ci * self.kh + ky) * self.kw + kx];
                                    acc += w * x.get(b, ci, y as usize, xx as usize);
                                }
                            }
                        }
                        out.data[((b * self.out_ch + o) * out_h + oy) * out_w + ox] = acc;
                    }
                }
            }
        }
        out
    }
}

/// One spectrogram sub-discriminator: six 2-D convs over the 2-channel
/// (real, imaginary) spectrogram; kernels 3x9 with time stride 2 on the
/// first five layers, 3x3 on the last.
pub struct MrsdSub {
    stft: CausalStft,
    convs: Vec<Conv2d>,
}

impl MrsdSub {
    fn init(fft: usize, hop: usize, rng: &mut impl Rng) -> Result<Self> {
        let stft = CausalStft::new(fft, hop)?;
        let mut convs = Vec::with_capacity(MRSD_CHANNELS.len());
        let mut c_in = 2usize;
        for (i, &c_out) in MRSD_CHANNELS.iter().enumerate() {
            let last = i == MRSD_CHANNELS.len() - 1;
            let (kh, kw, sw) = if last { (3, 3, 1) } else { (3, 9, 2) };
            convs.push(Conv2d::init(c_in, c_out, kh, kw, sw, rng));
            c_in = c_out;
        }
        Ok(MrsdSub { stft, convs })
    }

    pub fn channel_progression(&self) -> Vec<usize> {
        let mut v = vec![self.convs[0].in_ch];
        v.extend(self.convs.iter().map(|c| c.out_ch));
        v
    }

    fn forward(&self, wave: &Tensor3) -> Result<DiscriminatorOutput> {
        let spec = self.stft.forward(wave)?;
        let bins = spec.bins();
        let frames = spec.frames();
        // stack (real, imag) as two channels of a freq x time map
        let mut data = Vec::with_capacity(wave.batch * 2 * bins * frames);
        for b in 0..wave.batch {
            for src in [&spec.re, &spec.im] {
                for k in 0..bins {
                    for t in 0..frames {
                        data.push(src.get(b, k, t));
                    }
                }
            }
        }
        let mut h = Map4 { data, batch: wave.batch, channels: 2, height: bins, width: frames };
        let mut features = Vec::with_capacity(self.convs.len());
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&h);
            if i < last {
                let mut t = h.to_tensor3();
                leaky_relu(&mut t);
                h.data = t.data;
            }
            features.push(h.to_tensor3());
        }
        Ok(DiscriminatorOutput { logits: h.to_tensor3(), features })
    }
}

/// Multi-resolution spectrogram discriminator: four sub-discriminators over
/// FFT sizes {128, 256, 512, 1024} with hops {32, 64, 128, 256}.
pub struct Mrsd {
    pub subs: Vec<MrsdSub>,
}

impl Mrsd {
    pub fn init(rng: &mut impl Rng) -> Result<Self> {
        let subs = MRSD_FFT_SIZES
            .iter()
            .zip(&MRSD_HOPS)
            .map(|(&fft, &hop)| MrsdSub::init(fft, hop, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Mrsd { subs })
    }

    pub fn forward(&self, wave: &Tensor3) -> Result<Vec<DiscriminatorOutput>> {
        self.subs.iter().map(|s| s.forward(wave)).collect()
    }
}
