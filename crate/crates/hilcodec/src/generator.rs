//! Encoder and decoder graphs: spectrogram blocks, variance-constrained
//! residual blocks, input/output normalization, and the L2 latent rescale.
//!
//! Layout (default config): the encoder runs an initial Conv(1→64, k7), four
//! blocks of [spectrogram block, 2 residual blocks, /sqrt(2), ELU, strided
//! downsample] with strides 2,4,5,8 and channels doubling per block, then a
//! quantization block (spectrogram block, depthwise k3, pointwise to the
//! 128-dim latent) and L2 normalization rescaled by sqrt(C). The decoder
//! mirrors it with pointwise+depthwise-transposed upsampling and three
//! residual blocks per stage, dividing each block output by sqrt(2), and ends
//! with Conv(96→1, k7), de-normalization, and tanh.
//!
//! Residual branches are ELU → depthwise conv → ELU → pointwise conv, gated
//! by a scalar initialized to zero, so every block starts as an exact
//! identity. Initialization keeps unit variance flowing: LeCun on layers fed
//! raw signals, He on the residual depthwise convs, and an ELU-compensated
//! gain (~1.55/fan_in) on trunk layers that read ELU outputs.

use crate::conv::{
    conv1d_forward, init_layer_with_gain, transposed_conv1d_forward, ConvWeights, LayerSpec,
    ELU_VAR_GAIN,
};
use crate::error::{Error, Result};
use crate::quantizer::{Codebooks, QuantizerConfig};
use crate::stft::CausalStft;
use crate::tensor::{elu_inplace, tanh_clip, Tensor3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const LOG_SPEC_FLOOR: f32 = 1e-5;
pub const L2_NORM_FLOOR: f32 = 1e-12;
pub const DEFAULT_NORM_CHUNKS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VcdMode {
    /// Variance-constrained design: 1/sqrt(N) branch scales, beta dividers,
    /// sqrt(2) resampling dividers, zero-initialized residual gains.
    Vcd,
    /// Plain residual blocks: alpha = beta = 1, no dividers, gains start at 1.
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub sample_rate: u32,
    pub strides: Vec<usize>,
    pub channels_enc: usize,
    pub channels_dec: usize,
    /// Residual blocks per encoder block (the spectrogram block adds one more
    /// residual-type unit).
    pub n_residual_enc: usize,
    /// Residual blocks per decoder block.
    pub n_residual_dec: usize,
    pub latent_dim: usize,
    /// One FFT size per encoder block plus one for the quantization block.
    pub spec_ffts: Vec<usize>,
    /// First/last convolution kernel.
    pub kernel_io: usize,
    /// Residual depthwise kernel.
    pub kernel_residual: usize,
    /// Quantization/dequantization depthwise kernel.
    pub kernel_quant: usize,
    /// How many leading encoder downsamples are full convolutions; the rest
    /// (the widest stages) are depthwise separable.
    pub full_conv_downsamples: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            sample_rate: 24_000,
            strides: vec![2, 4, 5, 8],
            channels_enc: 64,
            channels_dec: 96,
            n_residual_enc: 2,
            n_residual_dec: 3,
            latent_dim: 128,
            spec_ffts: vec![64, 128, 256, 512, 1024],
            kernel_io: 7,
            kernel_residual: 3,
            kernel_quant: 3,
            full_conv_downsamples: 3,
        }
    }
}

impl GeneratorConfig {
    /// Reduced-width configuration for fast structural tests.
    pub fn small() -> Self {
        GeneratorConfig {
            channels_enc: 8,
            channels_dec: 8,
            latent_dim: 16,
            ..Default::default()
        }
    }

    /// Samples per latent frame: the product of the strides.
    pub fn hop(&self) -> usize {
        self.strides.iter().product()
    }

    /// Spectrogram hops: the cumulative stride at the input of each encoder
    /// block, plus the full hop for the quantization block.
    pub fn spec_hops(&self) -> Vec<usize> {
        let mut hops = Vec::with_capacity(self.strides.len() + 1);
        let mut acc = 1usize;
        for &s in &self.strides {
            hops.push(acc);
            acc *= s;
        }
        hops.push(acc);
        hops
    }

    /// Encoder channel widths at block inputs, then the quantization block
    /// input (channels double after every downsample).
    pub fn enc_widths(&self) -> Vec<usize> {
        (0..=self.strides.len()).map(|b| self.channels_enc << b).collect()
    }

    /// Decoder channel widths: dequantization output down to `channels_dec`.
    pub fn dec_widths(&self) -> Vec<usize> {
        (0..=self.strides.len()).map(|b| self.channels_dec << (self.strides.len() - b)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.strides.is_empty() || self.strides.iter().any(|&s| s < 1) {
            return Err(Error::config("strides must be non-empty and positive"));
        }
        if self.spec_ffts.len() != self.strides.len() + 1 {
            return Err(Error::config(format!(
                "need {} spectrogram resolutions, got {}",
                self.strides.len() + 1,
                self.spec_ffts.len()
            )));
        }
        if self.n_residual_enc < 1 || self.n_residual_dec < 1 {
            return Err(Error::config("need at least one residual block per stage"));
        }
        if self.channels_enc < 1 || self.channels_dec < 1 || self.latent_dim < 1 {
            return Err(Error::config("channel counts must be positive"));
        }
        for (hop, fft) in self.spec_hops().iter().zip(&self.spec_ffts) {
            if hop > fft {
                return Err(Error::config(format!("spectrogram hop {hop} exceeds fft {fft}")));
            }
        }
        Ok(())
    }
}

/// Fixed scalars of the variance-constrained design.
#[derive(Debug, Clone, PartialEq)]
pub struct VcdScalars {
    pub alpha_enc: f32,
    pub alpha_dec: f32,
    /// `beta_n = sqrt(1 + n/N)` for the encoder's residual-type units
    /// (index 0 is the spectrogram block).
    pub betas_enc: Vec<f32>,
    pub betas_dec: Vec<f32>,
    /// Input scale of the strided downsample / output scale of each decoder
    /// block: `1/sqrt(2)` (1 in baseline mode).
    pub resample_divisor: f32,
}

impl VcdScalars {
    pub fn new(cfg: &GeneratorConfig, mode: VcdMode) -> Self {
        let n_enc = (cfg.n_residual_enc + 1) as f64;
        let n_dec = cfg.n_residual_dec as f64;
        match mode {
            VcdMode::Vcd => VcdScalars {
                alpha_enc: (1.0 / n_enc.sqrt()) as f32,
                alpha_dec: (1.0 / n_dec.sqrt()) as f32,
                betas_enc: (0..cfg.n_residual_enc + 1)
                    .map(|n| ((1.0 + n as f64 / n_enc).sqrt()) as f32)
                    .collect(),
                betas_dec: (0..cfg.n_residual_dec)
                    .map(|n| ((1.0 + n as f64 / n_dec).sqrt()) as f32)
                    .collect(),
                resample_divisor: (1.0 / 2.0f64.sqrt()) as f32,
            },
            VcdMode::Baseline => VcdScalars {
                alpha_enc: 1.0,
                alpha_dec: 1.0,
                betas_enc: vec![1.0; cfg.n_residual_enc + 1],
                betas_dec: vec![1.0; cfg.n_residual_dec],
                resample_divisor: 1.0,
            },
        }
    }
}

/// Waveform and per-bin spectrogram normalization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub wave_mean: f32,
    pub wave_std: f32,
    pub spec_mean: Vec<Vec<f32>>,
    pub spec_std: Vec<Vec<f32>>,
}

impl NormStats {
    /// Identity statistics: mean 0, std 1 everywhere.
    pub fn identity(cfg: &GeneratorConfig) -> Self {
        let spec_mean = cfg.spec_ffts.iter().map(|&f| vec![0.0; f / 2 + 1]).collect();
        let spec_std = cfg.spec_ffts.iter().map(|&f| vec![1.0; f / 2 + 1]).collect();
        NormStats { wave_mean: 0.0, wave_std: 1.0, spec_mean, spec_std }
    }

    pub fn validate(&self, cfg: &GeneratorConfig) -> Result<()> {
        if self.wave_std <= 0.0 {
            return Err(Error::Stats("waveform std must be positive".into()));
        }
        if self.spec_mean.len() != cfg.spec_ffts.len() || self.spec_std.len() != cfg.spec_ffts.len() {
            return Err(Error::Stats("spectrogram stats resolution count mismatch".into()));
        }
        for (i, &fft) in cfg.spec_ffts.iter().enumerate() {
            let bins = fft / 2 + 1;
            if self.spec_mean[i].len() != bins || self.spec_std[i].len() != bins {
                return Err(Error::Stats(format!("resolution {i}: expected {bins} bins")));
            }
            if self.spec_std[i].iter().any(|&s| s <= 0.0) {
                return Err(Error::Stats(format!("resolution {i}: non-positive std")));
            }
        }
        Ok(())
    }
}

/// Sample `n_chunks` one-second chunks from the corpus and accumulate
/// waveform and per-bin log-magnitude statistics for every spectrogram
/// resolution. Deterministic for a fixed seed.
pub fn compute_norm_stats(
    corpus: &[Vec<f32>],
    n_chunks: usize,
    seed: u64,
    cfg: &GeneratorConfig,
) -> Result<NormStats> {
    let chunk_len = cfg.sample_rate as usize;
    let eligible: Vec<&Vec<f32>> = corpus.iter().filter(|c| c.len() >= chunk_len).collect();
    if eligible.is_empty() {
        return Err(Error::Stats("corpus is empty or every file is shorter than one second".into()));
    }
    if n_chunks == 0 {
        return Err(Error::Stats("need at least one chunk".into()));
    }
    let stfts: Vec<CausalStft> = cfg
        .spec_ffts
        .iter()
        .zip(cfg.spec_hops())
        .map(|(&fft, hop)| CausalStft::new(fft, hop))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w_sum = 0.0f64;
    let mut w_sumsq = 0.0f64;
    let mut w_count = 0u64;
    let mut s_sum: Vec<Vec<f64>> = cfg.spec_ffts.iter().map(|&f| vec![0.0; f / 2 + 1]).collect();
    let mut s_sumsq = s_sum.clone();
    let mut s_count = vec![0u64; cfg.spec_ffts.len()];

    for _ in 0..n_chunks {
        let file = eligible[rand::Rng::gen_range(&mut rng, 0..eligible.len())];
        let offset = rand::Rng::gen_range(&mut rng, 0..=file.len() - chunk_len);
        let chunk = &file[offset..offset + chunk_len];
        for &x in chunk {
            w_sum += x as f64;
            w_sumsq += (x as f64) * (x as f64);
        }
        w_count += chunk_len as u64;
        let t = Tensor3::from_samples(chunk);
        for (i, stft) in stfts.iter().enumerate() {
            let lm = stft.forward(&t)?.log_magnitude(LOG_SPEC_FLOOR);
            for k in 0..lm.channels {
                for &v in lm.row(0, k) {
                    s_sum[i][k] += v as f64;
                    s_sumsq[i][k] += (v as f64) * (v as f64);
                }
            }
            s_count[i] += lm.time as u64;
        }
    }

    let w_mean = w_sum / w_count as f64;
    let w_var = (w_sumsq / w_count as f64 - w_mean * w_mean).max(0.0);
    if w_var == 0.0 {
        return Err(Error::Stats("constant corpus: zero waveform std".into()));
    }
    let mut spec_mean = Vec::new();
    let mut spec_std = Vec::new();
    for i in 0..stfts.len() {
        let n = s_count[i] as f64;
        let mut means = Vec::with_capacity(s_sum[i].len());
        let mut stds = Vec::with_capacity(s_sum[i].len());
        for k in 0..s_sum[i].len() {
            let m = s_sum[i][k] / n;
            let v = (s_sumsq[i][k] / n - m * m).max(0.0);
            if v == 0.0 {
                return Err(Error::Stats(format!("resolution {i} bin {k}: zero std")));
            }
            means.push(m as f32);
            stds.push(v.sqrt() as f32);
        }
        spec_mean.push(means);
        spec_std.push(stds);
    }
    let stats = NormStats {
        wave_mean: w_mean as f32,
        wave_std: w_var.sqrt() as f32,
        spec_mean,
        spec_std,
    };
    stats.validate(cfg)?;
    Ok(stats)
}

/// Normalize each latent frame to Euclidean norm `sqrt(C)` so the per-element
/// mean square is 1. Zero frames are floored at 1e-12 before dividing.
pub fn l2_normalize_rescale(z: &Tensor3) -> Tensor3 {
    let c = z.channels;
    let sqrt_c = (c as f64).sqrt() as f32;
    let mut out = Tensor3::zeros(z.batch, z.channels, z.time);
    for b in 0..z.batch {
        for t in 0..z.time {
            let mut sumsq = 0.0f32;
            for ch in 0..c {
                let v = z.get(b, ch, t);
                sumsq += v * v;
            }
            let norm = sumsq.sqrt().max(L2_NORM_FLOOR);
            let scale = sqrt_c / norm;
            for ch in 0..c {
                out.set(b, ch, t, z.get(b, ch, t) * scale);
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ConvUnit {
    pub path: String,
    pub spec: LayerSpec,
    pub weights: ConvWeights,
}

impl ConvUnit {
    fn init(path: &str, spec: LayerSpec, gain: f64, rng: &mut ChaCha8Rng) -> Self {
        ConvUnit { path: path.to_string(), spec, weights: init_layer_with_gain(&spec, gain, rng) }
    }

    pub fn forward(&self, x: &Tensor3) -> Result<Tensor3> {
        if self.spec.is_transposed() {
            transposed_conv1d_forward(x, &self.spec, &self.weights)
        } else {
            conv1d_forward(x, &self.spec, &self.weights)
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpecBlockLayer {
    /// Index into the generator's spectrogram resolutions.
    pub res_idx: usize,
    pub pconv: ConvUnit,
    pub gain: f32,
}

#[derive(Debug, Clone)]
pub struct ResBlockLayer {
    pub dconv: ConvUnit,
    pub pconv: ConvUnit,
    pub gain: f32,
    pub beta: f32,
}

#[derive(Debug, Clone)]
pub enum Downsample {
    Full(ConvUnit),
    Separable { dconv: ConvUnit, pconv: ConvUnit },
}

#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub spec: SpecBlockLayer,
    pub res: Vec<ResBlockLayer>,
    pub down: Downsample,
}

#[derive(Debug, Clone)]
pub struct QuantizationBlock {
    pub spec: SpecBlockLayer,
    pub dconv: ConvUnit,
    pub pconv: ConvUnit,
}

#[derive(Debug, Clone)]
pub struct DecoderBlock {
    pub up_pconv: ConvUnit,
    pub up_dconvt: ConvUnit,
    pub res: Vec<ResBlockLayer>,
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub cfg: GeneratorConfig,
    pub mode: VcdMode,
    pub scalars: VcdScalars,
    pub stats: NormStats,
    pub stfts: Vec<CausalStft>,
    pub conv_in: ConvUnit,
    pub enc_blocks: Vec<EncoderBlock>,
    pub quant: QuantizationBlock,
    pub dequant_pconv: ConvUnit,
    pub dequant_dconv: ConvUnit,
    pub dec_blocks: Vec<DecoderBlock>,
    pub conv_out: ConvUnit,
}

impl Generator {
    pub fn init(cfg: GeneratorConfig, mode: VcdMode, stats: NormStats, seed: u64) -> Result<Self> {
        cfg.validate()?;
        stats.validate(&cfg)?;
        let scalars = VcdScalars::new(&cfg, mode);
        let init_gain = match mode {
            VcdMode::Vcd => 0.0f32,
            VcdMode::Baseline => 1.0f32,
        };
        // Variance gain for layers whose input passed an ELU. The vcd model
        // compensates the exact ELU second moment; the plain baseline keeps
        // the classic He convention (preserve Var(f(x)) as if the rectifier
        // halved the energy).
        let (elu_fed_gain, res_pconv_gain) = match mode {
            VcdMode::Vcd => (ELU_VAR_GAIN, 1.0),
            VcdMode::Baseline => (2.0, 2.0),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stfts: Vec<CausalStft> = cfg
            .spec_ffts
            .iter()
            .zip(cfg.spec_hops())
            .map(|(&fft, hop)| CausalStft::new(fft, hop))
            .collect::<Result<_>>()?;

        let widths = cfg.enc_widths();
        let conv_in = ConvUnit::init(
            "enc.conv_in",
            LayerSpec::conv(1, cfg.channels_enc, cfg.kernel_io, 1),
            1.0,
            &mut rng,
        );

        let make_spec = |path: &str, res_idx: usize, ch: usize, rng: &mut ChaCha8Rng| {
            let bins = cfg.spec_ffts[res_idx] / 2 + 1;
            SpecBlockLayer {
                res_idx,
                pconv: ConvUnit::init(&format!("{path}.pconv"), LayerSpec::pointwise(bins, ch), 1.0, rng),
                gain: init_gain,
            }
        };
        let make_res = |path: &str, ch: usize, beta: f32, rng: &mut ChaCha8Rng| ResBlockLayer {
            dconv: ConvUnit::init(
                &format!("{path}.dconv"),
                LayerSpec::depthwise(ch, cfg.kernel_residual, 1),
                2.0,
                rng,
            ),
            pconv: ConvUnit::init(
                &format!("{path}.pconv"),
                LayerSpec::pointwise(ch, ch),
                res_pconv_gain,
                rng,
            ),
            gain: init_gain,
            beta,
        };

        let mut enc_blocks = Vec::with_capacity(cfg.strides.len());
        for (b, &stride) in cfg.strides.iter().enumerate() {
            let c_in = widths[b];
            let c_out = widths[b + 1];
            let path = format!("enc.b{b}");
            let spec = make_spec(&format!("{path}.spec"), b, c_in, &mut rng);
            let res = (0..cfg.n_residual_enc)
                .map(|r| {
                    make_res(&format!("{path}.res{r}"), c_in, scalars.betas_enc[r + 1], &mut rng)
                })
                .collect();
            let k = 2 * stride;
            let down = if b < cfg.full_conv_downsamples {
                Downsample::Full(ConvUnit::init(
                    &format!("{path}.down.conv"),
                    LayerSpec::conv(c_in, c_out, k, stride),
                    elu_fed_gain,
                    &mut rng,
                ))
            } else {
                Downsample::Separable {
                    dconv: ConvUnit::init(
                        &format!("{path}.down.dconv"),
                        LayerSpec::depthwise(c_in, k, stride),
                        elu_fed_gain,
                        &mut rng,
                    ),
                    pconv: ConvUnit::init(
                        &format!("{path}.down.pconv"),
                        LayerSpec::pointwise(c_in, c_out),
                        elu_fed_gain,
                        &mut rng,
                    ),
                }
            };
            enc_blocks.push(EncoderBlock { spec, res, down });
        }

        let c_top = *widths.last().unwrap();
        let quant = QuantizationBlock {
            spec: make_spec("enc.q.spec", cfg.strides.len(), c_top, &mut rng),
            dconv: ConvUnit::init(
                "enc.q.dconv",
                LayerSpec::depthwise(c_top, cfg.kernel_quant, 1),
                elu_fed_gain,
                &mut rng,
            ),
            pconv: ConvUnit::init(
                "enc.q.pconv",
                LayerSpec::pointwise(c_top, cfg.latent_dim),
                elu_fed_gain,
                &mut rng,
            ),
        };

        let dec_widths = cfg.dec_widths();
        let d_top = dec_widths[0];
        let dequant_pconv = ConvUnit::init(
            "dec.dequant.pconv",
            LayerSpec::pointwise(cfg.latent_dim, d_top),
            elu_fed_gain,
            &mut rng,
        );
        let dequant_dconv = ConvUnit::init(
            "dec.dequant.dconv",
            LayerSpec::depthwise(d_top, cfg.kernel_quant, 1),
            elu_fed_gain,
            &mut rng,
        );

        let mut dec_blocks = Vec::with_capacity(cfg.strides.len());
        for (b, &stride) in cfg.strides.iter().rev().enumerate() {
            let c_in = dec_widths[b];
            let c_out = dec_widths[b + 1];
            let path = format!("dec.b{b}");
            let up_pconv = ConvUnit::init(
                &format!("{path}.up.pconv"),
                LayerSpec::pointwise(c_in, c_out),
                elu_fed_gain,
                &mut rng,
            );
            let up_dconvt = ConvUnit::init(
                &format!("{path}.up.dconvt"),
                LayerSpec::depthwise_transposed(c_out, 2 * stride, stride),
                elu_fed_gain,
                &mut rng,
            );
            let res = (0..cfg.n_residual_dec)
                .map(|r| make_res(&format!("{path}.res{r}"), c_out, scalars.betas_dec[r], &mut rng))
                .collect();
            dec_blocks.push(DecoderBlock { up_pconv, up_dconvt, res });
        }

        let conv_out = ConvUnit::init(
            "dec.conv_out",
            LayerSpec::conv(cfg.channels_dec, 1, cfg.kernel_io, 1),
            elu_fed_gain,
            &mut rng,
        );

        Ok(Generator {
            cfg,
            mode,
            scalars,
            stats,
            stfts,
            conv_in,
            enc_blocks,
            quant,
            dequant_pconv,
            dequant_dconv,
            dec_blocks,
            conv_out,
        })
    }

    /// Copy with every residual/spectrogram gain forced to `gain`.
    pub fn with_residual_gains(&self, gain: f32) -> Generator {
        let mut g = self.clone();
        for blk in &mut g.enc_blocks {
            blk.spec.gain = gain;
            for r in &mut blk.res {
                r.gain = gain;
            }
        }
        g.quant.spec.gain = gain;
        for blk in &mut g.dec_blocks {
            for r in &mut blk.res {
                r.gain = gain;
            }
        }
        g
    }

    /// Normalized log-magnitude spectrograms of the raw waveform, one per
    /// resolution.
    pub fn spectrogram_features(&self, raw: &Tensor3) -> Result<Vec<Tensor3>> {
        let mut feats = Vec::with_capacity(self.stfts.len());
        for (i, stft) in self.stfts.iter().enumerate() {
            let mut lm = stft.forward(raw)?.log_magnitude(LOG_SPEC_FLOOR);
            normalize_spec_inplace(&mut lm, &self.stats.spec_mean[i], &self.stats.spec_std[i]);
            feats.push(lm);
        }
        Ok(feats)
    }

    /// Encode a mono waveform into latent frames (one per `hop()` samples).
    /// Offline inputs that are not a multiple of the hop are truncated with a
    /// warning: the trailing partial frame is dropped.
    pub fn encode(&self, wave: &Tensor3) -> Result<Tensor3> {
        self.encode_observed(wave, &mut |_, _| {})
    }

    pub fn encode_observed(
        &self,
        wave: &Tensor3,
        obs: &mut dyn FnMut(&str, &Tensor3),
    ) -> Result<Tensor3> {
        if wave.channels != 1 {
            return Err(Error::config("encoder expects mono input"));
        }
        let hop = self.cfg.hop();
        let keep = wave.time / hop * hop;
        let wave = if keep == wave.time {
            wave.clone()
        } else {
            log::warn!(
                "encoder input of {} samples is not a multiple of {hop}; dropping {} trailing samples",
                wave.time,
                wave.time - keep
            );
            wave.slice_time(0, keep)
        };
        obs("in", &wave);
        if wave.time == 0 {
            return Ok(Tensor3::zeros(wave.batch, self.cfg.latent_dim, 0));
        }
        let specs = self.spectrogram_features(&wave)?;

        let mut x = wave.map(|v| (v - self.stats.wave_mean) / self.stats.wave_std);
        x = self.conv_in.forward(&x)?;
        obs("enc.conv_in", &x);

        for (b, blk) in self.enc_blocks.iter().enumerate() {
            x = apply_spec_block(&x, &blk.spec, &specs[blk.spec.res_idx], self.scalars.alpha_enc)?;
            obs(&format!("enc.b{b}.spec"), &x);
            for (r, res) in blk.res.iter().enumerate() {
                x = apply_residual(&x, res, self.scalars.alpha_enc)?;
                obs(&format!("enc.b{b}.res{r}"), &x);
            }
            if self.scalars.resample_divisor != 1.0 {
                x = x.scale(self.scalars.resample_divisor);
            }
            obs(&format!("enc.b{b}.down.in"), &x);
            elu_inplace(&mut x);
            match &blk.down {
                Downsample::Full(conv) => {
                    x = conv.forward(&x)?;
                }
                Downsample::Separable { dconv, pconv } => {
                    x = dconv.forward(&x)?;
                    elu_inplace(&mut x);
                    x = pconv.forward(&x)?;
                }
            }
            obs(&format!("enc.b{b}.down"), &x);
        }

        x = apply_spec_block(&x, &self.quant.spec, &specs[self.quant.spec.res_idx], self.scalars.alpha_enc)?;
        obs("enc.q.spec", &x);
        elu_inplace(&mut x);
        x = self.quant.dconv.forward(&x)?;
        obs("enc.q.dconv", &x);
        elu_inplace(&mut x);
        x = self.quant.pconv.forward(&x)?;
        obs("enc.q.pconv", &x);
        let z = l2_normalize_rescale(&x);
        obs("q", &z);
        Ok(z)
    }

    /// Decode latent frames back to a waveform of `frames * hop()` samples.
    pub fn decode(&self, z: &Tensor3) -> Result<Tensor3> {
        self.decode_observed(z, &mut |_, _| {})
    }

    pub fn decode_observed(
        &self,
        z: &Tensor3,
        obs: &mut dyn FnMut(&str, &Tensor3),
    ) -> Result<Tensor3> {
        if z.channels != self.cfg.latent_dim {
            return Err(Error::config(format!(
                "decoder expects {} latent channels, got {}",
                self.cfg.latent_dim, z.channels
            )));
        }
        if z.time == 0 {
            return Ok(Tensor3::zeros(z.batch, 1, 0));
        }
        let mut x = z.clone();
        elu_inplace(&mut x);
        x = self.dequant_pconv.forward(&x)?;
        elu_inplace(&mut x);
        x = self.dequant_dconv.forward(&x)?;
        obs("dec.dequant", &x);

        for (b, blk) in self.dec_blocks.iter().enumerate() {
            elu_inplace(&mut x);
            x = blk.up_pconv.forward(&x)?;
            elu_inplace(&mut x);
            x = blk.up_dconvt.forward(&x)?;
            obs(&format!("dec.b{b}.up"), &x);
            for (r, res) in blk.res.iter().enumerate() {
                x = apply_residual(&x, res, self.scalars.alpha_dec)?;
                obs(&format!("dec.b{b}.res{r}"), &x);
            }
            if self.scalars.resample_divisor != 1.0 {
                x = x.scale(self.scalars.resample_divisor);
            }
            obs(&format!("dec.b{b}.out"), &x);
        }

        elu_inplace(&mut x);
        x = self.conv_out.forward(&x)?;
        obs("dec.conv_out", &x);
        x = x.map(|v| v * self.stats.wave_std + self.stats.wave_mean);
        let out = tanh_clip(&x);
        obs("out", &out);
        Ok(out)
    }

    /// Visit every convolution unit in graph order.
    pub fn for_each_unit(&self, f: &mut dyn FnMut(&ConvUnit)) {
        f(&self.conv_in);
        for blk in &self.enc_blocks {
            f(&blk.spec.pconv);
            for r in &blk.res {
                f(&r.dconv);
                f(&r.pconv);
            }
            match &blk.down {
                Downsample::Full(c) => f(c),
                Downsample::Separable { dconv, pconv } => {
                    f(dconv);
                    f(pconv);
                }
            }
        }
        f(&self.quant.spec.pconv);
        f(&self.quant.dconv);
        f(&self.quant.pconv);
        f(&self.dequant_pconv);
        f(&self.dequant_dconv);
        for blk in &self.dec_blocks {
            f(&blk.up_pconv);
            f(&blk.up_dconvt);
            for r in &blk.res {
                f(&r.dconv);
                f(&r.pconv);
            }
        }
        f(&self.conv_out);
    }

    pub fn for_each_unit_mut(&mut self, f: &mut dyn FnMut(&mut ConvUnit)) {
        f(&mut self.conv_in);
        for blk in &mut self.enc_blocks {
            f(&mut blk.spec.pconv);
            for r in &mut blk.res {
                f(&mut r.dconv);
                f(&mut r.pconv);
            }
            match &mut blk.down {
                Downsample::Full(c) => f(c),
                Downsample::Separable { dconv, pconv } => {
                    f(dconv);
                    f(pconv);
                }
            }
        }
        f(&mut self.quant.spec.pconv);
        f(&mut self.quant.dconv);
        f(&mut self.quant.pconv);
        f(&mut self.dequant_pconv);
        f(&mut self.dequant_dconv);
        for blk in &mut self.dec_blocks {
            f(&mut blk.up_pconv);
            f(&mut blk.up_dconvt);
            for r in &mut blk.res {
                f(&mut r.dconv);
                f(&mut r.pconv);
            }
        }
        f(&mut self.conv_out);
    }

    /// Set the residual gain scalars in `gain_entries()` order.
    pub fn set_gains(&mut self, gains: &[f32]) -> Result<()> {
        let expected = self.gain_entries().len();
        if gains.len() != expected {
            return Err(Error::shape(format!("expected {expected} gains, got {}", gains.len())));
        }
        let mut it = gains.iter().copied();
        for blk in &mut self.enc_blocks {
            blk.spec.gain = it.next().unwrap();
            for r in &mut blk.res {
                r.gain = it.next().unwrap();
            }
        }
        self.quant.spec.gain = it.next().unwrap();
        for blk in &mut self.dec_blocks {
            for r in &mut blk.res {
                r.gain = it.next().unwrap();
            }
        }
        Ok(())
    }

    /// Paths of the residual gain scalars, with their current values.
    pub fn gain_entries(&self) -> Vec<(String, f32)> {
        let mut out = Vec::new();
        for (b, blk) in self.enc_blocks.iter().enumerate() {
            out.push((format!("enc.b{b}.spec.gain"), blk.spec.gain));
            for (r, res) in blk.res.iter().enumerate() {
                out.push((format!("enc.b{b}.res{r}.gain"), res.gain));
            }
        }
        out.push(("enc.q.spec.gain".into(), self.quant.spec.gain));
        for (b, blk) in self.dec_blocks.iter().enumerate() {
            for (r, res) in blk.res.iter().enumerate() {
                out.push((format!("dec.b{b}.res{r}.gain"), res.gain));
            }
        }
        out
    }
}

fn normalize_spec_inplace(lm: &mut Tensor3, mean: &[f32], std: &[f32]) {
    for b in 0..lm.batch {
        for k in 0..lm.channels {
            let (m, s) = (mean[k], std[k]);
            for v in lm.row_mut(b, k) {
                *v = (*v - m) / s;
            }
        }
    }
}

/// `y = x + gain * alpha * pconv(s)`. A zero gain short-circuits to `x`, which
/// keeps zero-initialized blocks bitwise identities.
fn apply_spec_block(
    x: &Tensor3,
    sb: &SpecBlockLayer,
    s_norm: &Tensor3,
    alpha: f32,
) -> Result<Tensor3> {
    if sb.gain == 0.0 {
        return Ok(x.clone());
    }
    if s_norm.time != x.time {
        return Err(Error::config(format!(
            "spectrogram resolution mismatch: {} frames vs {} samples",
            s_norm.time, x.time
        )));
    }
    let g = sb.pconv.forward(s_norm)?;
    if g.channels != x.channels {
        return Err(Error::config("spectrogram branch output channels do not match the trunk"));
    }
    add_scaled(x, &g, sb.gain * alpha)
}

/// `x_{n+1} = x_n + gain * alpha * pconv(elu(dconv(elu(x_n / beta_n))))`.
fn apply_residual(x: &Tensor3, rb: &ResBlockLayer, alpha: f32) -> Result<Tensor3> {
    if rb.gain == 0.0 {
        return Ok(x.clone());
    }
    let mut u = x.scale(1.0 / rb.beta);
    elu_inplace(&mut u);
    u = rb.dconv.forward(&u)?;
    elu_inplace(&mut u);
    u = rb.pconv.forward(&u)?;
    if u.channels != x.channels || u.time != x.time {
        return Err(Error::config("residual branch output shape does not match its input"));
    }
    add_scaled(x, &u, rb.gain * alpha)
}

fn add_scaled(x: &Tensor3, u: &Tensor3, k: f32) -> Result<Tensor3> {
    if x.data.len() != u.data.len() {
        return Err(Error::shape("add_scaled operands differ"));
    }
    let mut out = x.clone();
    for (o, &v) in out.data.iter_mut().zip(&u.data) {
        *o += k * v;
    }
    Ok(out)
}

/// A full codec: generator plus quantizer state.
#[derive(Debug, Clone)]
pub struct Codec {
    pub generator: Generator,
    pub books: Codebooks,
}

impl Codec {
    pub fn init(
        cfg: GeneratorConfig,
        qcfg: QuantizerConfig,
        mode: VcdMode,
        stats: NormStats,
        seed: u64,
    ) -> Result<Self> {
        if qcfg.dim != cfg.latent_dim {
            return Err(Error::config(format!(
                "quantizer dim {} != latent dim {}",
                qcfg.dim, cfg.latent_dim
            )));
        }
        let generator = Generator::init(cfg, mode, stats, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let books = Codebooks::random_init(qcfg, &mut rng);
        Ok(Codec { generator, books })
    }

    pub fn default_quantizer_config(cfg: &GeneratorConfig) -> QuantizerConfig {
        QuantizerConfig::new(
            crate::quantizer::DEFAULT_STAGES,
            crate::quantizer::DEFAULT_ENTRIES,
            cfg.latent_dim,
        )
    }

    /// wave -> code frames (offline).
    pub fn encode_frames(&self, wave: &Tensor3, nq: usize) -> Result<Vec<crate::quantizer::CodeFrame>> {
        let z = self.generator.encode(wave)?;
        let (frames, _) = crate::quantizer::rvq_encode(&z, &self.books, nq)?;
        Ok(frames)
    }

    /// code frames -> wave (offline).
    pub fn decode_frames(&self, frames: &[crate::quantizer::CodeFrame], batch: usize) -> Result<Tensor3> {
        let zhat = crate::quantizer::rvq_decode(frames, &self.books, batch)?;
        self.generator.decode(&zhat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::average_channel_variance;
    use crate::conv::sample_standard_normal;
    use rand::Rng;

    fn noise_wave(batch: usize, time: usize, seed: u64) -> Tensor3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..batch * time).map(|_| sample_standard_normal(&mut rng) as f32).collect();
        Tensor3::from_vec(data, batch, 1, time).unwrap()
    }

    fn small_generator(seed: u64) -> Generator {
        let cfg = GeneratorConfig::small();
        let stats = NormStats::identity(&cfg);
        Generator::init(cfg, VcdMode::Vcd, stats, seed).unwrap()
    }

    #[test]
    fn scalar_formulas() {
        let cfg = GeneratorConfig::default();
        let s = VcdScalars::new(&cfg, VcdMode::Vcd);
        assert!((s.alpha_enc - 0.577_35).abs() < 1e-5);
        assert!((s.betas_enc[1] - 1.154_70).abs() < 1e-5);
        assert!((s.betas_enc[2] - (5.0f32 / 3.0).sqrt()).abs() < 1e-6);
        assert!((s.resample_divisor - 0.707_106_77).abs() < 1e-6);
        let b = VcdScalars::new(&cfg, VcdMode::Baseline);
        assert_eq!(b.alpha_enc, 1.0);
        assert!(b.betas_dec.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn config_invariants() {
        let cfg = GeneratorConfig::default();
        assert_eq!(cfg.hop(), 320);
        assert_eq!(cfg.spec_hops(), vec![1, 2, 8, 40, 320]);
        assert_eq!(cfg.enc_widths(), vec![64, 128, 256, 512, 1024]);
        assert_eq!(cfg.dec_widths(), vec![1536, 768, 384, 192, 96]);
        cfg.validate().unwrap();
    }

    #[test]
    fn residual_zero_gain_is_bitwise_identity() {
        let gen = small_generator(0);
        let blk = &gen.enc_blocks[0];
        let x = noise_wave(1, 64, 1);
        let x8 = Tensor3::from_vec(
            (0..8 * 64).map(|i| (i as f32 * 0.01).sin()).collect(),
            1,
            8,
            64,
        )
        .unwrap();
        let y = apply_residual(&x8, &blk.res[0], gen.scalars.alpha_enc).unwrap();
        for (a, b) in x8.data.iter().zip(&y.data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        drop(x);
    }

    #[test]
    fn encoder_shape_and_latent_norm() {
        let gen = small_generator(2);
        let wave = noise_wave(1, 24_000, 3);
        let z = gen.encode(&wave).unwrap();
        assert_eq!(z.time, 75);
        assert_eq!(z.channels, 16);
        let target = (16f32).sqrt();
        for t in 0..z.time {
            let n: f32 = (0..16).map(|c| z.get(0, c, t).powi(2)).sum::<f32>().sqrt();
            assert!((n - target).abs() < 1e-4 * target, "frame {t}: {n}");
        }
    }

    #[test]
    fn encoder_truncates_partial_frame() {
        let gen = small_generator(4);
        let wave = noise_wave(1, 24_000 + 100, 5);
        let z = gen.encode(&wave).unwrap();
        assert_eq!(z.time, 75);
    }

    #[test]
    fn decoder_shape_and_range() {
        let gen = small_generator(6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z = Tensor3::from_vec(
            (0..16 * 75).map(|_| sample_standard_normal(&mut rng) as f32).collect(),
            1,
            16,
            75,
        )
        .unwrap();
        let wave = gen.decode(&z).unwrap();
        assert_eq!(wave.time, 75 * 320);
        assert!(wave.data.iter().all(|&v| v > -1.0 && v < 1.0));
    }

    #[test]
    fn l2_rescale_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = Tensor3::from_vec(
            (0..128 * 64).map(|_| sample_standard_normal(&mut rng) as f32).collect(),
            1,
            128,
            64,
        )
        .unwrap();
        let out = l2_normalize_rescale(&z);
        let target = (128f32).sqrt();
        assert!((target - 11.313_71).abs() < 1e-4);
        for t in 0..64 {
            let n: f32 = (0..128).map(|c| out.get(0, c, t).powi(2)).sum::<f32>().sqrt();
            assert!((n - target).abs() < 1e-5 * target);
        }
        // per-element variance of the rescaled frames is ~1
        let var = average_channel_variance(&out).unwrap();
        assert!((var - 1.0).abs() < 0.1, "var {var}");
        // unit vector in -> scaled by sqrt(C)
        let mut unit = Tensor3::zeros(1, 128, 1);
        unit.set(0, 3, 0, 1.0);
        let u = l2_normalize_rescale(&unit);
        assert!((u.get(0, 3, 0) - target).abs() < 1e-5);
    }

    #[test]
    fn identity_at_init_matches_skeleton_path() {
        // with all gains zero the encoder equals the skeleton: initial conv,
        // dividers/ELUs, downsampling convs, quantization convs, L2 rescale
        let gen = small_generator(9);
        let wave = noise_wave(1, 6400, 10);
        let z = gen.encode(&wave).unwrap();

        let mut x = wave.map(|v| (v - gen.stats.wave_mean) / gen.stats.wave_std);
        x = gen.conv_in.forward(&x).unwrap();
        for blk in &gen.enc_blocks {
            x = x.scale(gen.scalars.resample_divisor);
            elu_inplace(&mut x);
            match &blk.down {
                Downsample::Full(c) => x = c.forward(&x).unwrap(),
                Downsample::Separable { dconv, pconv } => {
                    x = dconv.forward(&x).unwrap();
                    elu_inplace(&mut x);
                    x = pconv.forward(&x).unwrap();
                }
            }
        }
        elu_inplace(&mut x);
        x = gen.quant.dconv.forward(&x).unwrap();
        elu_inplace(&mut x);
        x = gen.quant.pconv.forward(&x).unwrap();
        let skeleton = l2_normalize_rescale(&x);

        assert_eq!(z.data.len(), skeleton.data.len());
        for (a, b) in z.data.iter().zip(&skeleton.data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn spectrogram_block_forced_gain_variance() {
        // normalized spectrogram with unit variance through a LeCun pointwise
        // conv, gain forced to 1: Var(y) ~ 1 + 1/N within 25%
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let bins = 33usize;
        let ch = 64usize;
        let n = 3.0f64;
        let alpha = (1.0 / n.sqrt()) as f32;
        let pconv = ConvUnit::init("t.pconv", LayerSpec::pointwise(bins, ch), 1.0, &mut rng);
        let sb = SpecBlockLayer { res_idx: 0, pconv, gain: 1.0 };
        let time = 512usize;
        let mk = |rng: &mut ChaCha8Rng, c: usize| {
            Tensor3::from_vec(
                (0..c * time).map(|_| sample_standard_normal(rng) as f32).collect(),
                1,
                c,
                time,
            )
            .unwrap()
        };
        let x = mk(&mut rng, ch);
        let s = mk(&mut rng, bins);
        let y = apply_spec_block(&x, &sb, &s, alpha).unwrap();
        let var = average_channel_variance(&y).unwrap() as f64;
        let target = 1.0 + 1.0 / n;
        assert!((var - target).abs() / target < 0.25, "var {var} target {target}");
    }

    #[test]
    fn encoder_causality() {
        let gen = small_generator(12);
        let wave = noise_wave(1, 3200, 13);
        // gains forced to exercise the full graph including spectrograms
        let gen = gen.with_residual_gains(0.5);
        let z1 = gen.encode(&wave).unwrap();
        let mut w2 = wave.clone();
        let t = 4usize; // perturb at sample 320*t + 1
        let idx = w2.idx(0, 0, 320 * t + 1);
        w2.data[idx] += 1.0;
        let z2 = gen.encode(&w2).unwrap();
        for tt in 0..t {
            for c in 0..z1.channels {
                assert_eq!(z1.get(0, c, tt).to_bits(), z2.get(0, c, tt).to_bits());
            }
        }
    }

    #[test]
    fn decoder_causality() {
        let gen = small_generator(14).with_residual_gains(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let z = Tensor3::from_vec(
            (0..16 * 10).map(|_| sample_standard_normal(&mut rng) as f32).collect(),
            1,
            16,
            10,
        )
        .unwrap();
        let w1 = gen.decode(&z).unwrap();
        let mut z2 = z.clone();
        let frame = 6usize;
        let idx = z2.idx(0, 3, frame);
        z2.data[idx] += 1.0;
        let w2 = gen.decode(&z2).unwrap();
        for t in 0..frame * 320 {
            assert_eq!(w1.get(0, 0, t).to_bits(), w2.get(0, 0, t).to_bits());
        }
    }

    #[test]
    fn norm_stats_on_standard_normal_corpus() {
        let cfg = GeneratorConfig::small();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let corpus: Vec<Vec<f32>> = (0..4)
            .map(|_| (0..48_000).map(|_| sample_standard_normal(&mut rng) as f32).collect())
            .collect();
        let stats = compute_norm_stats(&corpus, 24, 7, &cfg).unwrap();
        assert!(stats.wave_mean.abs() < 0.01, "mean {}", stats.wave_mean);
        assert!((stats.wave_std - 1.0).abs() < 0.02, "std {}", stats.wave_std);
        // determinism
        let again = compute_norm_stats(&corpus, 24, 7, &cfg).unwrap();
        assert_eq!(stats, again);
    }

    #[test]
    fn norm_stats_errors() {
        let cfg = GeneratorConfig::small();
        assert!(matches!(compute_norm_stats(&[], 4, 0, &cfg), Err(Error::Stats(_))));
        let constant = vec![vec![0.0f32; 48_000]];
        assert!(matches!(compute_norm_stats(&constant, 4, 0, &cfg), Err(Error::Stats(_))));
    }

    #[test]
    fn codec_roundtrip_shapes() {
        let cfg = GeneratorConfig::small();
        let qcfg = QuantizerConfig::new(4, 64, cfg.latent_dim);
        let stats = NormStats::identity(&cfg);
        let codec = Codec::init(cfg, qcfg, VcdMode::Vcd, stats, 17).unwrap();
        let wave = noise_wave(1, 3200, 18).scale(0.3);
        let frames = codec.encode_frames(&wave, 4).unwrap();
        assert_eq!(frames.len(), 10);
        let out = codec.decode_frames(&frames, 1).unwrap();
        assert_eq!(out.time, 3200);
        assert!(out.data.iter().all(|&v| v > -1.0 && v < 1.0));
    }

    #[test]
    fn gain_entries_cover_all_blocks() {
        let gen = small_generator(19);
        let gains = gen.gain_entries();
        // 4 enc blocks * (1 spec + 2 res) + 1 quant spec + 4 dec blocks * 3 res
        assert_eq!(gains.len(), 4 * 3 + 1 + 4 * 3);
        assert!(gains.iter().all(|(_, g)| *g == 0.0));
    }

    #[test]
    fn forward_output_all_finite() {
        let gen = small_generator(20).with_residual_gains(1.0);
        let wave = noise_wave(2, 3200, 21);
        let z = gen.encode(&wave).unwrap();
        assert!(z.all_finite());
        let out = gen.decode(&z).unwrap();
        assert!(out.all_finite());
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = small_generator(22);
        let b = small_generator(22);
        let mut buf_a = Vec::new();
        a.for_each_unit(&mut |u| buf_a.extend_from_slice(&u.weights.folded));
        let mut buf_b = Vec::new();
        b.for_each_unit(&mut |u| buf_b.extend_from_slice(&u.weights.folded));
        assert_eq!(buf_a, buf_b);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let _: f64 = rng.gen();
    }
}
