//! Signal-propagation measurement, depth sweeps, parameter/MAC accounting,
//! and the 2f-model score mapping.

use crate::error::{Error, Result};
use crate::generator::{
    compute_norm_stats, Downsample, Generator, GeneratorConfig, NormStats, VcdMode,
};
use crate::quantizer::QuantizerConfig;
use crate::tensor::Tensor3;
use rayon::prelude::*;

/// Average channel variance: per-channel variance over the batch and time
/// dimensions, then the mean across channels.
pub fn average_channel_variance(x: &Tensor3) -> Result<f32> {
    let n = x.batch * x.time;
    if n < 2 {
        return Err(Error::config("average_channel_variance needs batch*time >= 2"));
    }
    let mut total = 0.0f64;
    for c in 0..x.channels {
        let mut sum = 0.0f64;
        let mut sumsq = 0.0f64;
        for b in 0..x.batch {
            for &v in x.row(b, c) {
                sum += v as f64;
                sumsq += (v as f64) * (v as f64);
            }
        }
        let mean = sum / n as f64;
        total += (sumsq / n as f64 - mean * mean).max(0.0);
    }
    Ok((total / x.channels as f64) as f32)
}

#[derive(Debug, Clone)]
pub struct VarianceReport {
    pub mode: VcdMode,
    pub gain_override: bool,
    pub seed: u64,
    /// `(tap path, variance)` in forward topological order.
    pub taps: Vec<(String, f32)>,
}

impl VarianceReport {
    pub fn variance_of(&self, tap: &str) -> Option<f32> {
        self.taps.iter().find(|(n, _)| n == tap).map(|(_, v)| *v)
    }

    /// max/min variance over all taps.
    pub fn dynamic_range(&self) -> f32 {
        let mut lo = f32::INFINITY;
        let mut hi = 0.0f32;
        for &(_, v) in &self.taps {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo <= 0.0 {
            f32::INFINITY
        } else {
            hi / lo
        }
    }

    /// Ratio of the terminal residual-tap variance to the block input
    /// variance for every encoder and decoder block.
    pub fn per_block_terminal_ratios(&self, cfg: &GeneratorConfig) -> Vec<(String, f32)> {
        let mut out = Vec::new();
        let n_blocks = cfg.strides.len();
        for b in 0..n_blocks {
            let input = if b == 0 {
                self.variance_of("enc.conv_in")
            } else {
                self.variance_of(&format!("enc.b{}.down", b - 1))
            };
            let terminal = self.variance_of(&format!("enc.b{b}.res{}", cfg.n_residual_enc - 1));
            if let (Some(i), Some(t)) = (input, terminal) {
                out.push((format!("enc.b{b}"), t / i));
            }
        }
        for b in 0..n_blocks {
            let input = self.variance_of(&format!("dec.b{b}.up"));
            let terminal = self.variance_of(&format!("dec.b{b}.res{}", cfg.n_residual_dec - 1));
            if let (Some(i), Some(t)) = (input, terminal) {
                out.push((format!("dec.b{b}"), t / i));
            }
        }
        out
    }

    /// Ratio of each residual tap's variance to the tap before it, across
    /// every block (the per-residual-block growth factor).
    pub fn per_residual_ratios(&self, cfg: &GeneratorConfig) -> Vec<f32> {
        let mut out = Vec::new();
        for b in 0..cfg.strides.len() {
            let mut prev = self.variance_of(&format!("enc.b{b}.spec"));
            for r in 0..cfg.n_residual_enc {
                let cur = self.variance_of(&format!("enc.b{b}.res{r}"));
                if let (Some(p), Some(c)) = (prev, cur) {
                    out.push(c / p);
                }
                prev = cur;
            }
            let mut prev = self.variance_of(&format!("dec.b{b}.up"));
            for r in 0..cfg.n_residual_dec {
                let cur = self.variance_of(&format!("dec.b{b}.res{r}"));
                if let (Some(p), Some(c)) = (prev, cur) {
                    out.push(c / p);
                }
                prev = cur;
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("tap,variance\n");
        for (name, v) in &self.taps {
            s.push_str(&format!("{name},{v}\n"));
        }
        s
    }
}

/// Input size for the variance measurements: batch * time >= 2^15.
const PROP_BATCH: usize = 4;
const PROP_TIME: usize = 8320; // 26 latent frames; 4 * 8320 = 33280 > 2^15

/// Normalization statistics matched to the i.i.d. standard-normal probe
/// input, computed deterministically from the same distribution.
pub fn white_noise_stats(cfg: &GeneratorConfig, seed: u64) -> Result<NormStats> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5bd1_e995);
    let chunk = cfg.sample_rate as usize;
    let corpus: Vec<Vec<f32>> = (0..4)
        .map(|_| {
            (0..2 * chunk)
                .map(|_| crate::conv::sample_standard_normal(&mut rng) as f32)
                .collect()
        })
        .collect();
    compute_norm_stats(&corpus, 12, seed, cfg)
}

/// Run an i.i.d. standard-normal input through a freshly initialized model
/// and record the average channel variance at every tap. The decoder is fed
/// the encoder's latents (no quantization).
pub fn signal_propagation(
    cfg: &GeneratorConfig,
    seed: u64,
    mode: VcdMode,
    gain_override: bool,
) -> Result<VarianceReport> {
    let stats = white_noise_stats(cfg, seed)?;
    let gen = Generator::init(cfg.clone(), mode, stats, seed)?;
    let gen = if gain_override { gen.with_residual_gains(1.0) } else { gen };
    signal_propagation_of(&gen, seed, gain_override)
}

/// As [`signal_propagation`], for an already-built generator.
pub fn signal_propagation_of(
    gen: &Generator,
    seed: u64,
    gain_override: bool,
) -> Result<VarianceReport> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x2545_f491);
    let data: Vec<f32> = (0..PROP_BATCH * PROP_TIME)
        .map(|_| crate::conv::sample_standard_normal(&mut rng) as f32)
        .collect();
    let wave = Tensor3::from_vec(data, PROP_BATCH, 1, PROP_TIME)?;

    let mut taps: Vec<(String, f32)> = Vec::new();
    {
        let mut obs = |name: &str, t: &Tensor3| {
            if let Ok(v) = average_channel_variance(t) {
                taps.push((name.to_string(), v));
            }
        };
        let z = gen.encode_observed(&wave, &mut obs)?;
        gen.decode_observed(&z, &mut obs)?;
    }
    Ok(VarianceReport { mode: gen.mode, gain_override, seed, taps })
}

#[derive(Debug, Clone)]
pub struct DepthPoint {
    pub depth: usize,
    pub dynamic_range: f32,
}

/// Signal propagation while varying the residual blocks per encoder/decoder
/// block. Configurations run in parallel; each owns its weights.
pub fn depth_sweep(
    template: &GeneratorConfig,
    depths: &[usize],
    mode: VcdMode,
    seed: u64,
) -> Result<Vec<DepthPoint>> {
    depths
        .par_iter()
        .map(|&d| {
            let cfg = GeneratorConfig {
                n_residual_enc: d,
                n_residual_dec: d,
                ..template.clone()
            };
            let report = signal_propagation(&cfg, seed, mode, true)?;
            Ok(DepthPoint { depth: d, dynamic_range: report.dynamic_range() })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Complexity accounting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComplexityReport {
    pub params_encoder: u64,
    pub params_decoder: u64,
    pub params_quantizer: u64,
    /// Multiply-adds to encode one second of audio.
    pub mac_encode: u64,
    /// Multiply-adds to decode one second of audio.
    pub mac_decode: u64,
}

impl ComplexityReport {
    pub fn params_total(&self) -> u64 {
        self.params_encoder + self.params_decoder + self.params_quantizer
    }

    pub fn to_csv(&self) -> String {
        format!(
            "key,value\nparams_encoder,{}\nparams_decoder,{}\nparams_quantizer,{}\nparams_total,{}\nmac_encode,{}\nmac_decode,{}\n",
            self.params_encoder,
            self.params_decoder,
            self.params_quantizer,
            self.params_total(),
            self.mac_encode,
            self.mac_decode
        )
    }
}

/// Parameters of one weight-normalized conv: direction + per-channel gain +
/// bias.
fn conv_params(spec: &crate::conv::LayerSpec) -> u64 {
    (spec.weight_len() + 2 * spec.out_channels) as u64
}

/// One multiply-add counts as 1. Forward convs: out*in*k*out_time/groups;
/// transposed convs: in*out*k*in_time/groups.
fn conv_macs(spec: &crate::conv::LayerSpec, in_time: usize) -> (u64, usize) {
    let per_frame =
        (spec.out_channels * spec.in_channels * spec.kernel / spec.groups()) as u64;
    if spec.is_transposed() {
        let out_time = in_time * spec.stride;
        (per_frame * in_time as u64, out_time)
    } else {
        let out_time = if in_time == 0 { 0 } else { (in_time - 1) / spec.stride + 1 };
        (per_frame * out_time as u64, out_time)
    }
}

/// Exact parameter and multiply-add sums over the layer graph, for one
/// second of audio at the configured sample rate.
pub fn count_complexity(cfg: &GeneratorConfig, qcfg: &QuantizerConfig) -> Result<ComplexityReport> {
    let stats = NormStats::identity(cfg);
    let gen = Generator::init(cfg.clone(), VcdMode::Vcd, stats, 0)?;
    let second = cfg.sample_rate as usize;
    let frames = second / cfg.hop();

    let mut params_enc = 0u64;
    let mut mac_enc = 0u64;
    // encoder trunk
    let (m, mut t) = conv_macs(&gen.conv_in.spec, second);
    params_enc += conv_params(&gen.conv_in.spec);
    mac_enc += m;
    for blk in &gen.enc_blocks {
        params_enc += conv_params(&blk.spec.pconv.spec) + 1; // + gain scalar
        mac_enc += conv_macs(&blk.spec.pconv.spec, t).0;
        for r in &blk.res {
            params_enc += conv_params(&r.dconv.spec) + conv_params(&r.pconv.spec) + 1;
            mac_enc += conv_macs(&r.dconv.spec, t).0 + conv_macs(&r.pconv.spec, t).0;
        }
        match &blk.down {
            Downsample::Full(c) => {
                params_enc += conv_params(&c.spec);
                let (m, nt) = conv_macs(&c.spec, t);
                mac_enc += m;
                t = nt;
            }
            Downsample::Separable { dconv, pconv } => {
                params_enc += conv_params(&dconv.spec) + conv_params(&pconv.spec);
                let (m1, nt) = conv_macs(&dconv.spec, t);
                let (m2, _) = conv_macs(&pconv.spec, nt);
                mac_enc += m1 + m2;
                t = nt;
            }
        }
    }
    debug_assert_eq!(t, frames);
    params_enc += conv_params(&gen.quant.spec.pconv.spec) + 1;
    mac_enc += conv_macs(&gen.quant.spec.pconv.spec, t).0;
    params_enc += conv_params(&gen.quant.dconv.spec);
    mac_enc += conv_macs(&gen.quant.dconv.spec, t).0;
    params_enc += conv_params(&gen.quant.pconv.spec);
    mac_enc += conv_macs(&gen.quant.pconv.spec, t).0;

    // decoder
    let mut params_dec = 0u64;
    let mut mac_dec = 0u64;
    let mut t = frames;
    params_dec += conv_params(&gen.dequant_pconv.spec) + conv_params(&gen.dequant_dconv.spec);
    mac_dec += conv_macs(&gen.dequant_pconv.spec, t).0 + conv_macs(&gen.dequant_dconv.spec, t).0;
    for blk in &gen.dec_blocks {
        params_dec += conv_params(&blk.up_pconv.spec) + conv_params(&blk.up_dconvt.spec);
        mac_dec += conv_macs(&blk.up_pconv.spec, t).0;
        let (m, nt) = conv_macs(&blk.up_dconvt.spec, t);
        mac_dec += m;
        t = nt;
        for r in &blk.res {
            params_dec += conv_params(&r.dconv.spec) + conv_params(&r.pconv.spec) + 1;
            mac_dec += conv_macs(&r.dconv.spec, t).0 + conv_macs(&r.pconv.spec, t).0;
        }
    }
    debug_assert_eq!(t, second);
    params_dec += conv_params(&gen.conv_out.spec);
    mac_dec += conv_macs(&gen.conv_out.spec, t).0;

    // quantizer: codebook vectors; RVQ encode/decode cost is per latent frame
    let params_q = (qcfg.stages * qcfg.entries * qcfg.dim) as u64;
    let mac_q_encode = (qcfg.stages * qcfg.entries * qcfg.dim * frames) as u64;
    let mac_q_decode = (qcfg.stages * qcfg.dim * frames) as u64;

    Ok(ComplexityReport {
        params_encoder: params_enc,
        params_decoder: params_dec,
        params_quantizer: params_q,
        mac_encode: mac_enc + mac_q_encode,
        mac_decode: mac_dec + mac_q_decode,
    })
}

// ---------------------------------------------------------------------------
// 2f-model
// ---------------------------------------------------------------------------

/// Objective quality score from the PEAQ model output variables AvgModDiff1
/// and ADB, clamped to [0, 100].
pub fn two_f_model_score(avg_mod_diff1: f64, adb: f64) -> f64 {
    let score = 56.1345 / (1.0 + (-0.0282 * avg_mod_diff1 - 0.8628).powi(2))
        - 27.1451 * adb
        + 86.3515;
    score.clamp(0.0, 100.0)
}
