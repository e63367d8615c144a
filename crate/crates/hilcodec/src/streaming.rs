//! Chunked inference with per-layer history caches, bit-identical to the
//! offline passes, plus the real-time-factor harness.
//!
//! Every causal conv keeps its last `(kernel-1)*dilation` inputs (zeros at
//! stream start, matching offline zero padding), transposed convs keep a
//! `kernel - stride` overlap-add tail, and each spectrogram resolution
//! buffers `fft-1` raw samples. Offline and streamed paths share the same
//! inner kernels, so any chunking of the input reproduces the offline output
//! bit for bit. Chunks of any size are accepted; partial data simply waits in
//! the caches until enough samples arrive.

use crate::conv::{ConvStream, ConvTransposeStream};
use crate::error::{Error, Result};
use crate::generator::{Codec, Downsample};
use crate::quantizer::{rvq_decode, rvq_encode, CodeFrame};
use crate::stft::StftStream;
use crate::tensor::{elu_inplace, tanh_clip, Tensor3};

struct ResStream {
    dconv: ConvStream,
}

enum DownStream {
    Full(ConvStream),
    Separable { dconv: ConvStream },
}

struct EncBlockStream {
    res: Vec<ResStream>,
    down: DownStream,
}

/// Streaming encoder over a borrowed codec.
pub struct EncoderStream<'a> {
    codec: &'a Codec,
    nq: usize,
    stfts: Vec<StftStream>,
    conv_in: ConvStream,
    blocks: Vec<EncBlockStream>,
    quant_dconv: ConvStream,
}

impl<'a> EncoderStream<'a> {
    pub fn new(codec: &'a Codec, nq: usize) -> Result<Self> {
        if nq < 1 || nq > codec.books.cfg.stages {
            return Err(Error::config(format!("nq = {nq} outside 1..={}", codec.books.cfg.stages)));
        }
        let gen = &codec.generator;
        let stfts = gen.stfts.iter().map(|s| StftStream::new(s.clone())).collect();
        let blocks = gen
            .enc_blocks
            .iter()
            .map(|blk| EncBlockStream {
                res: blk.res.iter().map(|r| ResStream { dconv: ConvStream::new(r.dconv.spec, 1) }).collect(),
                down: match &blk.down {
                    Downsample::Full(c) => DownStream::Full(ConvStream::new(c.spec, 1)),
                    Downsample::Separable { dconv, .. } => {
                        DownStream::Separable { dconv: ConvStream::new(dconv.spec, 1) }
                    }
                },
            })
            .collect();
        Ok(EncoderStream {
            codec,
            nq,
            stfts,
            conv_in: ConvStream::new(gen.conv_in.spec, 1),
            blocks,
            quant_dconv: ConvStream::new(gen.quant.dconv.spec, 1),
        })
    }

    pub fn reset(&mut self) {
        for s in &mut self.stfts {
            s.reset();
        }
        self.conv_in.reset();
        for b in &mut self.blocks {
            for r in &mut b.res {
                r.dconv.reset();
            }
            match &mut b.down {
                DownStream::Full(c) => c.reset(),
                DownStream::Separable { dconv } => dconv.reset(),
            }
        }
        self.quant_dconv.reset();
    }

    /// Push raw samples; returns the code frames that became complete.
    pub fn push(&mut self, samples: &[f32]) -> Result<Vec<CodeFrame>> {
        let gen = &self.codec.generator;

        // spectrogram features for the new samples, one tensor per resolution
        let mut specs = Vec::with_capacity(self.stfts.len());
        for (i, stream) in self.stfts.iter_mut().enumerate() {
            let mut lm = stream.push(samples).log_magnitude(crate::generator::LOG_SPEC_FLOOR);
            normalize_spec(&mut lm, &gen.stats.spec_mean[i], &gen.stats.spec_std[i]);
            specs.push(lm);
        }

        let chunk = Tensor3::from_samples(samples)
            .map(|v| (v - gen.stats.wave_mean) / gen.stats.wave_std);
        let mut x = self.conv_in.push(&chunk, &gen.conv_in.weights)?;

        for (blk, state) in gen.enc_blocks.iter().zip(&mut self.blocks) {
            x = stream_spec_block(&x, &blk.spec, &specs[blk.spec.res_idx], gen.scalars.alpha_enc)?;
            for (r, rs) in blk.res.iter().zip(&mut state.res) {
                x = stream_residual(&x, r, gen.scalars.alpha_enc, &mut rs.dconv)?;
            }
            if gen.scalars.resample_divisor != 1.0 {
                x = x.scale(gen.scalars.resample_divisor);
            }
            elu_inplace(&mut x);
            match (&blk.down, &mut state.down) {
                (Downsample::Full(c), DownStream::Full(cs)) => {
                    x = cs.push(&x, &c.weights)?;
                }
                (Downsample::Separable { dconv, pconv }, DownStream::Separable { dconv: ds }) => {
                    x = ds.push(&x, &dconv.weights)?;
                    elu_inplace(&mut x);
                    x = pconv.forward(&x)?;
                }
                _ => unreachable!("stream state built from the same graph"),
            }
        }

        x = stream_spec_block(
            &x,
            &gen.quant.spec,
            &specs[gen.quant.spec.res_idx],
            gen.scalars.alpha_enc,
        )?;
        elu_inplace(&mut x);
        x = self.quant_dconv.push(&x, &gen.quant.dconv.weights)?;
        elu_inplace(&mut x);
        x = gen.quant.pconv.forward(&x)?;
        if x.time == 0 {
            return Ok(Vec::new());
        }
        let z = crate::generator::l2_normalize_rescale(&x);
        let (frames, _) = rvq_encode(&z, &self.codec.books, self.nq)?;
        Ok(frames)
    }
}

struct DecBlockStream {
    up_dconvt: ConvTransposeStream,
    res: Vec<ResStream>,
}

/// Streaming decoder over a borrowed codec. Each code frame yields exactly
/// `hop()` output samples; nothing is left pending at frame boundaries.
pub struct DecoderStream<'a> {
    codec: &'a Codec,
    dequant_dconv: ConvStream,
    blocks: Vec<DecBlockStream>,
    conv_out: ConvStream,
}

impl<'a> DecoderStream<'a> {
    pub fn new(codec: &'a Codec) -> Self {
        let gen = &codec.generator;
        let blocks = gen
            .dec_blocks
            .iter()
            .map(|blk| DecBlockStream {
                up_dconvt: ConvTransposeStream::new(blk.up_dconvt.spec, 1),
                res: blk.res.iter().map(|r| ResStream { dconv: ConvStream::new(r.dconv.spec, 1) }).collect(),
            })
            .collect();
        DecoderStream {
            codec,
            dequant_dconv: ConvStream::new(gen.dequant_dconv.spec, 1),
            blocks,
            conv_out: ConvStream::new(gen.conv_out.spec, 1),
        }
    }

    pub fn reset(&mut self) {
        self.dequant_dconv.reset();
        for b in &mut self.blocks {
            b.up_dconvt.reset();
            for r in &mut b.res {
                r.dconv.reset();
            }
        }
        self.conv_out.reset();
    }

    /// Decode frames; on a corrupt index the state is left untouched.
    pub fn push(&mut self, frames: &[CodeFrame]) -> Result<Vec<f32>> {
        if frames.is_empty() {
            return Ok(Vec::new());
        }
        let gen = &self.codec.generator;
        // validate before mutating any state
        let zhat = rvq_decode(frames, &self.codec.books, 1)?;

        let mut x = zhat;
        elu_inplace(&mut x);
        x = gen.dequant_pconv.forward(&x)?;
        elu_inplace(&mut x);
        x = self.dequant_dconv.push(&x, &gen.dequant_dconv.weights)?;

        for (blk, state) in gen.dec_blocks.iter().zip(&mut self.blocks) {
            elu_inplace(&mut x);
            x = blk.up_pconv.forward(&x)?;
            elu_inplace(&mut x);
            x = state.up_dconvt.push(&x, &blk.up_dconvt.weights)?;
            for (r, rs) in blk.res.iter().zip(&mut state.res) {
                x = stream_residual(&x, r, gen.scalars.alpha_dec, &mut rs.dconv)?;
            }
            if gen.scalars.resample_divisor != 1.0 {
                x = x.scale(gen.scalars.resample_divisor);
            }
        }

        elu_inplace(&mut x);
        x = self.conv_out.push(&x, &gen.conv_out.weights)?;
        x = x.map(|v| v * gen.stats.wave_std + gen.stats.wave_mean);
        let out = tanh_clip(&x);
        Ok(out.data)
    }
}

fn normalize_spec(lm: &mut Tensor3, mean: &[f32], std: &[f32]) {
    for k in 0..lm.channels {
        let (m, s) = (mean[k], std[k]);
        for v in lm.row_mut(0, k) {
            *v = (*v - m) / s;
        }
    }
}

fn stream_spec_block(
    x: &Tensor3,
    sb: &crate::generator::SpecBlockLayer,
    s_frames: &Tensor3,
    alpha: f32,
) -> Result<Tensor3> {
    if sb.gain == 0.0 {
        return Ok(x.clone());
    }
    if s_frames.time != x.time {
        return Err(Error::config(format!(
            "stream desync: {} spectrogram frames vs {} trunk frames",
            s_frames.time, x.time
        )));
    }
    let g = sb.pconv.forward(s_frames)?;
    add_scaled(x, &g, sb.gain * alpha)
}

fn stream_residual(
    x: &Tensor3,
    rb: &crate::generator::ResBlockLayer,
    alpha: f32,
    dconv_state: &mut ConvStream,
) -> Result<Tensor3> {
    if rb.gain == 0.0 {
        return Ok(x.clone());
    }
    let mut u = x.scale(1.0 / rb.beta);
    elu_inplace(&mut u);
    u = dconv_state.push(&u, &rb.dconv.weights)?;
    elu_inplace(&mut u);
    u = rb.pconv.forward(&u)?;
    add_scaled(x, &u, rb.gain * alpha)
}

fn add_scaled(x: &Tensor3, u: &Tensor3, k: f32) -> Result<Tensor3> {
    if x.data.len() != u.data.len() {
        return Err(Error::shape("stream add_scaled operands differ"));
    }
    let mut out = x.clone();
    for (o, &v) in out.data.iter_mut().zip(&u.data) {
        *o += k * v;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Real-time factor harness
// ---------------------------------------------------------------------------

use std::cell::Cell;
use std::rc::Rc;
use std::time::{Duration, Instant};

/// Time source for the RTF harness.
pub trait Clock {
    fn now(&mut self) -> Duration;
}

/// Wall clock backed by `Instant`.
pub struct MonotonicClock(Instant);

impl MonotonicClock {
    pub fn new() -> Self {
        MonotonicClock(Instant::now())
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now(&mut self) -> Duration {
        self.0.elapsed()
    }
}

/// Deterministic clock for harness self-tests; the workload advances it.
#[derive(Clone)]
pub struct VirtualClock {
    t: Rc<Cell<Duration>>,
}

impl VirtualClock {
    pub fn new() -> Self {
        VirtualClock { t: Rc::new(Cell::new(Duration::ZERO)) }
    }

    pub fn advance(&self, d: Duration) {
        self.t.set(self.t.get() + d);
    }
}

impl Default for VirtualClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for VirtualClock {
    fn now(&mut self) -> Duration {
        self.t.get()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RtfReport {
    /// Audio seconds per wall second while encoding; > 1 is faster than
    /// real time.
    pub encode_rtf: f64,
    pub decode_rtf: f64,
    pub chunk: usize,
    pub seconds: f64,
}

impl RtfReport {
    pub fn to_csv(&self) -> String {
        format!(
            "key,value\nencode_rtf,{:.4}\ndecode_rtf,{:.4}\nchunk,{}\nseconds,{}\n",
            self.encode_rtf, self.decode_rtf, self.chunk, self.seconds
        )
    }
}

/// Time the encode and decode phases of a chunked workload and report audio
/// seconds over wall seconds for each.
pub fn measure_rtf(
    clock: &mut dyn Clock,
    seconds: f64,
    chunk: usize,
    n_chunks: usize,
    mut encode_chunk: impl FnMut(usize),
    mut decode_chunk: impl FnMut(usize),
) -> RtfReport {
    let t0 = clock.now();
    for i in 0..n_chunks {
        encode_chunk(i);
    }
    let t1 = clock.now();
    for i in 0..n_chunks {
        decode_chunk(i);
    }
    let t2 = clock.now();
    let enc = (t1 - t0).as_secs_f64();
    let dec = (t2 - t1).as_secs_f64();
    RtfReport {
        encode_rtf: if enc > 0.0 { seconds / enc } else { f64::INFINITY },
        decode_rtf: if dec > 0.0 { seconds / dec } else { f64::INFINITY },
        chunk,
        seconds,
    }
}

/// Chunked single-threaded RTF measurement of a codec on deterministic noise.
pub fn bench_rtf(
    codec: &Codec,
    nq: usize,
    seconds: f64,
    chunk: usize,
    clock: &mut dyn Clock,
) -> Result<RtfReport> {
    let hop = codec.generator.cfg.hop();
    if chunk == 0 || chunk % hop != 0 {
        return Err(Error::config(format!("chunk must be a positive multiple of {hop}")));
    }
    let sr = codec.generator.cfg.sample_rate as usize;
    let total = ((seconds * sr as f64) as usize / chunk).max(1) * chunk;
    let seconds = total as f64 / sr as f64;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xbe9c);
    let audio: Vec<f32> = (0..total)
        .map(|_| (crate::conv::sample_standard_normal(&mut rng) as f32 * 0.2).clamp(-1.0, 1.0))
        .collect();

    let mut enc = EncoderStream::new(codec, nq)?;
    let mut all_frames: Vec<Vec<CodeFrame>> = Vec::with_capacity(total / chunk);
    // dry pass to collect frames for the decode phase without timing skew
    for c in audio.chunks(chunk) {
        all_frames.push(enc.push(c)?);
    }
    enc.reset();
    let mut dec = DecoderStream::new(codec);
    let failure: std::cell::RefCell<Option<Error>> = std::cell::RefCell::new(None);
    let n_chunks = total / chunk;
    let report = measure_rtf(
        clock,
        seconds,
        chunk,
        n_chunks,
        |i| {
            if failure.borrow().is_none() {
                if let Err(e) = enc.push(&audio[i * chunk..(i + 1) * chunk]) {
                    *failure.borrow_mut() = Some(e);
                }
            }
        },
        |i| {
            if failure.borrow().is_none() {
                if let Err(e) = dec.push(&all_frames[i]) {
                    *failure.borrow_mut() = Some(e);
                }
            }
        },
    );
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(report)
}

/// Controlled-clock self-test of the harness: a synthetic workload that
/// "runs" at exactly twice real time must report RTF 2.0 for both phases.
pub fn rtf_selftest(seconds: f64, chunk: usize, sample_rate: u32) -> RtfReport {
    let n_chunks = ((seconds * sample_rate as f64) as usize / chunk).max(1);
    let seconds = n_chunks as f64 * chunk as f64 / sample_rate as f64;
    let chunk_audio = chunk as f64 / sample_rate as f64;
    let vc = VirtualClock::new();
    let mut clock = vc.clone();
    let half = Duration::from_secs_f64(chunk_audio / 2.0);
    measure_rtf(
        &mut clock,
        seconds,
        chunk,
        n_chunks,
        |_| vc.advance(half),
        |_| vc.advance(half),
    )
}
