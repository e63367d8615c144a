//! Causal 1-D convolutions, weight normalization, and initialization.
//!
//! Offline and streamed paths share the same inner kernels (`conv_valid`,
//! `scatter_transposed`), so both accumulate in the same fixed order
//! (kernel-major, channel-inner, with four fixed partial-sum lanes in the
//! channel loop) and produce bitwise identical output. The lanes break the
//! FP-add latency chain; what matters for reproducibility is that the order
//! is deterministic and identical in both paths, which sharing the kernels
//! guarantees.

use crate::error::{Error, Result};
use crate::tensor::Tensor3;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Variance gain that compensates an ELU on the layer input.
///
/// For z ~ N(0,1), E[elu(z)^2] = 1 + e^2 Phi(-2) - 2 e^(1/2) Phi(-1); a layer
/// reading an ELU-activated signal preserves variance when its weight variance
/// is `ELU_VAR_GAIN / fan_in` instead of the plain 1/fan_in.
pub const ELU_VAR_GAIN: f64 = 1.550_591_1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvKind {
    Conv,
    DepthwiseConv,
    PointwiseConv,
    TransposedConv,
    /// Depthwise transposed convolution (per-channel upsampling).
    DepthwiseTransposedConv,
}

/// Geometry of one convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: ConvKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub causal: bool,
    pub bias: bool,
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec {
            kind: ConvKind::Conv,
            in_channels,
            out_channels,
            kernel,
            stride,
            dilation: 1,
            causal: true,
            bias: true,
        }
    }

    pub fn depthwise(channels: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec { kind: ConvKind::DepthwiseConv, in_channels: channels, ..Self::conv(channels, channels, kernel, stride) }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec { kind: ConvKind::PointwiseConv, ..Self::conv(in_channels, out_channels, 1, 1) }
    }

    pub fn transposed(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec { kind: ConvKind::TransposedConv, ..Self::conv(in_channels, out_channels, kernel, stride) }
    }

    pub fn depthwise_transposed(channels: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec { kind: ConvKind::DepthwiseTransposedConv, ..Self::conv(channels, channels, kernel, stride) }
    }

    pub fn groups(&self) -> usize {
        match self.kind {
            ConvKind::DepthwiseConv | ConvKind::DepthwiseTransposedConv => self.in_channels,
            _ => 1,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel / self.groups()
    }

    /// History needed to the left of the newest sample: `(kernel-1)*dilation`.
    pub fn left_context(&self) -> usize {
        (self.kernel - 1) * self.dilation
    }

    pub fn is_transposed(&self) -> bool {
        matches!(self.kind, ConvKind::TransposedConv | ConvKind::DepthwiseTransposedConv)
    }

    /// Number of weight-norm direction parameters.
    pub fn weight_len(&self) -> usize {
        self.out_channels * (self.in_channels / self.groups()) * self.kernel
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel < 1 || self.stride < 1 || self.dilation < 1 {
            return Err(Error::config(format!("kernel/stride/dilation must be >= 1: {self:?}")));
        }
        match self.kind {
            ConvKind::DepthwiseConv | ConvKind::DepthwiseTransposedConv => {
                if self.in_channels != self.out_channels {
                    return Err(Error::config("depthwise conv requires in_channels = out_channels"));
                }
            }
            ConvKind::PointwiseConv => {
                if self.kernel != 1 || self.stride != 1 || self.dilation != 1 {
                    return Err(Error::config("pointwise conv requires kernel = stride = dilation = 1"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Weight-norm parameterization: folded weight is `g * v / ||v||` per output
/// channel.
#[derive(Debug, Clone)]
pub struct WeightNormParams {
    /// Direction, shape `[out][in/groups][kernel]`, flattened.
    pub direction: Vec<f32>,
    /// Per-output-channel gain.
    pub gain: Vec<f32>,
}

/// Fold weight-norm parameters into a plain kernel.
pub fn fold_weight_norm(spec: &LayerSpec, params: &WeightNormParams) -> Result<Vec<f32>> {
    let per_out = (spec.in_channels / spec.groups()) * spec.kernel;
    if params.direction.len() != spec.out_channels * per_out || params.gain.len() != spec.out_channels {
        return Err(Error::shape("weight-norm parameter shapes do not match layer spec"));
    }
    let mut folded = Vec::with_capacity(params.direction.len());
    for o in 0..spec.out_channels {
        let row = &params.direction[o * per_out..(o + 1) * per_out];
        let norm = (row.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>()).sqrt();
        if norm == 0.0 {
            return Err(Error::DegenerateWeight(format!("zero-norm direction for output channel {o}")));
        }
        let scale = (params.gain[o] as f64 / norm) as f32;
        folded.extend(row.iter().map(|&x| x * scale));
    }
    Ok(folded)
}

/// Weights of one layer: weight-norm parameters plus derived folded kernel.
#[derive(Debug, Clone)]
pub struct ConvWeights {
    pub wn: WeightNormParams,
    pub bias: Vec<f32>,
    /// Folded kernel, kept in sync with `wn`.
    pub folded: Vec<f32>,
}

impl ConvWeights {
    pub fn from_parts(spec: &LayerSpec, wn: WeightNormParams, bias: Vec<f32>) -> Result<Self> {
        if bias.len() != spec.out_channels {
            return Err(Error::shape("bias length mismatch"));
        }
        let folded = fold_weight_norm(spec, &wn)?;
        Ok(ConvWeights { wn, bias, folded })
    }
}

/// Standard-normal draw via Box-Muller on the given RNG stream.
pub fn sample_standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Initialize a layer with weight variance `gain / fan_in` and zero bias.
///
/// For transposed convolutions only `kernel / stride` taps touch each output
/// sample, so the effective fan-in is divided by the stride; otherwise the
/// upsampled signal loses a factor `stride` of variance.
///
/// The weight-norm gain is set to the per-channel direction norm, so the
/// folded kernel equals the drawn direction exactly.
pub fn init_layer_with_gain(spec: &LayerSpec, gain: f64, rng: &mut impl Rng) -> ConvWeights {
    let fan = if spec.is_transposed() {
        (spec.fan_in() as f64 / spec.stride as f64).max(1.0)
    } else {
        spec.fan_in() as f64
    };
    let std = (gain / fan).sqrt();
    let per_out = (spec.in_channels / spec.groups()) * spec.kernel;
    let mut direction = Vec::with_capacity(spec.out_channels * per_out);
    for _ in 0..spec.out_channels * per_out {
        direction.push((sample_standard_normal(rng) * std) as f32);
    }
    let mut g = Vec::with_capacity(spec.out_channels);
    for o in 0..spec.out_channels {
        let row = &direction[o * per_out..(o + 1) * per_out];
        let norm = (row.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>()).sqrt();
        g.push(norm.max(1e-20) as f32);
    }
    let bias = vec![0.0; spec.out_channels];
    let wn = WeightNormParams { direction, gain: g };
    ConvWeights::from_parts(spec, wn, bias).expect("freshly drawn weights are consistent")
}

/// LeCun (`1/fan_in`) or He (`2/fan_in`) initialization, depending on whether
/// an activation consumes this layer's output.
pub fn init_layer(spec: &LayerSpec, followed_by_activation: bool, rng: &mut impl Rng) -> ConvWeights {
    let gain = if followed_by_activation { 2.0 } else { 1.0 };
    init_layer_with_gain(spec, gain, rng)
}

fn check_input(spec: &LayerSpec, input: &Tensor3) -> Result<()> {
    if input.channels != spec.in_channels {
        return Err(Error::config(format!(
            "channel mismatch: input has {}, layer expects {}",
            input.channels, spec.in_channels
        )));
    }
    Ok(())
}

/// Output frame count of a valid-mode pass over a window of length `len`.
#[inline]
pub fn valid_frames(len: usize, spec: &LayerSpec) -> usize {
    let span = spec.left_context();
    if len <= span {
        0
    } else {
        (len - 1 - span) / spec.stride + 1
    }
}

/// Channel-ascending dot product with four fixed accumulator lanes:
/// lane `i % 4` takes element `i`, lanes combine as `(l0+l1) + (l2+l3)`.
/// Deterministic; both offline and streamed paths go through here.
#[inline]
pub fn dot_lanes(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f32; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let a4 = &a[i * 4..i * 4 + 4];
        let b4 = &b[i * 4..i * 4 + 4];
        lanes[0] += a4[0] * b4[0];
        lanes[1] += a4[1] * b4[1];
        lanes[2] += a4[2] * b4[2];
        lanes[3] += a4[3] * b4[3];
    }
    for i in chunks * 4..a.len() {
        lanes[i % 4] += a[i] * b[i];
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3])
}

/// Valid-mode convolution over a window buffer whose first `left_context`
/// samples are the history (or explicit zero padding).
///
/// Accumulation order is fixed: kernel tap outer, input channels inner
/// (via [`dot_lanes`]).
pub fn conv_valid(input: &Tensor3, spec: &LayerSpec, weights: &[f32], bias: &[f32]) -> Tensor3 {
    let frames = valid_frames(input.time, spec);
    let mut out = Tensor3::zeros(input.batch, spec.out_channels, frames);
    if frames == 0 {
        return out;
    }
    if spec.kind == ConvKind::PointwiseConv {
        return pointwise_valid(input, spec, weights, bias);
    }
    if spec.groups() == spec.in_channels && spec.out_channels == spec.in_channels {
        return depthwise_valid(input, spec, weights, bias, frames);
    }

    let groups = spec.groups();
    let in_per_group = spec.in_channels / groups;
    let out_per_group = spec.out_channels / groups;
    let k_stride = in_per_group * spec.kernel;

    // time-major copy of the window (per batch) and tap-major weights, so the
    // channel-inner loops run over contiguous memory
    let mut xt = vec![0.0f32; input.time * spec.in_channels];
    let mut w_t = vec![0.0f32; weights.len()];
    for o in 0..spec.out_channels {
        let w_row = &weights[o * k_stride..(o + 1) * k_stride];
        let dst = &mut w_t[o * k_stride..(o + 1) * k_stride];
        for k in 0..spec.kernel {
            for ci in 0..in_per_group {
                dst[k * in_per_group + ci] = w_row[ci * spec.kernel + k];
            }
        }
    }
    for b in 0..input.batch {
        for c in 0..spec.in_channels {
            let row = input.row(b, c);
            for (t, &v) in row.iter().enumerate() {
                xt[t * spec.in_channels + c] = v;
            }
        }
        for o in 0..spec.out_channels {
            let g = o / out_per_group;
            let w_row = &w_t[o * k_stride..(o + 1) * k_stride];
            let bias_o = bias[o];
            for t in 0..frames {
                let base = t * spec.stride;
                let mut acc = bias_o;
                for k in 0..spec.kernel {
                    let x_off = (base + k * spec.dilation) * spec.in_channels + g * in_per_group;
                    acc += dot_lanes(
                        &w_row[k * in_per_group..(k + 1) * in_per_group],
                        &xt[x_off..x_off + in_per_group],
                    );
                }
                out.set(b, o, t, acc);
            }
        }
    }
    out
}

fn depthwise_valid(
    input: &Tensor3,
    spec: &LayerSpec,
    weights: &[f32],
    bias: &[f32],
    frames: usize,
) -> Tensor3 {
    let mut out = Tensor3::zeros(input.batch, spec.out_channels, frames);
    for b in 0..input.batch {
        for c in 0..spec.in_channels {
            let row = input.row(b, c);
            let w = &weights[c * spec.kernel..(c + 1) * spec.kernel];
            let bias_c = bias[c];
            let dst = out.row_mut(b, c);
            for (t, slot) in dst.iter_mut().enumerate() {
                let base = t * spec.stride;
                let mut acc = bias_c;
                for (k, &wk) in w.iter().enumerate() {
                    acc += wk * row[base + k * spec.dilation];
                }
                *slot = acc;
            }
        }
    }
    out
}

/// Pointwise fast path: gather each time column once, then contiguous dots.
fn pointwise_valid(input: &Tensor3, spec: &LayerSpec, weights: &[f32], bias: &[f32]) -> Tensor3 {
    let frames = input.time;
    let c_in = spec.in_channels;
    let mut out = Tensor3::zeros(input.batch, spec.out_channels, frames);
    let mut col = vec![0.0f32; c_in];
    for b in 0..input.batch {
        for t in 0..frames {
            for (c, slot) in col.iter_mut().enumerate() {
                *slot = input.get(b, c, t);
            }
            for o in 0..spec.out_channels {
                let w_row = &weights[o * c_in..(o + 1) * c_in];
                out.set(b, o, t, bias[o] + dot_lanes(w_row, &col));
            }
        }
    }
    out
}

/// Causal convolution: zero left padding of `(kernel-1)*dilation`, output
/// frame `t` depends only on input samples at indices `<= t*stride`.
pub fn conv1d_forward(
    input: &Tensor3,
    spec: &LayerSpec,
    weights: &ConvWeights,
    // streaming history; `None` means stream start (zero padding)
) -> Result<Tensor3> {
    spec.validate()?;
    check_input(spec, input)?;
    if input.time == 0 {
        return Ok(Tensor3::zeros(input.batch, spec.out_channels, 0));
    }
    let pad = spec.left_context();
    let padded = left_pad(input, pad);
    Ok(conv_valid(&padded, spec, &weights.folded, &weights.bias))
}

pub fn left_pad(input: &Tensor3, pad: usize) -> Tensor3 {
    if pad == 0 {
        return input.clone();
    }
    let mut out = Tensor3::zeros(input.batch, input.channels, input.time + pad);
    for b in 0..input.batch {
        for c in 0..input.channels {
            out.row_mut(b, c)[pad..].copy_from_slice(input.row(b, c));
        }
    }
    out
}

/// Scatter pass of a transposed convolution. Produces the full overlap-add
/// buffer of length `(T-1)*stride + kernel` without bias; contributions are
/// accumulated input-frame ascending, kernel-tap outer, channel inner.
pub fn scatter_transposed(input: &Tensor3, spec: &LayerSpec, weights: &[f32]) -> Tensor3 {
    let full = if input.time == 0 { 0 } else { (input.time - 1) * spec.stride + spec.kernel };
    let mut out = Tensor3::zeros(input.batch, spec.out_channels, full);
    let groups = spec.groups();
    let in_per_group = spec.in_channels / groups;
    let out_per_group = spec.out_channels / groups;
    // weights laid out [out][in/groups][kernel], same as forward convs
    let k_stride = in_per_group * spec.kernel;
    for b in 0..input.batch {
        for j in 0..input.time {
            for o in 0..spec.out_channels {
                let g = o / out_per_group;
                let w_row = &weights[o * k_stride..(o + 1) * k_stride];
                for k in 0..spec.kernel {
                    let mut contrib = 0.0f32;
                    for ci in 0..in_per_group {
                        contrib += w_row[ci * spec.kernel + k] * input.get(b, g * in_per_group + ci, j);
                    }
                    let i = out.idx(b, o, j * spec.stride + k);
                    out.data[i] += contrib;
                }
            }
        }
    }
    out
}

/// Causal transposed convolution: output length is exactly `T * stride`
/// (the trailing `kernel - stride` overlap tail is trimmed).
pub fn transposed_conv1d_forward(
    input: &Tensor3,
    spec: &LayerSpec,
    weights: &ConvWeights,
) -> Result<Tensor3> {
    spec.validate()?;
    check_input(spec, input)?;
    if spec.kernel < spec.stride {
        return Err(Error::config("transposed conv requires kernel >= stride"));
    }
    if input.time == 0 {
        return Ok(Tensor3::zeros(input.batch, spec.out_channels, 0));
    }
    let scattered = scatter_transposed(input, spec, &weights.folded);
    let out_time = input.time * spec.stride;
    let mut out = scattered.slice_time(0, out_time);
    for b in 0..out.batch {
        for o in 0..spec.out_channels {
            let bias = weights.bias[o];
            for v in out.row_mut(b, o) {
                *v += bias;
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Streaming state
// ---------------------------------------------------------------------------

/// Streamed causal convolution. Holds the window buffer: history of
/// `(kernel-1)*dilation` samples plus any input not yet consumed by the
/// stride phase. Feeding the concatenation of chunks through `push` yields
/// bitwise the same frames as one offline `conv1d_forward` call.
#[derive(Debug, Clone)]
pub struct ConvStream {
    spec: LayerSpec,
    buf: Tensor3,
}

impl ConvStream {
    pub fn new(spec: LayerSpec, batch: usize) -> Self {
        let pad = spec.left_context();
        ConvStream { spec, buf: Tensor3::zeros(batch, spec.in_channels, pad) }
    }

    pub fn reset(&mut self) {
        let pad = self.spec.left_context();
        self.buf = Tensor3::zeros(self.buf.batch, self.spec.in_channels, pad);
    }

    pub fn push(&mut self, chunk: &Tensor3, weights: &ConvWeights) -> Result<Tensor3> {
        check_input(&self.spec, chunk)?;
        self.buf = self.buf.concat_time(chunk)?;
        let frames = valid_frames(self.buf.time, &self.spec);
        if frames == 0 {
            return Ok(Tensor3::zeros(chunk.batch, self.spec.out_channels, 0));
        }
        let out = conv_valid(&self.buf, &self.spec, &weights.folded, &weights.bias);
        let consumed = frames * self.spec.stride;
        self.buf = self.buf.slice_time(consumed, self.buf.time);
        Ok(out)
    }
}

/// Streamed causal transposed convolution: overlap-add with a pending tail of
/// `kernel - stride` samples per channel; each input frame emits exactly
/// `stride` output samples.
#[derive(Debug, Clone)]
pub struct ConvTransposeStream {
    spec: LayerSpec,
    /// Pending overlap (no bias applied), length kernel - stride.
    pending: Tensor3,
}

impl ConvTransposeStream {
    pub fn new(spec: LayerSpec, batch: usize) -> Self {
        let tail = spec.kernel - spec.stride;
        ConvTransposeStream { spec, pending: Tensor3::zeros(batch, spec.out_channels, tail) }
    }

    pub fn reset(&mut self) {
        let tail = self.spec.kernel - self.spec.stride;
        self.pending = Tensor3::zeros(self.pending.batch, self.spec.out_channels, tail);
    }

    pub fn push(&mut self, chunk: &Tensor3, weights: &ConvWeights) -> Result<Tensor3> {
        check_input(&self.spec, chunk)?;
        if chunk.time == 0 {
            return Ok(Tensor3::zeros(chunk.batch, self.spec.out_channels, 0));
        }
        let tail = self.spec.kernel - self.spec.stride;
        let scattered = scatter_transposed(chunk, &self.spec, &weights.folded);
        // Fold the pending overlap into the head of the scatter buffer. The
        // scatter accumulated taps for the new frames only, in the same order
        // as the offline pass; the pending head carries the older frames'
        // contributions, which offline accumulated first.
        let mut merged = scattered;
        for b in 0..merged.batch {
            for o in 0..self.spec.out_channels {
                for i in 0..tail.min(merged.time) {
                    let add = merged.get(b, o, i);
                    let prev = self.pending.get(b, o, i);
                    merged.set(b, o, i, prev + add);
                }
            }
        }
        let emit = chunk.time * self.spec.stride;
        let mut out = merged.slice_time(0, emit);
        for b in 0..out.batch {
            for o in 0..self.spec.out_channels {
                let bias = weights.bias[o];
                for v in out.row_mut(b, o) {
                    *v += bias;
                }
            }
        }
        self.pending = merged.slice_time(emit, emit + tail);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;
    use rand::SeedableRng;

    fn manual_weights(spec: &LayerSpec, w: Vec<f32>, b: Vec<f32>) -> ConvWeights {
        // direction = desired kernel, gain = per-channel norm -> folded == w
        let per_out = (spec.in_channels / spec.groups()) * spec.kernel;
        let mut gain = Vec::new();
        for o in 0..spec.out_channels {
            let row = &w[o * per_out..(o + 1) * per_out];
            gain.push((row.iter().map(|&x| (x as f64).powi(2)).sum::<f64>()).sqrt() as f32);
        }
        ConvWeights::from_parts(spec, WeightNormParams { direction: w, gain }, b).unwrap()
    }

    #[test]
    fn identity_kernel() {
        let spec = LayerSpec::conv(1, 1, 1, 1);
        let w = manual_weights(&spec, vec![1.0], vec![0.0]);
        let x = Tensor3::from_samples(&[0.5, -2.0, 3.0]);
        let y = conv1d_forward(&x, &spec, &w).unwrap();
        assert_eq!(y.data, x.data);
    }

    #[test]
    fn ones_kernel_hand_convolution() {
        let spec = LayerSpec::conv(1, 1, 3, 1);
        let w = manual_weights(&spec, vec![1.0, 1.0, 1.0], vec![0.0]);
        let x = Tensor3::from_samples(&[1.0; 8]);
        let y = conv1d_forward(&x, &spec, &w).unwrap();
        assert_eq!(y.data, vec![1.0, 2.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn empty_input_empty_output() {
        let spec = LayerSpec::conv(1, 2, 3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = init_layer(&spec, false, &mut rng);
        let x = Tensor3::zeros(1, 1, 0);
        let y = conv1d_forward(&x, &spec, &w).unwrap();
        assert_eq!(y.time, 0);
        assert_eq!(y.channels, 2);
    }

    #[test]
    fn channel_mismatch_is_config_error() {
        let spec = LayerSpec::conv(2, 1, 1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = init_layer(&spec, false, &mut rng);
        let x = Tensor3::zeros(1, 3, 4);
        assert!(matches!(conv1d_forward(&x, &spec, &w), Err(Error::Config(_))));
    }

    #[test]
    fn strided_output_length() {
        // floor((T-1)/s) + 1
        let spec = LayerSpec::conv(1, 1, 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = init_layer(&spec, false, &mut rng);
        for t in [1usize, 2, 3, 7, 320] {
            let x = Tensor3::zeros(1, 1, t);
            let y = conv1d_forward(&x, &spec, &w).unwrap();
            assert_eq!(y.time, (t - 1) / 2 + 1);
        }
    }

    #[test]
    fn transposed_identity() {
        let spec = LayerSpec::transposed(1, 1, 1, 1);
        let w = manual_weights(&spec, vec![1.0], vec![0.0]);
        let x = Tensor3::from_samples(&[4.0, 5.0]);
        let y = transposed_conv1d_forward(&x, &spec, &w).unwrap();
        assert_eq!(y.data, x.data);
    }

    #[test]
    fn transposed_hand_expansion() {
        let spec = LayerSpec::transposed(1, 1, 2, 2);
        let w = manual_weights(&spec, vec![1.0, 1.0], vec![0.0]);
        let x = Tensor3::from_samples(&[1.0]);
        let y = transposed_conv1d_forward(&x, &spec, &w).unwrap();
        assert_eq!(y.data, vec![1.0, 1.0]);
    }

    #[test]
    fn transposed_shape_rule() {
        let spec = LayerSpec::transposed(1, 1, 16, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = init_layer(&spec, false, &mut rng);
        let x = Tensor3::zeros(1, 1, 75);
        let y = transposed_conv1d_forward(&x, &spec, &w).unwrap();
        assert_eq!(y.time, 600);
    }

    #[test]
    fn fold_examples() {
        // unit norm, g = 1 -> w = v
        let spec = LayerSpec::conv(1, 1, 2, 1);
        let v = vec![0.6, 0.8];
        let folded = fold_weight_norm(&spec, &WeightNormParams { direction: v.clone(), gain: vec![1.0] }).unwrap();
        assert!((folded[0] - 0.6).abs() < 1e-7 && (folded[1] - 0.8).abs() < 1e-7);
        // scale invariance of the direction
        let scaled: Vec<f32> = v.iter().map(|x| x * 10.0).collect();
        let folded2 = fold_weight_norm(&spec, &WeightNormParams { direction: scaled, gain: vec![1.0] }).unwrap();
        assert!((folded[0] - folded2[0]).abs() < 1e-7 && (folded[1] - folded2[1]).abs() < 1e-7);
        // v = [3,4], g = 5 -> w = [3,4]
        let folded3 = fold_weight_norm(&spec, &WeightNormParams { direction: vec![3.0, 4.0], gain: vec![5.0] }).unwrap();
        assert!((folded3[0] - 3.0).abs() < 1e-6 && (folded3[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn fold_zero_norm_is_degenerate() {
        let spec = LayerSpec::conv(1, 1, 2, 1);
        let r = fold_weight_norm(&spec, &WeightNormParams { direction: vec![0.0, 0.0], gain: vec![1.0] });
        assert!(matches!(r, Err(Error::DegenerateWeight(_))));
    }

    #[test]
    fn fold_forward_equivalence() {
        // forward with (g, v) == forward with folded kernel within 1e-6
        let spec = LayerSpec::conv(3, 4, 5, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut w = init_layer(&spec, true, &mut rng);
        // perturb gains away from ||v|| so folding is non-trivial
        for g in &mut w.wn.gain {
            *g *= 1.7;
        }
        w.folded = fold_weight_norm(&spec, &w.wn).unwrap();

        let mut x = Tensor3::zeros(1, 3, 32);
        for v in &mut x.data {
            *v = sample_standard_normal(&mut rng) as f32;
        }
        let y1 = conv1d_forward(&x, &spec, &w).unwrap();
        // reference: scale direction rows explicitly
        let per_out = spec.in_channels * spec.kernel;
        let mut manual = Vec::new();
        for o in 0..spec.out_channels {
            let row = &w.wn.direction[o * per_out..(o + 1) * per_out];
            let norm = (row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>()).sqrt();
            manual.extend(row.iter().map(|&v| ((w.wn.gain[o] as f64 / norm) * v as f64) as f32));
        }
        let w2 = ConvWeights { folded: manual, ..w.clone() };
        let y2 = conv1d_forward(&x, &spec, &w2).unwrap();
        for (a, b) in y1.data.iter().zip(&y2.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn init_statistics() {
        // LeCun: var 1/fan_in, He: 2/fan_in, bias exactly zero.
        let spec = LayerSpec::conv(100, 1000, 1, 1); // fan_in = 100, 1e5 draws
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lecun = init_layer(&spec, false, &mut rng);
        let var = |w: &[f32]| {
            let n = w.len() as f64;
            let mean = w.iter().map(|&x| x as f64).sum::<f64>() / n;
            w.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n
        };
        let v = var(&lecun.folded);
        assert!((0.008..0.012).contains(&v), "lecun var {v}");
        assert!(lecun.bias.iter().all(|&b| b == 0.0));

        let he = init_layer(&spec, true, &mut rng);
        let v = var(&he.folded);
        assert!((0.016..0.024).contains(&v), "he var {v}");
        assert!(he.bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn mac_count_example() {
        // 64*1*7*24000, checked against the complexity module's convention.
        let spec = LayerSpec::conv(1, 64, 7, 1);
        let out_time = 24000 / spec.stride;
        let macs = spec.out_channels * spec.in_channels * spec.kernel * out_time / spec.groups();
        assert_eq!(macs, 10_752_000);
    }

    #[test]
    fn conv_causality_exact() {
        // perturbing input at index > t*stride never changes output 0..=t
        let spec = LayerSpec::conv(2, 3, 5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = init_layer(&spec, true, &mut rng);
        let mut x = Tensor3::zeros(1, 2, 40);
        for v in &mut x.data {
            *v = sample_standard_normal(&mut rng) as f32;
        }
        let y = conv1d_forward(&x, &spec, &w).unwrap();
        let mut x2 = x.clone();
        let t = 7usize; // perturb after sample t*stride
        let idx = x2.idx(0, 1, t * 2 + 1);
        x2.data[idx] += 10.0;
        let y2 = conv1d_forward(&x2, &spec, &w).unwrap();
        for tt in 0..=t {
            for c in 0..3 {
                assert_eq!(y.get(0, c, tt).to_bits(), y2.get(0, c, tt).to_bits());
            }
        }
    }

    #[test]
    fn streaming_conv_matches_offline() {
        let spec = LayerSpec::conv(2, 3, 7, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = init_layer(&spec, true, &mut rng);
        let mut x = Tensor3::zeros(1, 2, 101);
        for v in &mut x.data {
            *v = sample_standard_normal(&mut rng) as f32;
        }
        let offline = conv1d_forward(&x, &spec, &w).unwrap();

        let mut stream = ConvStream::new(spec, 1);
        let mut got = Tensor3::zeros(1, 3, 0);
        let chunks = [13usize, 1, 29, 7, 51];
        let mut pos = 0;
        for &c in &chunks {
            let end = (pos + c).min(x.time);
            let out = stream.push(&x.slice_time(pos, end), &w).unwrap();
            got = got.concat_time(&out).unwrap();
            pos = end;
        }
        assert_eq!(offline.time, got.time);
        for (a, b) in offline.data.iter().zip(&got.data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn streaming_transposed_matches_offline() {
        let spec = LayerSpec::transposed(3, 2, 10, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = init_layer(&spec, false, &mut rng);
        let mut x = Tensor3::zeros(1, 3, 23);
        for v in &mut x.data {
            *v = sample_standard_normal(&mut rng) as f32;
        }
        let offline = transposed_conv1d_forward(&x, &spec, &w).unwrap();

        let mut stream = ConvTransposeStream::new(spec, 1);
        let mut got = Tensor3::zeros(1, 2, 0);
        let chunks = [1usize, 5, 2, 9, 6];
        let mut pos = 0;
        for &c in &chunks {
            let end = (pos + c).min(x.time);
            let out = stream.push(&x.slice_time(pos, end), &w).unwrap();
            got = got.concat_time(&out).unwrap();
            pos = end;
        }
        assert_eq!(offline.time, got.time);
        for (a, b) in offline.data.iter().zip(&got.data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn depthwise_requires_equal_channels() {
        let bad = LayerSpec { kind: ConvKind::DepthwiseConv, ..LayerSpec::conv(3, 4, 3, 1) };
        assert!(bad.validate().is_err());
        let bad_pw = LayerSpec { kind: ConvKind::PointwiseConv, ..LayerSpec::conv(3, 3, 2, 1) };
        assert!(bad_pw.validate().is_err());
    }
}
