//! Generator/discriminator loss values and the gradient balancer.
//!
//! Losses here are value computations only; the balancer operates on caller
//! supplied gradient tensors (finite-difference probes in the tests). The
//! commitment term is never balanced and is carried separately by callers.

use crate::disc::DiscriminatorOutput;
use crate::error::{Error, Result};
use crate::stft::{apply_mel, mel_filterbank, CausalStft};
use crate::tensor::Tensor3;

const FM_DENOM_FLOOR: f32 = 1e-8;
const BALANCER_NORM_FLOOR: f64 = 1e-12;
const LOG_MEL_FLOOR: f32 = 1e-5;

pub const MEL_COUNTS: [usize; 6] = [6, 12, 23, 45, 88, 128];

/// One multi-resolution log-mel analyzer: resolution `i` (1-based) uses a
/// Fourier transform size of `2^(i+4)`, hop `2^(i+2)`, and `MEL_COUNTS[i-1]`
/// mel filters.
pub struct MelLossConfig {
    resolutions: Vec<(CausalStft, Vec<Vec<f32>>)>,
}

impl MelLossConfig {
    pub fn new(sample_rate: u32) -> Result<Self> {
        let mut resolutions = Vec::with_capacity(6);
        for (i, &mels) in MEL_COUNTS.iter().enumerate() {
            let fft = 1usize << (i + 5);
            let hop = 1usize << (i + 3);
            let stft = CausalStft::new(fft, hop)?;
            let bank = mel_filterbank(fft, mels, sample_rate)?;
            resolutions.push((stft, bank));
        }
        Ok(MelLossConfig { resolutions })
    }

    /// Log-mel spectrogram at resolution index (0-based).
    pub fn log_mel(&self, x: &Tensor3, i: usize) -> Result<Tensor3> {
        let (stft, bank) = &self.resolutions[i];
        let mag = stft.forward(x)?.magnitude();
        let mel = apply_mel(bank, &mag);
        Ok(mel.map(|v| (v + LOG_MEL_FLOOR).ln()))
    }

    pub fn n_resolutions(&self) -> usize {
        self.resolutions.len()
    }
}

fn mean_abs(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|&v| (v as f64).abs()).sum::<f64>() / x.len() as f64
}

fn mean_sq(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len() as f64
}

/// Sum over the six resolutions of mean |dS| + mean dS^2 between log-mel
/// spectrograms of `x` and `x_hat`.
pub fn reconstruction_loss(x: &Tensor3, x_hat: &Tensor3, cfg: &MelLossConfig) -> Result<f32> {
    if x.time != x_hat.time || x.batch != x_hat.batch {
        return Err(Error::shape("reconstruction loss operands differ in length"));
    }
    let mut total = 0.0f64;
    for i in 0..cfg.n_resolutions() {
        let a = cfg.log_mel(x, i)?;
        let b = cfg.log_mel(x_hat, i)?;
        let diff: Vec<f32> = a.data.iter().zip(&b.data).map(|(p, q)| p - q).collect();
        total += mean_abs(&diff) + mean_sq(&diff);
    }
    Ok(total as f32)
}

/// Hinge generator loss: sum_j mean(max(0, 1 - D_j(x_hat))).
pub fn gan_generator_loss(fake: &[DiscriminatorOutput]) -> f32 {
    let mut total = 0.0f64;
    for out in fake {
        let vals = &out.logits.data;
        if vals.is_empty() {
            continue;
        }
        let m: f64 =
            vals.iter().map(|&d| (1.0 - d as f64).max(0.0)).sum::<f64>() / vals.len() as f64;
        total += m;
    }
    total as f32
}

/// Hinge discriminator loss:
/// sum_j mean(max(0, 1 - D_j(x))) + mean(max(0, 1 + D_j(x_hat))).
pub fn gan_discriminator_loss(real: &[DiscriminatorOutput], fake: &[DiscriminatorOutput]) -> Result<f32> {
    if real.len() != fake.len() {
        return Err(Error::shape("discriminator output lists differ in length"));
    }
    let mut total = 0.0f64;
    for (r, f) in real.iter().zip(fake) {
        let mr: f64 = if r.logits.data.is_empty() {
            0.0
        } else {
            r.logits.data.iter().map(|&d| (1.0 - d as f64).max(0.0)).sum::<f64>()
                / r.logits.data.len() as f64
        };
        let mf: f64 = if f.logits.data.is_empty() {
            0.0
        } else {
            f.logits.data.iter().map(|&d| (1.0 + d as f64).max(0.0)).sum::<f64>()
                / f.logits.data.len() as f64
        };
        total += mr + mf;
    }
    Ok(total as f32)
}

/// Normalized feature matching:
/// sum_j sum_l mean|D_j^l(x) - D_j^l(x_hat)| / mean|D_j^l(x)|.
pub fn feature_matching_loss(real: &[DiscriminatorOutput], fake: &[DiscriminatorOutput]) -> Result<f32> {
    if real.len() != fake.len() {
        return Err(Error::shape("feature matching needs matched discriminator lists"));
    }
    let mut total = 0.0f64;
    for (r, f) in real.iter().zip(fake) {
        if r.features.len() != f.features.len() {
            return Err(Error::shape("feature matching needs matched layer counts"));
        }
        for (fr, ff) in r.features.iter().zip(&f.features) {
            if fr.data.len() != ff.data.len() {
                return Err(Error::shape("feature tensors differ in size"));
            }
            let diff: Vec<f32> = fr.data.iter().zip(&ff.data).map(|(a, b)| a - b).collect();
            let denom = mean_abs(&fr.data).max(FM_DENOM_FLOOR as f64);
            total += mean_abs(&diff) / denom;
        }
    }
    Ok(total as f32)
}

/// Exponential moving averages of per-loss gradient norms.
///
/// The first `update` call seeds each EMA with the observed norm; later calls
/// apply `ema <- decay * ema + (1 - decay) * norm`.
#[derive(Debug, Clone)]
pub struct BalancerState {
    pub decay: f64,
    ema_norms: Vec<f64>,
    seeded: bool,
}

pub const BALANCER_DECAY: f64 = 0.999;

impl BalancerState {
    pub fn new(n_losses: usize) -> Self {
        BalancerState { decay: BALANCER_DECAY, ema_norms: vec![0.0; n_losses], seeded: false }
    }

    /// State warmed to the given norms, as if the EMA had fully converged.
    pub fn with_norms(norms: &[f64]) -> Self {
        BalancerState { decay: BALANCER_DECAY, ema_norms: norms.to_vec(), seeded: true }
    }

    pub fn ema_norms(&self) -> &[f64] {
        &self.ema_norms
    }

    fn update(&mut self, norms: &[f64]) {
        if !self.seeded {
            self.ema_norms.copy_from_slice(norms);
            self.seeded = true;
            return;
        }
        for (e, &n) in self.ema_norms.iter_mut().zip(norms) {
            *e = self.decay * *e + (1.0 - self.decay) * n;
        }
    }
}

fn l2_norm(g: &Tensor3) -> f64 {
    g.data.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
}

/// Combine per-loss gradients w.r.t. the reconstruction into one direction:
/// `sum_i lambda_i * g_i / ema(|g_i|)`. Updates the EMA state first. The
/// commitment gradient is not an input here by design; callers add
/// `lambda_c * dL_c/dw` unbalanced.
pub fn balancer_combine(
    grads: &[Tensor3],
    lambdas: &[f32],
    state: &mut BalancerState,
) -> Result<Tensor3> {
    if grads.is_empty() {
        return Err(Error::shape("balancer needs at least one gradient"));
    }
    if grads.len() != lambdas.len() || grads.len() != state.ema_norms.len() {
        return Err(Error::shape("gradients, lambdas and state must have equal arity"));
    }
    let shape = (grads[0].batch, grads[0].channels, grads[0].time);
    for g in grads {
        if (g.batch, g.channels, g.time) != shape {
            return Err(Error::shape("balancer gradients differ in shape"));
        }
    }
    let norms: Vec<f64> = grads.iter().map(l2_norm).collect();
    state.update(&norms);
    let mut out = Tensor3::zeros(shape.0, shape.1, shape.2);
    for (i, g) in grads.iter().enumerate() {
        let scale = (lambdas[i] as f64 / state.ema_norms[i].max(BALANCER_NORM_FLOOR)) as f32;
        for (o, &v) in out.data.iter_mut().zip(&g.data) {
            *o += scale * v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::sample_standard_normal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn disc_out(logits: Vec<f32>, features: Vec<Vec<f32>>) -> DiscriminatorOutput {
        DiscriminatorOutput {
            logits: Tensor3::from_samples(&logits),
            features: features.into_iter().map(|f| Tensor3::from_samples(&f)).collect(),
        }
    }

    fn noise(len: usize, seed: u64) -> Tensor3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor3::from_samples(
            &(0..len).map(|_| sample_standard_normal(&mut rng) as f32 * 0.3).collect::<Vec<_>>(),
        )
    }

    #[test]
    fn reconstruction_zero_on_identical() {
        let cfg = MelLossConfig::new(24000).unwrap();
        let x = noise(2048, 0);
        assert_eq!(reconstruction_loss(&x, &x, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn reconstruction_symmetric() {
        let cfg = MelLossConfig::new(24000).unwrap();
        let a = noise(2048, 1);
        let b = noise(2048, 2);
        let ab = reconstruction_loss(&a, &b, &cfg).unwrap();
        let ba = reconstruction_loss(&b, &a, &cfg).unwrap();
        assert!((ab - ba).abs() < 1e-6 * ab.abs().max(1.0));
        assert!(ab > 0.0);
    }

    #[test]
    fn reconstruction_matches_brute_force_resummation() {
        let cfg = MelLossConfig::new(24000).unwrap();
        let a = noise(1600, 3);
        let b = noise(1600, 4);
        let got = reconstruction_loss(&a, &b, &cfg).unwrap() as f64;
        // independent oracle: recompute each resolution from scratch
        let mut manual = 0.0f64;
        for i in 0..6 {
            let sa = cfg.log_mel(&a, i).unwrap();
            let sb = cfg.log_mel(&b, i).unwrap();
            let n = sa.data.len() as f64;
            let l1: f64 =
                sa.data.iter().zip(&sb.data).map(|(p, q)| ((p - q) as f64).abs()).sum::<f64>() / n;
            let l2: f64 =
                sa.data.iter().zip(&sb.data).map(|(p, q)| ((p - q) as f64).powi(2)).sum::<f64>() / n;
            manual += l1 + l2;
        }
        assert!((got - manual).abs() < 1e-6 * manual.max(1.0), "{got} vs {manual}");
    }

    #[test]
    fn reconstruction_length_mismatch_rejected() {
        let cfg = MelLossConfig::new(24000).unwrap();
        let a = noise(1600, 5);
        let b = noise(1601, 6);
        assert!(reconstruction_loss(&a, &b, &cfg).is_err());
    }

    #[test]
    fn generator_hinge_values() {
        let one = vec![disc_out(vec![1.0; 4], vec![])];
        assert_eq!(gan_generator_loss(&one), 0.0);
        let half = vec![disc_out(vec![0.5; 4], vec![])];
        assert!((gan_generator_loss(&half) - 0.5).abs() < 1e-7);
        let sat = vec![disc_out(vec![2.0; 4], vec![])];
        assert_eq!(gan_generator_loss(&sat), 0.0);
    }

    #[test]
    fn discriminator_hinge_values() {
        let d = |r: f32, f: f32| {
            gan_discriminator_loss(&[disc_out(vec![r; 3], vec![])], &[disc_out(vec![f; 3], vec![])])
                .unwrap()
        };
        assert_eq!(d(1.0, -1.0), 0.0);
        assert!((d(0.0, 0.0) - 2.0).abs() < 1e-7);
        assert!((d(-1.0, 1.0) - 4.0).abs() < 1e-7);
    }

    #[test]
    fn feature_matching_values() {
        let real = vec![disc_out(vec![0.0], vec![vec![1.0; 8]])];
        let fake_same = vec![disc_out(vec![0.0], vec![vec![1.0; 8]])];
        assert_eq!(feature_matching_loss(&real, &fake_same).unwrap(), 0.0);
        let fake_zero = vec![disc_out(vec![0.0], vec![vec![0.0; 8]])];
        assert!((feature_matching_loss(&real, &fake_zero).unwrap() - 1.0).abs() < 1e-7);
    }

    #[test]
    fn feature_matching_scale_invariance() {
        let mk = |c: f32, seed| {
            let f = noise(32, seed);
            disc_out(vec![0.0], vec![f.data.iter().map(|v| v * c).collect()])
        };
        let l1 = feature_matching_loss(&[mk(1.0, 7)], &[mk(1.0, 8)]).unwrap();
        let l2 = feature_matching_loss(&[mk(13.0, 7)], &[mk(13.0, 8)]).unwrap();
        assert!((l1 - l2).abs() < 1e-5 * l1.max(1.0), "{l1} vs {l2}");
    }

    #[test]
    fn feature_matching_layer_count_mismatch() {
        let real = vec![disc_out(vec![0.0], vec![vec![1.0; 4], vec![2.0; 4]])];
        let fake = vec![disc_out(vec![0.0], vec![vec![1.0; 4]])];
        assert!(feature_matching_loss(&real, &fake).is_err());
    }

    #[test]
    fn balancer_unit_norm_contributions() {
        // orthogonal gradients with norms 2.0 and 0.5, EMAs warmed exactly
        let mut g1 = Tensor3::zeros(1, 1, 4);
        g1.data[0] = 2.0;
        let mut g2 = Tensor3::zeros(1, 1, 4);
        g2.data[1] = 0.5;
        let mut state = BalancerState::with_norms(&[2.0, 0.5]);
        let combined =
            balancer_combine(&[g1, g2], &[1.0, 1.0], &mut state).unwrap();
        // the EMA moved slightly toward the same norms, so contributions are
        // unit length within the decay tolerance
        assert!((combined.data[0] - 1.0).abs() < 1e-5);
        assert!((combined.data[1] - 1.0).abs() < 1e-5);
        assert_eq!(combined.data[2], 0.0);
    }

    #[test]
    fn balancer_steady_state_scale_invariance() {
        let g = noise(64, 9);
        let g_scaled = g.scale(10.0);
        let mut s1 = BalancerState::with_norms(&[l2_norm(&g)]);
        let out1 = balancer_combine(std::slice::from_ref(&g), &[1.0], &mut s1).unwrap();
        let mut s2 = BalancerState::with_norms(&[l2_norm(&g_scaled)]);
        let out2 = balancer_combine(std::slice::from_ref(&g_scaled), &[1.0], &mut s2).unwrap();
        for (a, b) in out1.data.iter().zip(&out2.data) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn balancer_single_loss_norm_is_lambda() {
        let g = noise(128, 10);
        let mut state = BalancerState::with_norms(&[l2_norm(&g)]);
        let out = balancer_combine(std::slice::from_ref(&g), &[3.0], &mut state).unwrap();
        let n = l2_norm(&out);
        assert!((n - 3.0).abs() < 1e-4 * 3.0, "norm {n}");
    }

    #[test]
    fn balancer_shape_mismatch_rejected() {
        let g1 = Tensor3::zeros(1, 1, 4);
        let g2 = Tensor3::zeros(1, 1, 5);
        let mut state = BalancerState::new(2);
        assert!(balancer_combine(&[g1, g2], &[1.0, 1.0], &mut state).is_err());
    }

    #[test]
    fn losses_finite_on_finite_inputs() {
        let cfg = MelLossConfig::new(24000).unwrap();
        let silent = Tensor3::zeros(1, 1, 1600);
        let x = noise(1600, 11);
        let l = reconstruction_loss(&silent, &x, &cfg).unwrap();
        assert!(l.is_finite());
        // zero real features: denominator floor keeps the ratio finite
        let real = vec![disc_out(vec![0.0], vec![vec![0.0; 8]])];
        let fake = vec![disc_out(vec![0.0], vec![vec![1.0; 8]])];
        assert!(feature_matching_loss(&real, &fake).unwrap().is_finite());
    }
}
