//! Loss suite walkthrough: multi-resolution mel reconstruction, hinge GAN
//! values, feature matching, and the gradient balancer's direction-only
//! combination.
//!
//!     cargo run --release --example loss_balancer

use hilcodec::losses::{
    balancer_combine, feature_matching_loss, gan_discriminator_loss, gan_generator_loss,
    reconstruction_loss, BalancerState, MelLossConfig,
};
use hilcodec::disc::DiscriminatorOutput;
use hilcodec::tensor::Tensor3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn noise(len: usize, seed: u64, scale: f32) -> Tensor3 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor3::from_samples(
        &(0..len)
            .map(|_| hilcodec::conv::sample_standard_normal(&mut rng) as f32 * scale)
            .collect::<Vec<_>>(),
    )
}

fn main() -> hilcodec::Result<()> {
    let mel = MelLossConfig::new(24_000)?;
    let x = noise(4800, 0, 0.3);
    let x_dist = x.add(&noise(4800, 1, 0.05))?;
    println!("reconstruction loss: identical {:.4}, distorted {:.4}",
        reconstruction_loss(&x, &x, &mel)?,
        reconstruction_loss(&x, &x_dist, &mel)?);

    let d = |v: f32| DiscriminatorOutput {
        logits: Tensor3::from_samples(&[v; 16]),
        features: vec![Tensor3::from_samples(&[v; 32])],
    };
    println!("generator hinge at D = 0.5: {:.3}", gan_generator_loss(&[d(0.5)]));
    println!("discriminator hinge at D(x) = D(x_hat) = 0: {:.3}",
        gan_discriminator_loss(&[d(0.0)], &[d(0.0)])?);
    println!("feature matching ones vs zeros: {:.3}",
        feature_matching_loss(&[d(1.0)], &[d(0.0)])?);

    // balancer: two gradients with very different norms contribute equally
    let g1 = noise(256, 2, 5.0);
    let g2 = noise(256, 3, 0.01);
    let norms: Vec<f64> = [&g1, &g2]
        .iter()
        .map(|g| g.data.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt())
        .collect();
    let mut state = BalancerState::with_norms(&norms);
    let combined = balancer_combine(&[g1, g2], &[1.0, 1.0], &mut state)?;
    let out_norm: f64 = combined.data.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
    println!("balancer: input norms {:.2} and {:.4} -> combined norm {out_norm:.3} (~sqrt(2) for orthogonal-ish directions)",
        norms[0], norms[1]);
    Ok(())
}
