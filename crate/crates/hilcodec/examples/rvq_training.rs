//! Residual vector quantizer life cycle on synthetic latents: k-means
//! initialization stage by stage, EMA refinement with dead-code
//! reinitialization, and the quantization error as stages are added.
//!
//!     cargo run --release --example rvq_training

use hilcodec::quantizer::{
    commitment_loss, ema_update, kmeans_init, nearest_entry, reinit_dead_codes, rvq_encode,
    rvq_encode_trace, Codebooks, QuantizerConfig,
};
use hilcodec::tensor::Tensor3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const DIM: usize = 8;

fn batch(rng: &mut ChaCha8Rng, frames: usize) -> Tensor3 {
    let data: Vec<f32> = (0..DIM * frames)
        .map(|_| hilcodec::conv::sample_standard_normal(rng) as f32)
        .collect();
    Tensor3::from_vec(data, 1, DIM, frames).unwrap()
}

fn main() -> hilcodec::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = QuantizerConfig::new(6, 64, DIM);
    let mut books = Codebooks::new(cfg);

    // pool of latent frames, flattened frame-major
    let pool_t = batch(&mut rng, 2048);
    let mut pool = Vec::with_capacity(2048 * DIM);
    for t in 0..pool_t.time {
        for c in 0..DIM {
            pool.push(pool_t.get(0, c, t));
        }
    }

    // stage-wise k-means on the residuals of the previous stages
    let mut residuals = pool.clone();
    for s in 0..cfg.stages {
        let (centroids, sse) = kmeans_init(&residuals, DIM, cfg.entries, 12, &mut rng)?;
        let base = s * cfg.entries * DIM;
        books.vectors[base..base + centroids.len()].copy_from_slice(&centroids);
        books.cluster_sum_ema[base..base + centroids.len()].copy_from_slice(&centroids);
        for e in 0..cfg.entries {
            books.usage_ema[s * cfg.entries + e] = 1.0;
        }
        for f in 0..residuals.len() / DIM {
            let r: Vec<f32> = residuals[f * DIM..(f + 1) * DIM].to_vec();
            let e = nearest_entry(&books, s, &r);
            let c = books.entry(s, e);
            for j in 0..DIM {
                residuals[f * DIM + j] -= c[j];
            }
        }
        println!("stage {s}: k-means sse {:.1} -> {:.1}", sse.first().unwrap(), sse.last().unwrap());
    }

    // EMA refinement on fresh batches
    let mut first = 0.0f32;
    let mut last = 0.0f32;
    for step in 0..60 {
        let z = batch(&mut rng, 512);
        let (_, zhat, trace) = rvq_encode_trace(&z, &books, cfg.stages)?;
        last = commitment_loss(&z, &zhat)?;
        if step == 0 {
            first = last;
        }
        ema_update(&mut books, &trace);
        reinit_dead_codes(&mut books, &pool, &mut rng);
    }
    println!("ema refinement: mse {first:.5} -> {last:.5}; min usage {:.3}", books.min_usage());

    let z = batch(&mut rng, 1024);
    println!("\nquantization mse by stage count:");
    for nq in 1..=cfg.stages {
        let (_, zhat) = rvq_encode(&z, &books, nq)?;
        println!("  nq={nq}: {:.5}", commitment_loss(&z, &zhat)?);
    }
    Ok(())
}
