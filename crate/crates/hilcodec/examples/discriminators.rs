//! Forward passes of the two discriminator families: the filter-bank
//! discriminator over PQMF sub-bands (weight-shared across bands) and the
//! spectrogram discriminator over complex STFTs, feeding the GAN and feature
//! matching losses.
//!
//!     cargo run --release --example discriminators

use hilcodec::disc::{Mfbd, Mrsd};
use hilcodec::losses::{feature_matching_loss, gan_discriminator_loss, gan_generator_loss};
use hilcodec::tensor::Tensor3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hilcodec::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mfbd = Mfbd::init(&mut rng)?;
    let mrsd = Mrsd::init(&mut rng)?;

    let noise = |seed: u64, scale: f32| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Tensor3::from_samples(
            &(0..4800)
                .map(|_| hilcodec::conv::sample_standard_normal(&mut r) as f32 * scale)
                .collect::<Vec<_>>(),
        )
    };
    let real = noise(1, 0.3);
    let fake = noise(2, 0.3);

    let mfbd_real = mfbd.forward(&real)?;
    let mfbd_fake = mfbd.forward(&fake)?;
    println!("filter-bank discriminator:");
    for (bank, out) in mfbd.banks.iter().zip(&mfbd_real) {
        println!(
            "  N={:<2} -> logits over {} sub-band rows x {} frames, {} feature layers",
            bank.n_bands, out.logits.batch, out.logits.time, out.features.len()
        );
    }

    let mrsd_real = mrsd.forward(&real)?;
    let mrsd_fake = mrsd.forward(&fake)?;
    println!("spectrogram discriminator: {} resolutions", mrsd_real.len());

    let mut real_all = mfbd_real;
    real_all.extend(mrsd_real);
    let mut fake_all = mfbd_fake;
    fake_all.extend(mrsd_fake);
    println!("generator hinge loss    {:.4}", gan_generator_loss(&fake_all));
    println!("discriminator hinge     {:.4}", gan_discriminator_loss(&real_all, &fake_all)?);
    println!("feature matching        {:.4}", feature_matching_loss(&real_all, &fake_all)?);
    Ok(())
}
