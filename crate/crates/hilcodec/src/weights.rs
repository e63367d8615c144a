//! Single-file weights container: a JSON manifest (configs plus named tensor
//! table) followed by a little-endian f32 payload. The embedded config is the
//! source of truth for the graph; loading verifies that the tensor table
//! matches the config-derived expectation exactly and fails atomically
//! otherwise.

use crate::conv::fold_weight_norm;
use crate::error::{Error, Result};
use crate::generator::{Codec, Generator, GeneratorConfig, NormStats, VcdMode};
use crate::quantizer::{Codebooks, QuantizerConfig};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

pub const WEIGHTS_MAGIC: [u8; 4] = *b"HLWC";
pub const WEIGHTS_VERSION: u8 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the payload, in f32 elements.
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: GeneratorConfig,
    pub quantizer: QuantizerConfig,
    pub mode: VcdMode,
    pub tensors: Vec<TensorEntry>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Expected tensor names and shapes for a codec with this configuration.
fn expected_tensors(gen: &Generator, qcfg: &QuantizerConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    gen.for_each_unit(&mut |u| {
        let g = u.spec.groups();
        out.push((format!("{}.v", u.path), vec![u.spec.out_channels, u.spec.in_channels / g, u.spec.kernel]));
        out.push((format!("{}.g", u.path), vec![u.spec.out_channels]));
        out.push((format!("{}.b", u.path), vec![u.spec.out_channels]));
    });
    for (path, _) in gen.gain_entries() {
        out.push((path, vec![1]));
    }
    out.push(("stats.wave".into(), vec![2]));
    for (i, &fft) in gen.cfg.spec_ffts.iter().enumerate() {
        out.push((format!("stats.spec{i}.mean"), vec![fft / 2 + 1]));
        out.push((format!("stats.spec{i}.std"), vec![fft / 2 + 1]));
    }
    out.push(("rvq.vectors".into(), vec![qcfg.stages, qcfg.entries, qcfg.dim]));
    out.push(("rvq.usage".into(), vec![qcfg.stages, qcfg.entries]));
    out.push(("rvq.cluster_sum".into(), vec![qcfg.stages, qcfg.entries, qcfg.dim]));
    out
}

/// Serialize a codec into the container byte format.
pub fn save_codec_bytes(codec: &Codec) -> Result<Vec<u8>> {
    let gen = &codec.generator;
    let qcfg = codec.books.cfg;
    let mut tensors: Vec<TensorEntry> = Vec::new();
    let mut payload: Vec<f32> = Vec::new();
    let push = |name: String, shape: Vec<usize>, data: &[f32], payload: &mut Vec<f32>, tensors: &mut Vec<TensorEntry>| {
        debug_assert_eq!(numel(&shape), data.len(), "{name}");
        tensors.push(TensorEntry { name, shape, offset: payload.len() });
        payload.extend_from_slice(data);
    };

    gen.for_each_unit(&mut |u| {
        let g = u.spec.groups();
        push(
            format!("{}.v", u.path),
            vec![u.spec.out_channels, u.spec.in_channels / g, u.spec.kernel],
            &u.weights.wn.direction,
            &mut payload,
            &mut tensors,
        );
        push(format!("{}.g", u.path), vec![u.spec.out_channels], &u.weights.wn.gain, &mut payload, &mut tensors);
        push(format!("{}.b", u.path), vec![u.spec.out_channels], &u.weights.bias, &mut payload, &mut tensors);
    });
    for (path, gain) in gen.gain_entries() {
        push(path, vec![1], &[gain], &mut payload, &mut tensors);
    }
    push("stats.wave".into(), vec![2], &[gen.stats.wave_mean, gen.stats.wave_std], &mut payload, &mut tensors);
    for i in 0..gen.cfg.spec_ffts.len() {
        push(format!("stats.spec{i}.mean"), vec![gen.stats.spec_mean[i].len()], &gen.stats.spec_mean[i], &mut payload, &mut tensors);
        push(format!("stats.spec{i}.std"), vec![gen.stats.spec_std[i].len()], &gen.stats.spec_std[i], &mut payload, &mut tensors);
    }
    push("rvq.vectors".into(), vec![qcfg.stages, qcfg.entries, qcfg.dim], &codec.books.vectors, &mut payload, &mut tensors);
    push("rvq.usage".into(), vec![qcfg.stages, qcfg.entries], &codec.books.usage_ema, &mut payload, &mut tensors);
    push("rvq.cluster_sum".into(), vec![qcfg.stages, qcfg.entries, qcfg.dim], &codec.books.cluster_sum_ema, &mut payload, &mut tensors);

    let manifest = Manifest { config: gen.cfg.clone(), quantizer: qcfg, mode: gen.mode, tensors };
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::format(format!("manifest: {e}")))?;
    let mut out = Vec::with_capacity(9 + json.len() + payload.len() * 4);
    out.extend_from_slice(&WEIGHTS_MAGIC);
    out.push(WEIGHTS_VERSION);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn save_codec(path: &Path, codec: &Codec) -> Result<()> {
    let bytes = save_codec_bytes(codec)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Load a codec, verifying the manifest against the embedded config. Every
/// config layer must resolve to exactly one named tensor of matching shape;
/// any mismatch fails before a model is produced.
pub fn load_codec_bytes(bytes: &[u8]) -> Result<Codec> {
    if bytes.len() < 9 || bytes[0..4] != WEIGHTS_MAGIC {
        return Err(Error::format("not a weights container"));
    }
    if bytes[4] != WEIGHTS_VERSION {
        return Err(Error::format(format!("unsupported container version {}", bytes[4])));
    }
    let json_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    if bytes.len() < 9 + json_len {
        return Err(Error::format("truncated manifest"));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[9..9 + json_len])
        .map_err(|e| Error::format(format!("manifest: {e}")))?;
    let payload_bytes = &bytes[9 + json_len..];
    if payload_bytes.len() % 4 != 0 {
        return Err(Error::format("payload is not a whole number of f32 values"));
    }
    let payload: Vec<f32> =
        payload_bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();

    // table lookup + duplicate check
    let mut table: BTreeMap<&str, &TensorEntry> = BTreeMap::new();
    for e in &manifest.tensors {
        if table.insert(e.name.as_str(), e).is_some() {
            return Err(Error::format(format!("duplicate tensor {}", e.name)));
        }
        if e.offset + numel(&e.shape) > payload.len() {
            return Err(Error::format(format!("tensor {} exceeds the payload", e.name)));
        }
    }
    let fetch = |name: &str, shape: &[usize]| -> Result<&[f32]> {
        let e = table
            .get(name)
            .ok_or_else(|| Error::format(format!("missing tensor {name}")))?;
        if e.shape != shape {
            return Err(Error::format(format!(
                "tensor {name}: shape {:?} does not match config {:?}",
                e.shape, shape
            )));
        }
        Ok(&payload[e.offset..e.offset + numel(shape)])
    };

    // the structural skeleton comes from the config; every tensor must match
    let stats = NormStats::identity(&manifest.config);
    let mut gen = Generator::init(manifest.config.clone(), manifest.mode, stats, 0)?;
    let expected = {
        let tmp_books_cfg = manifest.quantizer;
        expected_tensors(&gen, &tmp_books_cfg)
    };
    if expected.len() != manifest.tensors.len() {
        return Err(Error::format(format!(
            "container has {} tensors, config requires {}",
            manifest.tensors.len(),
            expected.len()
        )));
    }
    for (name, shape) in &expected {
        fetch(name, shape)?;
    }

    let mut failure: Option<Error> = None;
    gen.for_each_unit_mut(&mut |u| {
        if failure.is_some() {
            return;
        }
        let g = u.spec.groups();
        let vshape = vec![u.spec.out_channels, u.spec.in_channels / g, u.spec.kernel];
        let r = (|| -> Result<()> {
            u.weights.wn.direction = fetch(&format!("{}.v", u.path), &vshape)?.to_vec();
            u.weights.wn.gain = fetch(&format!("{}.g", u.path), &[u.spec.out_channels])?.to_vec();
            u.weights.bias = fetch(&format!("{}.b", u.path), &[u.spec.out_channels])?.to_vec();
            u.weights.folded = fold_weight_norm(&u.spec, &u.weights.wn)?;
            Ok(())
        })();
        if let Err(e) = r {
            failure = Some(e);
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let gain_paths: Vec<String> = gen.gain_entries().into_iter().map(|(p, _)| p).collect();
    let mut gains = Vec::with_capacity(gain_paths.len());
    for p in &gain_paths {
        gains.push(fetch(p, &[1])?[0]);
    }
    gen.set_gains(&gains)?;

    let wave = fetch("stats.wave", &[2])?;
    let mut spec_mean = Vec::new();
    let mut spec_std = Vec::new();
    for (i, &fft) in gen.cfg.spec_ffts.iter().enumerate() {
        let bins = fft / 2 + 1;
        spec_mean.push(fetch(&format!("stats.spec{i}.mean"), &[bins])?.to_vec());
        spec_std.push(fetch(&format!("stats.spec{i}.std"), &[bins])?.to_vec());
    }
    let stats = NormStats { wave_mean: wave[0], wave_std: wave[1], spec_mean, spec_std };
    stats.validate(&gen.cfg)?;
    gen.stats = stats;

    let qcfg = manifest.quantizer;
    let mut books = Codebooks::new(qcfg);
    books.vectors = fetch("rvq.vectors", &[qcfg.stages, qcfg.entries, qcfg.dim])?.to_vec();
    books.usage_ema = fetch("rvq.usage", &[qcfg.stages, qcfg.entries])?.to_vec();
    books.cluster_sum_ema = fetch("rvq.cluster_sum", &[qcfg.stages, qcfg.entries, qcfg.dim])?.to_vec();

    Ok(Codec { generator: gen, books })
}

pub fn load_codec(path: &Path) -> Result<Codec> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    load_codec_bytes(&bytes)
}

/// Normalization statistics as a standalone JSON file.
pub fn save_stats(path: &Path, stats: &NormStats) -> Result<()> {
    let json = serde_json::to_vec_pretty(stats).map_err(|e| Error::format(format!("stats: {e}")))?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&json)?;
    Ok(())
}

pub fn load_stats(path: &Path) -> Result<NormStats> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(format!("stats: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::VcdMode;

    fn small_codec() -> Codec {
        let cfg = GeneratorConfig::small();
        let qcfg = QuantizerConfig::new(4, 64, cfg.latent_dim);
        let stats = NormStats::identity(&cfg);
        Codec::init(cfg, qcfg, VcdMode::Vcd, stats, 42).unwrap()
    }

    #[test]
    fn container_round_trip_preserves_model() {
        let codec = small_codec();
        let codec = Codec {
            generator: codec.generator.with_residual_gains(0.25),
            books: codec.books,
        };
        let bytes = save_codec_bytes(&codec).unwrap();
        let loaded = load_codec_bytes(&bytes).unwrap();

        // identical forward behaviour, bit for bit
        let audio: Vec<f32> = (0..3200).map(|i| ((i as f32) * 0.01).sin() * 0.5).collect();
        let wave = crate::tensor::Tensor3::from_samples(&audio);
        let f1 = codec.encode_frames(&wave, 4).unwrap();
        let f2 = loaded.encode_frames(&wave, 4).unwrap();
        assert_eq!(f1, f2);
        let d1 = codec.decode_frames(&f1, 1).unwrap();
        let d2 = loaded.decode_frames(&f2, 1).unwrap();
        for (a, b) in d1.data.iter().zip(&d2.data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let codec = small_codec();
        let mut bytes = save_codec_bytes(&codec).unwrap();
        bytes[0] ^= 0xFF;
        assert!(load_codec_bytes(&bytes).is_err());
    }

    #[test]
    fn missing_tensor_fails_atomically() {
        let codec = small_codec();
        let bytes = save_codec_bytes(&codec).unwrap();
        // drop the last tensor from the manifest
        let json_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let mut manifest: Manifest = serde_json::from_slice(&bytes[9..9 + json_len]).unwrap();
        manifest.tensors.pop();
        let json = serde_json::to_vec(&manifest).unwrap();
        let mut tampered = Vec::new();
        tampered.extend_from_slice(&WEIGHTS_MAGIC);
        tampered.push(WEIGHTS_VERSION);
        tampered.extend_from_slice(&(json.len() as u32).to_le_bytes());
        tampered.extend_from_slice(&json);
        tampered.extend_from_slice(&bytes[9 + json_len..]);
        assert!(load_codec_bytes(&tampered).is_err());
    }

    #[test]
    fn wrong_shape_fails() {
        let codec = small_codec();
        let bytes = save_codec_bytes(&codec).unwrap();
        let json_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let mut manifest: Manifest = serde_json::from_slice(&bytes[9..9 + json_len]).unwrap();
        manifest.tensors[0].shape[0] += 1;
        let json = serde_json::to_vec(&manifest).unwrap();
        let mut tampered = Vec::new();
        tampered.extend_from_slice(&WEIGHTS_MAGIC);
        tampered.push(WEIGHTS_VERSION);
        tampered.extend_from_slice(&(json.len() as u32).to_le_bytes());
        tampered.extend_from_slice(&json);
        tampered.extend_from_slice(&bytes[9 + json_len..]);
        assert!(load_codec_bytes(&tampered).is_err());
    }

    #[test]
    fn stats_file_round_trip() {
        let cfg = GeneratorConfig::small();
        let stats = NormStats::identity(&cfg);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("stats.json");
        save_stats(&p, &stats).unwrap();
        let loaded = load_stats(&p).unwrap();
        assert_eq!(stats, loaded);
    }
}
