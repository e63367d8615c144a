//! Command-line frontend: model creation, encode/decode, analysis reports,
//! RTF benchmarking, normalization statistics, and RVQ training.
//!
//! Exit codes: 0 ok, 1 I/O or processing failure, 2 format mismatch,
//! 3 corrupt stream, 64 usage error.

use clap::{Parser, Subcommand, ValueEnum};
use hilcodec::analysis::{
    count_complexity, depth_sweep, signal_propagation, two_f_model_score,
};
use hilcodec::bitstream;
use hilcodec::error::Error;
use hilcodec::generator::{
    compute_norm_stats, Codec, GeneratorConfig, NormStats, VcdMode, DEFAULT_NORM_CHUNKS,
};
use hilcodec::pqmf::{alias_energy, avgpool_response, chirp, Frontend};
use hilcodec::quantizer::{
    ema_update, kmeans_init, nearest_entry, reinit_dead_codes, rvq_encode_trace, QuantizerConfig,
};
use hilcodec::streaming::{bench_rtf, rtf_selftest, MonotonicClock};
use hilcodec::tensor::Tensor3;
use hilcodec::wav::{read_wav, write_wav, SampleFormat};
use hilcodec::weights::{load_codec, load_stats, save_codec, save_stats};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "hilcodec", version, about = "streaming neural audio codec engine")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Vcd,
    Baseline,
}

impl From<ModeArg> for VcdMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Vcd => VcdMode::Vcd,
            ModeArg::Baseline => VcdMode::Baseline,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Default,
    Small,
}

#[derive(Clone, Copy, ValueEnum)]
enum WavFmtArg {
    Pcm16,
    Float32,
}

#[derive(Subcommand)]
enum Cmd {
    /// Create a freshly initialized weights container.
    Init {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = PresetArg::Default)]
        preset: PresetArg,
        /// Normalization statistics file (from `stats`); identity if absent.
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = ModeArg::Vcd)]
        mode: ModeArg,
    },
    /// Encode a mono wav into a bitstream.
    Encode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Quantizer stages to use (bitrate selector).
        #[arg(long, default_value_t = 4)]
        nq: usize,
    },
    /// Decode a bitstream into a mono wav.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = WavFmtArg::Float32)]
        format: WavFmtArg,
    },
    /// Deterministic CSV reports.
    Analyze {
        #[command(subcommand)]
        what: AnalyzeCmd,
    },
    /// Real-time-factor benchmark under the 320-sample chunk protocol.
    Bench {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 10.0)]
        seconds: f64,
        #[arg(long, default_value_t = 320)]
        chunk: usize,
        #[arg(long, default_value_t = 4)]
        nq: usize,
        /// Controlled-clock harness check: must report RTF 2.0.
        #[arg(long)]
        self_test: bool,
    },
    /// Compute normalization statistics over a corpus of wav files.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = DEFAULT_NORM_CHUNKS)]
        n_chunks: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = PresetArg::Default)]
        preset: PresetArg,
    },
    /// K-means + EMA training of the quantizer codebooks on a corpus.
    RvqTrain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output container; the model path is overwritten if absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    /// Signal-propagation variance report (tap,variance CSV).
    Variance {
        #[arg(long, value_enum, default_value_t = ModeArg::Vcd)]
        mode: ModeArg,
        #[arg(long)]
        gain_override: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = PresetArg::Default)]
        preset: PresetArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dynamic range vs residual blocks per stage (depth,range CSV).
    DepthSweep {
        #[arg(long, value_enum, default_value_t = ModeArg::Vcd)]
        mode: ModeArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        max_depth: usize,
        #[arg(long, value_enum, default_value_t = PresetArg::Default)]
        preset: PresetArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Moving-average magnitude response (freq,db CSV).
    Filters {
        #[arg(long, default_value_t = 4)]
        avgpool_taps: usize,
        #[arg(long, default_value_t = 2001)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Alias energy of the decimation frontends on a full-band sweep.
    Alias {
        #[arg(long, default_value_t = 4)]
        factor: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parameter and multiply-add accounting (key,value CSV).
    Complexity {
        #[arg(long, value_enum, default_value_t = PresetArg::Default)]
        preset: PresetArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// 2f-model score from PEAQ output variables.
    #[command(name = "2f")]
    TwoF {
        #[arg(long)]
        amd1: f64,
        #[arg(long)]
        adb: f64,
    },
}

fn main() {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap also lands here for --help/--version, which are not errors
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 64,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::CorruptStream { .. } => 3,
                Error::Format(_) => 2,
                _ => 1,
            };
            std::process::exit(code);
        }
    }
}

fn preset_config(p: PresetArg) -> GeneratorConfig {
    match p {
        PresetArg::Default => GeneratorConfig::default(),
        PresetArg::Small => GeneratorConfig::small(),
    }
}

fn preset_quantizer(p: PresetArg, cfg: &GeneratorConfig) -> QuantizerConfig {
    match p {
        PresetArg::Default => Codec::default_quantizer_config(cfg),
        PresetArg::Small => QuantizerConfig::new(4, 64, cfg.latent_dim),
    }
}

fn emit(out: Option<&Path>, text: &str) -> hilcodec::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(Error::from),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_corpus(dir: &Path, sample_rate: u32) -> hilcodec::Result<Vec<Vec<f32>>> {
    let mut corpus = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|x| x == "wav").unwrap_or(false))
        .collect();
    entries.sort();
    for p in entries {
        match read_wav(&p) {
            Ok(w) if w.sample_rate == sample_rate => corpus.push(w.samples),
            Ok(w) => log::warn!(
                "skipping {} ({} Hz, model expects {sample_rate} Hz)",
                p.display(),
                w.sample_rate
            ),
            Err(e) => log::warn!("skipping {}: {e}", p.display()),
        }
    }
    if corpus.is_empty() {
        return Err(Error::Stats(format!(
            "no usable {sample_rate} Hz wav files in {}",
            dir.display()
        )));
    }
    Ok(corpus)
}

fn run(cli: Cli) -> hilcodec::Result<()> {
    match cli.cmd {
        Cmd::Init { output, preset, stats, seed, mode } => {
            let cfg = preset_config(preset);
            let qcfg = preset_quantizer(preset, &cfg);
            let stats = match stats {
                Some(p) => load_stats(&p)?,
                None => NormStats::identity(&cfg),
            };
            let codec = Codec::init(cfg, qcfg, mode.into(), stats, seed)?;
            save_codec(&output, &codec)?;
            println!("wrote {}", output.display());
            Ok(())
        }
        Cmd::Encode { model, input, output, nq } => {
            let codec = load_codec(&model)?;
            let wav = read_wav(&input)?;
            let cfg = &codec.generator.cfg;
            if wav.sample_rate != cfg.sample_rate {
                return Err(Error::format(format!(
                    "input is {} Hz but the model expects {} Hz (no resampling)",
                    wav.sample_rate, cfg.sample_rate
                )));
            }
            if nq < 1 || nq > codec.books.cfg.stages {
                return Err(Error::config(format!(
                    "nq must be within 1..={}",
                    codec.books.cfg.stages
                )));
            }
            let t0 = std::time::Instant::now();
            let frames = codec.encode_frames(&Tensor3::from_samples(&wav.samples), nq)?;
            let bytes = bitstream::pack(
                &frames,
                cfg.sample_rate,
                cfg.hop() as u16,
                codec.books.cfg.bits_per_stage(),
                nq as u8,
            )?;
            std::fs::write(&output, &bytes)?;
            let (header, _) = bitstream::unpack(&bytes)?;
            println!(
                "frames: {}  bitrate: {:.3} kbps  wall: {:.3} s",
                frames.len(),
                header.bitrate_bps() as f64 / 1000.0,
                t0.elapsed().as_secs_f64()
            );
            Ok(())
        }
        Cmd::Decode { model, input, output, format } => {
            let codec = load_codec(&model)?;
            let bytes = std::fs::read(&input)?;
            let (header, frames) = bitstream::unpack(&bytes)?;
            let cfg = &codec.generator.cfg;
            if header.sample_rate != cfg.sample_rate || header.hop as usize != cfg.hop() {
                return Err(Error::format(format!(
                    "stream is {} Hz / hop {}, model expects {} Hz / hop {}",
                    header.sample_rate,
                    header.hop,
                    cfg.sample_rate,
                    cfg.hop()
                )));
            }
            if header.nq as usize > codec.books.cfg.stages
                || header.codebook_bits != codec.books.cfg.bits_per_stage()
            {
                return Err(Error::format("stream quantizer layout does not match the model"));
            }
            let wave = if frames.is_empty() {
                Vec::new()
            } else {
                codec.decode_frames(&frames, 1)?.data
            };
            debug_assert_eq!(wave.len(), header.sample_count());
            let fmt = match format {
                WavFmtArg::Pcm16 => SampleFormat::Pcm16,
                WavFmtArg::Float32 => SampleFormat::Float32,
            };
            write_wav(&output, header.sample_rate, &wave, fmt)?;
            println!("wrote {} samples to {}", wave.len(), output.display());
            Ok(())
        }
        Cmd::Analyze { what } => run_analyze(what),
        Cmd::Bench { model, seconds, chunk, nq, self_test } => {
            if self_test {
                let report = rtf_selftest(seconds, chunk, 24_000);
                print!("{}", report.to_csv());
                return Ok(());
            }
            let model = model.ok_or_else(|| {
                Error::config("--model is required unless --self-test is given")
            })?;
            let codec = load_codec(&model)?;
            let mut clock = MonotonicClock::new();
            let report = bench_rtf(&codec, nq, seconds, chunk, &mut clock)?;
            print!("{}", report.to_csv());
            Ok(())
        }
        Cmd::Stats { corpus, n_chunks, seed, output, preset } => {
            let cfg = preset_config(preset);
            let corpus = load_corpus(&corpus, cfg.sample_rate)?;
            let stats = compute_norm_stats(&corpus, n_chunks, seed, &cfg)?;
            save_stats(&output, &stats)?;
            println!("wrote {}", output.display());
            Ok(())
        }
        Cmd::RvqTrain { model, corpus, steps, seed, output } => {
            let mut codec = load_codec(&model)?;
            let corpus = load_corpus(&corpus, codec.generator.cfg.sample_rate)?;
            train_rvq(&mut codec, &corpus, steps, seed)?;
            let out = output.unwrap_or(model);
            save_codec(&out, &codec)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn run_analyze(what: AnalyzeCmd) -> hilcodec::Result<()> {
    match what {
        AnalyzeCmd::Variance { mode, gain_override, seed, preset, out } => {
            let cfg = preset_config(preset);
            let report = signal_propagation(&cfg, seed, mode.into(), gain_override)?;
            emit(out.as_deref(), &report.to_csv())
        }
        AnalyzeCmd::DepthSweep { mode, seed, max_depth, preset, out } => {
            let cfg = preset_config(preset);
            let depths: Vec<usize> = (1..=max_depth).collect();
            let points = depth_sweep(&cfg, &depths, mode.into(), seed)?;
            let mut csv = String::from("depth,dynamic_range\n");
            for p in points {
                csv.push_str(&format!("{},{}\n", p.depth, p.dynamic_range));
            }
            emit(out.as_deref(), &csv)
        }
        AnalyzeCmd::Filters { avgpool_taps, points, out } => {
            let resp = avgpool_response(avgpool_taps, points);
            let mut csv = String::from("freq,db\n");
            for (f, db) in resp {
                csv.push_str(&format!("{f},{db}\n"));
            }
            emit(out.as_deref(), &csv)
        }
        AnalyzeCmd::Alias { factor, out } => {
            let sweep = chirp(16384, 0.0, 0.5);
            let mut csv = String::from("frontend,alias_fraction\n");
            for (name, fe) in
                [("plain", Frontend::Plain), ("avgpool", Frontend::AvgPool), ("pqmf", Frontend::Pqmf)]
            {
                csv.push_str(&format!("{name},{}\n", alias_energy(&sweep, factor, fe)?));
            }
            emit(out.as_deref(), &csv)
        }
        AnalyzeCmd::Complexity { preset, out } => {
            let cfg = preset_config(preset);
            let qcfg = preset_quantizer(preset, &cfg);
            let report = count_complexity(&cfg, &qcfg)?;
            emit(out.as_deref(), &report.to_csv())
        }
        AnalyzeCmd::TwoF { amd1, adb } => {
            println!("{:.2}", two_f_model_score(amd1, adb));
            Ok(())
        }
    }
}

/// Collect latents from the corpus, k-means initialize each stage on the
/// residuals left by the previous stages, then run EMA steps with dead-code
/// reinitialization. Prints the per-step quantization MSE.
fn train_rvq(codec: &mut Codec, corpus: &[Vec<f32>], steps: usize, seed: u64) -> hilcodec::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = codec.books.cfg.dim;
    let hop = codec.generator.cfg.hop();

    // latent pool, frame-major
    let mut pool: Vec<f32> = Vec::new();
    for samples in corpus {
        let keep = samples.len() / hop * hop;
        if keep == 0 {
            continue;
        }
        let z = codec.generator.encode(&Tensor3::from_samples(&samples[..keep]))?;
        for t in 0..z.time {
            for c in 0..dim {
                pool.push(z.get(0, c, t));
            }
        }
    }
    let n_frames = pool.len() / dim;
    if n_frames < codec.books.cfg.entries {
        return Err(Error::config(format!(
            "corpus yields {n_frames} latent frames, need at least {}",
            codec.books.cfg.entries
        )));
    }

    // stage-wise k-means on residuals
    let mut residuals = pool.clone();
    for s in 0..codec.books.cfg.stages {
        let (centroids, _) = kmeans_init(&residuals, dim, codec.books.cfg.entries, 15, &mut rng)?;
        let base = s * codec.books.cfg.entries * dim;
        codec.books.vectors[base..base + centroids.len()].copy_from_slice(&centroids);
        for e in 0..codec.books.cfg.entries {
            codec.books.usage_ema[s * codec.books.cfg.entries + e] = 1.0;
            let cb = (s * codec.books.cfg.entries + e) * dim;
            codec.books.cluster_sum_ema[cb..cb + dim]
                .copy_from_slice(&codec.books.vectors[cb..cb + dim]);
        }
        for f in 0..n_frames {
            let r: Vec<f32> = residuals[f * dim..(f + 1) * dim].to_vec();
            let e = nearest_entry(&codec.books, s, &r);
            let cb = codec.books.entry(s, e);
            for j in 0..dim {
                residuals[f * dim + j] -= cb[j];
            }
        }
    }

    // EMA refinement with reinit
    let batch = 256.min(n_frames);
    println!("step,mse");
    for step in 0..steps {
        let mut data = Vec::with_capacity(batch * dim);
        for _ in 0..batch {
            let f = rand::Rng::gen_range(&mut rng, 0..n_frames);
            data.extend_from_slice(&pool[f * dim..(f + 1) * dim]);
        }
        let z = Tensor3::from_vec(transpose_frames(&data, batch, dim), 1, dim, batch)?;
        let (_, zhat, trace) = rvq_encode_trace(&z, &codec.books, codec.books.cfg.stages)?;
        let mse = hilcodec::quantizer::commitment_loss(&z, &zhat)?;
        println!("{step},{mse}");
        ema_update(&mut codec.books, &trace);
        reinit_dead_codes(&mut codec.books, &pool, &mut rng);
    }
    Ok(())
}

/// frame-major `[frames][dim]` -> channel-major `[dim][frames]`.
fn transpose_frames(data: &[f32], frames: usize, dim: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; data.len()];
    for f in 0..frames {
        for c in 0..dim {
            out[c * frames + f] = data[f * dim + c];
        }
    }
    out
}
