use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use grille_core::image::{ImageBuffer, Provenance};
use grille_core::keyed::Secret;
use grille_core::latent_search::StegoMode;
use grille_core::message_codec::MessageBits;
use grille_core::pipeline::{
    self, ber_rows_to_csv, cmd_audit, cmd_decrypt, cmd_encrypt, cmd_eval_ber, cmd_eval_pe,
    cmd_ingest, cmd_keygen, cmd_synth_corpus, cmd_train, pe_rows_to_csv, toy_demo_csv,
    EncryptRequest, Models, PipelineConfig,
};
use grille_core::toy_cipher::PlanePoint;

#[derive(Parser, Debug)]
#[command(
    name = "grille",
    version,
    about = "Generative grille cipher: hide bits in GAN-completed images"
)]
struct Cli {
    /// TOML configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the master seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Run every parallel section on one thread.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Normalize a directory of images into a dataset archive.
    Ingest {
        #[arg(long)]
        src: PathBuf,
        /// Archive path; defaults to the configured dataset.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic image corpus as PNG files.
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        count: usize,
    },
    /// Train the generator/discriminator pair on the dataset.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Derive a grille key for the configured mask.
    Keygen {
        #[arg(long)]
        out: PathBuf,
        /// 64 hex digits; derived from the master seed when omitted.
        #[arg(long)]
        secret: Option<String>,
    },
    /// Hide a message in a generated image.
    Encrypt(EncryptArgs),
    /// Read the bits under the grille of a stego image.
    Decrypt {
        #[arg(long)]
        stego: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep only the first N bits.
        #[arg(long)]
        length: Option<usize>,
        /// Write packed bytes instead of a 0/1 text.
        #[arg(long)]
        bytes: bool,
    },
    /// Bit error rate against search iterations for every configured bit plane.
    EvalBer {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        bpis: Option<Vec<u8>>,
        #[arg(long)]
        n_images: Option<usize>,
    },
    /// Steganalysis detection error for every payload and bit plane.
    EvalPe {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        payloads: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        bpis: Option<Vec<u8>>,
        #[arg(long)]
        n_images: Option<usize>,
    },
    /// Sample the planar line cipher in both modes.
    ToyDemo {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
        message: f64,
        #[arg(long, default_value_t = 0.3, allow_hyphen_values = true)]
        key_x: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        key_y: f64,
    },
    /// Recompute every BER recorded in an encryption manifest.
    Audit {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        key: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct EncryptArgs {
    #[arg(long)]
    key: PathBuf,
    /// Message file, embedded as raw bytes.
    #[arg(long, conflicts_with = "bits", required_unless_present = "bits")]
    message: Option<PathBuf>,
    /// Message given inline as a 0/1 string.
    #[arg(long)]
    bits: Option<String>,
    /// Cover PNG; a held-out dataset image is used otherwise.
    #[arg(long)]
    cover: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    cover_index: usize,
    /// Stego output; must be PNG.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    mode: Option<StegoMode>,
    #[arg(long)]
    iterations: Option<usize>,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

/// Write to a sibling temporary file, then rename over the target.
fn write_atomic(path: &Path, data: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let result = (|| -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(data)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result.with_context(|| format!("writing {}", path.display()))
}

fn write_report(out: &Path, csv: &str, json: &impl serde::Serialize) -> Result<()> {
    write_atomic(out, csv.as_bytes())?;
    write_atomic(
        &out.with_extension("json"),
        serde_json::to_string_pretty(json)?.as_bytes(),
    )
}

fn load_models(cfg: &PipelineConfig) -> Result<Models> {
    Models::load(&cfg.checkpoint)
        .with_context(|| format!("loading checkpoint {}", cfg.checkpoint.display()))
}

fn run(cli: Cli) -> Result<()> {
    if cli.deterministic {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build_global()?;
    }
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Ingest { src, out } => {
            let out = out.unwrap_or_else(|| cfg.dataset.clone());
            let ds = cmd_ingest(&src, &out, cfg.geometry)?;
            for s in &ds.skipped {
                log::warn!("skipped {}: {}", s.path, s.reason);
            }
            println!(
                "{}",
                serde_json::json!({ "archive": out, "records": ds.len(), "skipped": ds.skipped.len(), "digest": ds.digest() })
            );
        }
        Command::SynthCorpus { out, count } => {
            let n = cmd_synth_corpus(&out, count, cfg.geometry, cfg.seed)?;
            println!("{}", serde_json::json!({ "dir": out, "images": n }));
        }
        Command::Train { epochs } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            cfg.validate()?;
            let report = cmd_train(&cfg)?;
            print!("{}", report.to_csv());
        }
        Command::Keygen { out, secret } => {
            let secret = match secret {
                Some(hex) => Some(Secret::from_hex(&hex).context("secret must be 64 hex digits")?),
                None => None,
            };
            let (key, _) = cmd_keygen(&cfg, &out, secret)?;
            println!(
                "{}",
                serde_json::json!({ "key": out, "capacity": key.capacity(), "bpi": key.bpi(), "digest": key.digest() })
            );
        }
        Command::Encrypt(args) => {
            if let Some(mode) = args.mode {
                cfg.search.stego_mode = mode;
            }
            if let Some(it) = args.iterations {
                cfg.search.iterations = it;
            }
            cfg.validate()?;
            let message = match (&args.message, &args.bits) {
                (Some(path), _) => MessageBits::from_bytes(
                    &std::fs::read(path).with_context(|| format!("reading {}", path.display()))?,
                ),
                (None, Some(bits)) => MessageBits::from_bit_string(bits)?,
                (None, None) => bail!("either --message or --bits is required"),
            };
            let cover = match &args.cover {
                Some(p) => Some(ImageBuffer::load_png(p, Provenance::Dataset)?),
                None => None,
            };
            let models = load_models(&cfg)?;
            let req = EncryptRequest {
                message,
                key: pipeline::load_key(&args.key)?,
                key_path: args.key.clone(),
                cover,
                cover_index: args.cover_index,
                out: args.out.clone(),
            };
            let manifest = cmd_encrypt(&cfg, &models, &req)?;
            let rec = &manifest.records[0];
            println!(
                "{}",
                serde_json::json!({
                    "stego": args.out,
                    "ber": rec.ber,
                    "best_iteration": rec.best_iteration,
                    "embedding_rate": manifest.embedding_rate,
                    "blowup_factor": manifest.blowup_factor,
                })
            );
        }
        Command::Decrypt {
            stego,
            key,
            out,
            length,
            bytes,
        } => {
            let mut bits = cmd_decrypt(&stego, &key)?;
            if let Some(n) = length {
                if n > bits.len() {
                    bail!("requested {n} bits but the grille holds {}", bits.len());
                }
                bits = bits.prefix(n);
            }
            let data = if bytes {
                bits.to_bytes()
            } else {
                (bits.to_bit_string() + "\n").into_bytes()
            };
            write_atomic(&out, &data)?;
            println!("{}", serde_json::json!({ "out": out, "bits": bits.len() }));
        }
        Command::EvalBer {
            out,
            bpis,
            n_images,
        } => {
            if let Some(b) = bpis {
                cfg.eval.bpis = b;
            }
            if let Some(n) = n_images {
                cfg.eval.n_images = n;
            }
            cfg.validate()?;
            let models = load_models(&cfg)?;
            let covers = pipeline::held_out_covers(&cfg)?;
            let rows = cmd_eval_ber(&cfg, &models, &covers)?;
            let csv = ber_rows_to_csv(&rows);
            write_report(&out, &csv, &rows)?;
            print!("{csv}");
        }
        Command::EvalPe {
            out,
            payloads,
            bpis,
            n_images,
        } => {
            if let Some(p) = payloads {
                cfg.eval.payloads = p;
            }
            if let Some(b) = bpis {
                cfg.eval.bpis = b;
            }
            if let Some(n) = n_images {
                cfg.eval.n_images = n;
            }
            cfg.validate()?;
            let models = load_models(&cfg)?;
            let covers = pipeline::held_out_covers(&cfg)?;
            let rows = cmd_eval_pe(&cfg, &models, &covers)?;
            let csv = pe_rows_to_csv(&rows);
            write_report(&out, &csv, &rows)?;
            print!("{csv}");
        }
        Command::ToyDemo {
            out,
            n,
            message,
            key_x,
            key_y,
        } => {
            let csv = toy_demo_csv(n, message, PlanePoint::new(key_x, key_y)?, cfg.seed)?;
            write_atomic(&out, csv.as_bytes())?;
            println!("{}", serde_json::json!({ "out": out, "points": 2 * n }));
        }
        Command::Audit { manifest, key } => {
            let report = cmd_audit(&manifest, key.as_deref())?;
            println!("{}", serde_json::to_string(&report)?);
            if !report.passed() {
                bail!("audit found {} mismatches", report.mismatches.len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err
                .downcast_ref::<grille_core::Error>()
                .map_or(1, grille_core::Error::exit_code);
            ExitCode::from(u8::try_from(code).unwrap_or(1))
        }
    }
}
