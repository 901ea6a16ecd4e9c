//! The `gms` command line. Every subcommand reads files and flags, writes
//! files (or stdout), and draws all randomness from the root seed.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::config::{resolve_seed, ConfigFile};
use crate::decoder::{psnr, read_network, train, write_network, Architecture, DecoderNetwork, TrainConfig};
use crate::error::{GmsError, Result};
use crate::eval::{model_jsd, run_comparison, ComparisonConfig};
use crate::gp::{Optimizer, PreferenceDocument, PreferenceModel};
use crate::gplvm::{LatentDocument, LatentModel};
use crate::maps::{combined_product, preference_map, similarity_map, GridKind, LatentGrid};
use crate::material::{
    preset_user, read_samples, sample_uniform_with, write_samples, MaterialParams, PreferenceSample, SampleRecord,
    DEFAULT_DIM,
};
use crate::recommend::{generate_gallery, recommend, RecommendationConfig};
use crate::render::{generate_dataset, render_reference, DEFAULT_RES};
use crate::seed;
use crate::service::{start, Api};
use crate::session::{fit_latent_model, fit_preference_model};

#[derive(Parser, Debug)]
#[command(name = "gms", version, about = "Preference-driven material synthesis")]
pub struct Cli {
    /// Root seed; overrides GMS_SEED and the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// key = value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct Output {
    /// Output file (stdout when omitted).
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write an unscored gallery of uniform materials.
    Gallery {
        #[arg(long, default_value_t = DEFAULT_DIM)]
        m: usize,
        #[arg(long, default_value_t = 20)]
        count: usize,
        /// Scoring round; each round draws a fresh gallery.
        #[arg(long, default_value_t = 0)]
        round: u64,
        #[command(flatten)]
        out: Output,
    },
    /// Attach scores to a sample file.
    Score {
        input: PathBuf,
        /// Score with a synthetic user (glassy, translucent).
        #[arg(long, conflicts_with = "scores")]
        oracle: Option<String>,
        /// Comma-separated scores, one per sample.
        #[arg(long, value_delimiter = ',')]
        scores: Option<Vec<f64>>,
        /// Append to an existing scored file instead of starting fresh.
        #[arg(long)]
        append: Option<PathBuf>,
        #[command(flatten)]
        out: Output,
    },
    /// Fit the preference model to scored samples.
    Fit {
        samples: PathBuf,
        #[arg(long)]
        optimizer: Option<Optimizer>,
        /// Keep the noise level at its initial value.
        #[arg(long)]
        freeze_noise: bool,
        #[command(flatten)]
        out: Output,
    },
    /// Recommend materials predicted to score at least the threshold.
    Recommend {
        model: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, default_value_t = 10)]
        hillclimb_steps: usize,
        #[arg(long, default_value_t = 10_000)]
        budget: usize,
        #[command(flatten)]
        out: Output,
    },
    /// Embed the high-scoring samples in a 2-D latent plane.
    Gplvm {
        samples: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        /// Largest number of samples to embed.
        #[arg(long)]
        z: Option<usize>,
        #[command(flatten)]
        out: Output,
    },
    /// Build a latent grid; writes `<prefix>.txt` and `<prefix>.json`.
    Map {
        #[arg(long)]
        latent: PathBuf,
        #[arg(long, default_value = "product")]
        kind: GridKind,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        decoder: Option<PathBuf>,
        /// Material the similarity map compares against (default: the best embedded sample).
        #[arg(long, value_delimiter = ',')]
        reference: Option<Vec<f64>>,
        #[arg(long)]
        r: Option<usize>,
        #[arg(long)]
        prefix: PathBuf,
    },
    /// Reference render of one material as binary PPM.
    Render {
        #[arg(long, value_delimiter = ',', required = true)]
        params: Vec<f64>,
        #[arg(long, default_value_t = DEFAULT_RES)]
        res: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[command(flatten)]
        out: Output,
    },
    /// Train a decoder on freshly rendered pairs.
    TrainDecoder {
        #[arg(long, default_value_t = 4000)]
        pairs: usize,
        #[arg(long, default_value_t = DEFAULT_RES)]
        res: usize,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        /// Per-pixel noise added to the training targets.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Per-epoch loss history as CSV.
        #[arg(long)]
        loss: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decoder preview for a material or latent point as binary PPM.
    Predict {
        #[arg(long)]
        decoder: PathBuf,
        #[arg(long, value_delimiter = ',', conflicts_with = "point")]
        params: Option<Vec<f64>>,
        /// Latent point `x,y`; needs --latent.
        #[arg(long, value_delimiter = ',', requires = "latent")]
        point: Option<Vec<f64>>,
        #[arg(long)]
        latent: Option<PathBuf>,
        /// Also report PSNR against the reference render.
        #[arg(long)]
        compare: bool,
        #[command(flatten)]
        out: Output,
    },
    /// JSD between a fitted model and a synthetic user on held-out samples.
    EvalJsd {
        model: PathBuf,
        #[arg(long, default_value = "glassy")]
        oracle: String,
        #[arg(long, default_value_t = 750)]
        held_out: usize,
    },
    /// Optimizer comparison over dimensions and sample counts (CSV report).
    Table2 {
        #[arg(long, value_delimiter = ',', default_value = "19,38")]
        ms: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "150,250,500")]
        ns: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "glassy")]
        oracles: Vec<String>,
        #[arg(long, default_value_t = 750)]
        held_out: usize,
        #[command(flatten)]
        out: Output,
    },
    /// Serve the HTTP API on a loopback port.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        workers: Option<usize>,
        /// Decoder loaded into every new session of matching dimension.
        #[arg(long)]
        decoder: Option<PathBuf>,
    },
}

fn emit(out: &Output, bytes: &[u8]) -> Result<()> {
    match &out.out {
        Some(p) => std::fs::write(p, bytes)?,
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn json_out<T: serde::Serialize>(out: &Output, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    emit(out, text.as_bytes())
}

fn load_samples(path: &Path) -> Result<(usize, Vec<SampleRecord>)> {
    read_samples(BufReader::new(File::open(path)?))
}

fn load_scored(path: &Path) -> Result<(usize, Vec<PreferenceSample>)> {
    let (m, records) = load_samples(path)?;
    let samples = records
        .into_iter()
        .map(|r| {
            let score = r
                .score
                .ok_or_else(|| GmsError::Parse(format!("{}: unscored sample", path.display())))?;
            PreferenceSample::new(r.params, score)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((m, samples))
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

fn load_model(path: &Path) -> Result<PreferenceModel> {
    PreferenceModel::from_document(&load_json::<PreferenceDocument>(path)?)
}

fn load_latent(path: &Path) -> Result<LatentModel> {
    LatentModel::from_document(&load_json::<LatentDocument>(path)?)
}

fn load_decoder(path: &Path) -> Result<DecoderNetwork> {
    read_network(BufReader::new(File::open(path)?))
}

pub fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let mut config = file.session_config()?;
    config.seed = resolve_seed(cli.seed, file.get("seed")?);
    let root = config.seed;
    match cli.command {
        Command::Gallery { m, count, round, out } => {
            let items = generate_gallery(count, m, seed::derive_indexed(root, "gallery", round))?;
            let records: Vec<_> = items
                .into_iter()
                .map(|params| SampleRecord { params, score: None })
                .collect();
            let mut buf = Vec::new();
            write_samples(&mut buf, m, &records)?;
            emit(&out, &buf)
        }
        Command::Score {
            input,
            oracle,
            scores,
            append,
            out,
        } => {
            let (m, mut records) = load_samples(&input)?;
            match (oracle, scores) {
                (Some(name), None) => {
                    let user = preset_user(&name, m)?;
                    for r in &mut records {
                        r.score = Some(user.score(&r.params)?);
                    }
                }
                (None, Some(scores)) => {
                    if scores.len() != records.len() {
                        return Err(GmsError::DimensionMismatch {
                            expected: records.len(),
                            actual: scores.len(),
                        });
                    }
                    for (r, s) in records.iter_mut().zip(scores) {
                        r.score = Some(PreferenceSample::new(r.params.clone(), s)?.score);
                    }
                }
                _ => return Err(GmsError::Parse("give --oracle or --scores".into())),
            }
            if let Some(prev) = append {
                let (pm, mut old) = load_samples(&prev)?;
                if pm != m {
                    return Err(GmsError::DimensionMismatch { expected: pm, actual: m });
                }
                old.extend(records);
                records = old;
            }
            let mut buf = Vec::new();
            write_samples(&mut buf, m, &records)?;
            emit(&out, &buf)
        }
        Command::Fit {
            samples,
            optimizer,
            freeze_noise,
            out,
        } => {
            let (m, samples) = load_scored(&samples)?;
            if let Some(o) = optimizer {
                config.optimizer = o;
            }
            config.freeze_noise |= freeze_noise;
            let model = fit_preference_model(&samples, m, &config)?;
            log::info!("log marginal likelihood {:.4}", model.log_marginal_likelihood());
            json_out(&out, &model.to_document())
        }
        Command::Recommend {
            model,
            threshold,
            count,
            hillclimb_steps,
            budget,
            out,
        } => {
            let model = load_model(&model)?;
            let set = recommend(
                &model,
                &RecommendationConfig {
                    threshold: threshold.unwrap_or(config.threshold),
                    count: count.unwrap_or(config.recommendation_count),
                    budget,
                    hillclimb_steps,
                    seed: seed::derive(root, "recommend"),
                    ..Default::default()
                },
            )?;
            log::info!(
                "acceptance rate {:.4}, hill climbs {}",
                set.acceptance_rate,
                set.hillclimb_invocations
            );
            let mut buf = Vec::new();
            write_samples(&mut buf, model.dim(), &set.to_records())?;
            emit(&out, &buf)
        }
        Command::Gplvm {
            samples,
            threshold,
            z,
            out,
        } => {
            let (_, samples) = load_scored(&samples)?;
            let lat = fit_latent_model(
                &samples,
                threshold.unwrap_or(config.threshold),
                z.unwrap_or(config.latent_count),
            )?;
            json_out(&out, &lat.to_document())
        }
        Command::Map {
            latent,
            kind,
            model,
            decoder,
            reference,
            r,
            prefix,
        } => {
            let lat = load_latent(&latent)?;
            let pref = || -> Result<LatentGrid> {
                let path = model.as_ref().ok_or(GmsError::NotFitted("preference model (--model)"))?;
                preference_map(&load_model(path)?, &lat, r.unwrap_or(config.preference_res))
            };
            let sim = |res: usize| -> Result<LatentGrid> {
                let path = decoder.as_ref().ok_or(GmsError::NotFitted("decoder network (--decoder)"))?;
                let reference = match &reference {
                    Some(v) => MaterialParams::new(v.clone())?,
                    None => lat.observed()[0].clone(),
                };
                similarity_map(&load_decoder(path)?, &lat, &reference, res)
            };
            let grid = match kind {
                GridKind::Preference => pref()?,
                GridKind::Similarity => sim(r.unwrap_or(config.similarity_res))?,
                GridKind::Product => combined_product(&pref()?, &sim(config.similarity_res)?)?,
            };
            std::fs::write(prefix.with_extension("txt"), grid.to_text())?;
            let mut header = serde_json::to_string_pretty(&grid.header())?;
            header.push('\n');
            std::fs::write(prefix.with_extension("json"), header)?;
            Ok(())
        }
        Command::Render { params, res, noise, out } => {
            let img = render_reference(&MaterialParams::new(params)?, res, noise, seed::derive(root, "render/noise"))?;
            emit(&out, &img.to_ppm())
        }
        Command::TrainDecoder {
            pairs,
            res,
            epochs,
            batch,
            learning_rate,
            noise,
            loss,
            out,
        } => {
            let data = generate_dataset(pairs, res, noise, seed::derive(root, "dataset"))?;
            let mut net = DecoderNetwork::<f32>::init_glorot(
                Architecture::standard(DEFAULT_DIM, res),
                seed::derive(root, "decoder/init"),
            )?;
            let mut cfg = TrainConfig {
                batch_size: batch,
                epochs,
                seed: seed::derive(root, "decoder/train"),
                ..Default::default()
            };
            cfg.adam.learning_rate = learning_rate;
            let report = train(&mut net, data, &cfg)?;
            if let Some(p) = loss {
                std::fs::write(p, report.to_csv())?;
            }
            write_network(&net, File::create(out)?)
        }
        Command::Predict {
            decoder,
            params,
            point,
            latent,
            compare,
            out,
        } => {
            let net = load_decoder(&decoder)?;
            let x = match (params, point, latent) {
                (Some(p), None, _) => MaterialParams::new(p)?,
                (None, Some(p), Some(l)) => {
                    let [px, py] = p[..] else {
                        return Err(GmsError::Parse("--point takes x,y".into()));
                    };
                    load_latent(&l)?.project(&[px, py]).params
                }
                _ => return Err(GmsError::Parse("give --params or --point with --latent".into())),
            };
            let img = net.forward(&x)?;
            if compare {
                let res = net
                    .resolution()
                    .ok_or_else(|| GmsError::InvalidDimension("decoder output is not a square image".into()))?;
                eprintln!("psnr {}", psnr(&img, &render_reference(&x, res, 0.0, 0)?)?);
            }
            emit(&out, &img.to_ppm())
        }
        Command::EvalJsd {
            model,
            oracle,
            held_out,
        } => {
            let model = load_model(&model)?;
            let user = preset_user(&oracle, model.dim())?;
            let mut rng = seed::rng(seed::derive(root, "eval/held-out"));
            let xs: Vec<_> = (0..held_out).map(|_| sample_uniform_with(&mut rng, model.dim())).collect();
            let truth = xs.iter().map(|x| user.score(x)).collect::<Result<Vec<_>>>()?;
            println!("{:.6}", model_jsd(&model, &xs, &truth)?);
            Ok(())
        }
        Command::Table2 {
            ms,
            ns,
            oracles,
            held_out,
            out,
        } => {
            let report = run_comparison(&ComparisonConfig {
                oracles,
                ms,
                ns,
                optimizers: vec![Optimizer::Rprop, Optimizer::GradientAscent],
                held_out,
                seed: root,
            })?;
            emit(&out, report.to_csv().as_bytes())
        }
        Command::Serve {
            port,
            workers,
            decoder,
        } => {
            let port = port.or(file.get("port")?).unwrap_or(8750);
            let workers = workers.or(file.get("workers")?).unwrap_or(4);
            let net = decoder.map(|p| load_decoder(&p)).transpose()?.map(Arc::new);
            let api = Arc::new(Api::new(config, net));
            let server = start(api, &format!("127.0.0.1:{port}"), workers)?;
            eprintln!("listening on http://{}", server.addr());
            server.join();
            Ok(())
        }
    }
}
