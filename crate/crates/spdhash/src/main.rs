use std::error::Error as StdError;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use spdhash::archive::FeatureArchive;
use spdhash::config::load_json;
use spdhash::report::{self, write_text};
use spdhash::{read_checkpoint, synth_generate, synth_generate_split, write_checkpoint, SynthConfig};
use spdhash_core::covpool::{self, ProbeLoss, SpectrumPolicy};
use spdhash_core::eval::{self, Scenario};
use spdhash_core::hashnet::Activation;
use spdhash_core::rng::seeded;
use spdhash_core::trainer::{ImageSource, TrainConfig, Trainer};

type CliResult = Result<(), Box<dyn StdError>>;

/// Gradient check failures above this exit nonzero.
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "spdhash", version, about = "Image-video hashing with SPD covariance pooling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    I2v,
    V2i,
    V2v,
}

impl From<Mode> for Scenario {
    fn from(m: Mode) -> Self {
        match m {
            Mode::I2v => Scenario::I2v,
            Mode::V2i => Scenario::V2i,
            Mode::V2v => Scenario::V2v,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Probe {
    SumOfSquares,
    RandomLinear,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Error,
    Clamp,
}

#[derive(Clone, Copy, ValueEnum)]
enum ActivationArg {
    Identity,
    Tanh,
}

#[derive(Clone, Copy, ValueEnum)]
enum ImageSourceArg {
    VideoFrames,
    Archive,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labelled archive.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write a held-out archive; the training archive then gets
        /// three images per video and the held-out one gets one.
        #[arg(long)]
        test_out: Option<PathBuf>,
        /// Held-out videos per class when `--test-out` is given.
        #[arg(long, default_value_t = 6, requires = "test_out")]
        test_videos: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        history: Option<PathBuf>,
        #[command(flatten)]
        overrides: TrainOverrides,
        /// Print wall-clock training time to stderr.
        #[arg(long)]
        timing: bool,
    },
    /// Write the binary code of every sample.
    Encode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Accepted for uniformity; encoding draws no random numbers.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rank database items for every query.
    Retrieve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        query_data: PathBuf,
        #[arg(long)]
        db_data: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long, default_value_t = 10)]
        topk: usize,
        /// Write to a file instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Accepted for uniformity; retrieval draws no random numbers.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compute mAP and the precision-recall curve.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        query_data: PathBuf,
        #[arg(long)]
        db_data: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        out_map: PathBuf,
        #[arg(long)]
        out_pr: PathBuf,
        /// Per-query average precision.
        #[arg(long)]
        out_ap: Option<PathBuf>,
        /// Accepted for uniformity; evaluation draws no random numbers.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Finite-difference check of the covariance pooling backward pass.
    Gradcheck {
        /// Frames and feature length as `m,d`.
        #[arg(long, value_parser = parse_shape)]
        shape: (usize, usize),
        #[arg(long, default_value_t = covpool::DEFAULT_EPSILON)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Probe::SumOfSquares)]
        probe: Probe,
    },
}

#[derive(clap::Args)]
struct TrainOverrides {
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Subjects per batch.
    #[arg(long)]
    subjects: Option<usize>,
    /// Video/image pairs per subject.
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    code_len: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long, value_enum)]
    activation: Option<ActivationArg>,
    #[arg(long, value_enum)]
    spectrum_policy: Option<PolicyArg>,
    #[arg(long, value_enum)]
    image_source: Option<ImageSourceArg>,
    #[arg(long)]
    seed: Option<u64>,
}

impl TrainOverrides {
    fn apply(&self, cfg: &mut TrainConfig) {
        macro_rules! set {
            ($($field:ident => $target:ident),* $(,)?) => {
                $(if let Some(v) = self.$field { cfg.$target = v; })*
            };
        }
        set!(
            learning_rate => learning_rate,
            momentum => momentum,
            weight_decay => weight_decay,
            steps => steps,
            subjects => subjects_per_batch,
            pairs => pairs_per_subject,
            alpha => alpha,
            lambda1 => lambda1,
            lambda2 => lambda2,
            code_len => code_len,
            epsilon => epsilon,
            feature_dim => feature_dim,
            seed => seed,
        );
        if let Some(a) = self.activation {
            cfg.activation = match a {
                ActivationArg::Identity => Activation::Identity,
                ActivationArg::Tanh => Activation::Tanh,
            };
        }
        if let Some(p) = self.spectrum_policy {
            cfg.spectrum_policy = match p {
                PolicyArg::Error => SpectrumPolicy::Error,
                PolicyArg::Clamp => SpectrumPolicy::Clamp,
            };
        }
        if let Some(s) = self.image_source {
            cfg.image_source = match s {
                ImageSourceArg::VideoFrames => ImageSource::VideoFrames,
                ImageSourceArg::Archive => ImageSource::Archive,
            };
        }
    }
}

fn parse_shape(s: &str) -> Result<(usize, usize), String> {
    let (m, d) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `m,d`, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok((parse(m)?, parse(d)?))
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Synth {
            config,
            out,
            test_out,
            test_videos,
            seed,
        } => {
            let mut cfg: SynthConfig = match &config {
                Some(p) => load_json(p)?,
                None => SynthConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            match test_out {
                None => synth_generate(&cfg)?.write(&out)?,
                Some(test_path) => {
                    let (train, test) = synth_generate_split(&cfg, test_videos)?;
                    train.write(&out)?;
                    test.write(&test_path)?;
                }
            }
        }
        Command::Train {
            data,
            config,
            out,
            history,
            overrides,
            timing,
        } => {
            let mut cfg: TrainConfig = match &config {
                Some(p) => load_json(p)?,
                None => TrainConfig::default(),
            };
            overrides.apply(&mut cfg);
            let dataset = FeatureArchive::read(&data)?.to_dataset()?;
            let started = Instant::now();
            let mut trainer = Trainer::new(&dataset, cfg.clone())?;
            for _ in 0..cfg.steps {
                trainer.step()?;
            }
            let (model, hist) = trainer.finish();
            if timing {
                eprintln!("trained {} steps in {:.3} s", cfg.steps, started.elapsed().as_secs_f64());
            }
            write_checkpoint(&model, &out)?;
            if let Some(p) = history {
                write_text(&p, &report::history_csv(&hist))?;
            }
            if let (Some(first), Some(last)) = (hist.records.first(), hist.records.last()) {
                println!("steps={} J_first={} J_last={}", hist.records.len(), first.objective, last.objective);
            }
        }
        Command::Encode { model, data, out, .. } => {
            let model = read_checkpoint(&model)?;
            let dataset = FeatureArchive::read(&data)?.to_dataset()?;
            let codes = eval::encode_dataset(&model, &dataset)?;
            write_text(&out, &report::codes_csv(&dataset, &codes))?;
        }
        Command::Retrieve {
            model,
            query_data,
            db_data,
            mode,
            topk,
            out,
            ..
        } => {
            let model = read_checkpoint(&model)?;
            let scenario = Scenario::from(mode);
            let queries = FeatureArchive::read(&query_data)?.to_dataset()?;
            let db = FeatureArchive::read(&db_data)?.to_dataset()?;
            let queries = eval::queries_of(&model, &queries, scenario.query_modality())?;
            let index = eval::index_of(&model, &db, scenario.database_modality())?;
            let ranked = queries
                .iter()
                .map(|q| index.query(&q.code).map(|r| (q.id, r)))
                .collect::<Result<Vec<_>, _>>()?;
            let text = report::retrieval_csv(ranked.iter().map(|(id, r)| (*id, r)), topk);
            match out {
                Some(p) => write_text(&p, &text)?,
                None => print!("{text}"),
            }
        }
        Command::Eval {
            model,
            query_data,
            db_data,
            mode,
            out_map,
            out_pr,
            out_ap,
            ..
        } => {
            let model = read_checkpoint(&model)?;
            let scenario = Scenario::from(mode);
            let queries = FeatureArchive::read(&query_data)?.to_dataset()?;
            let db = FeatureArchive::read(&db_data)?.to_dataset()?;
            let ev = eval::evaluate(&model, &queries, &db, scenario)?;
            write_text(&out_map, &report::map_csv(scenario, ev.per_query.len(), ev.map))?;
            write_text(&out_pr, &report::pr_csv(&ev.pr))?;
            if let Some(p) = out_ap {
                write_text(&p, &report::ap_csv(&ev.per_query))?;
            }
            println!("{} mAP={}", report::scenario_name(scenario), ev.map);
        }
        Command::Gradcheck {
            shape: (m, d),
            epsilon,
            seed,
            probe,
        } => {
            let features = covpool::random_features(&mut seeded(seed), m, d);
            let probe = match probe {
                Probe::SumOfSquares => ProbeLoss::SumOfSquares,
                Probe::RandomLinear => ProbeLoss::RandomLinear { seed },
            };
            let rep = covpool::grad_check(&features, epsilon, probe)?;
            println!(
                "max_rel_err={:e} at ({}, {})",
                rep.max_rel_err, rep.argmax.0, rep.argmax.1
            );
            if rep.max_rel_err.is_nan() || rep.max_rel_err > GRADCHECK_TOLERANCE {
                return Err(format!(
                    "gradient check failed: {:e} exceeds {GRADCHECK_TOLERANCE:e}",
                    rep.max_rel_err
                )
                .into());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
