use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use isrm_core::classifier::{
    finetune_projection, generate_synthetic, write_history_csv, FinetuneConfig, LossKind,
    ObservationMode, SyntheticConfig,
};
use isrm_core::eval::{compute_metrics, render_map, run_ablation, AblationSetting, MapMetrics, Palette, ABLATION_HEADER, DEFAULT_PALETTE};
use isrm_core::fusion::FusionRule;
use isrm_core::grid::read_map;
use isrm_core::simulator::{
    embed_samples, extract_dataset, generate_floorplan, read_samples, run_episode, write_episode_outputs,
    write_samples, DatasetConfig, EpisodeConfig, Floorplan, FloorplanConfig,
};

#[derive(Parser)]
#[command(name = "isrm", version, about = "Indoor semantic region mapping on synthetic floorplans")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Loss {
    Mscl,
    Infonce,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Spatial,
    Repeated,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fusion {
    Avg,
    Bayes,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(clap::Args, Clone)]
struct EnvArgs {
    /// Floorplan width in cells.
    #[arg(long, default_value_t = 160)]
    width: usize,
    /// Floorplan height in cells.
    #[arg(long, default_value_t = 160)]
    height: usize,
    #[arg(long, default_value_t = 6)]
    min_rooms: usize,
    #[arg(long, default_value_t = 4)]
    min_labels: usize,
}

impl EnvArgs {
    fn config(&self, seed: u64) -> FloorplanConfig {
        FloorplanConfig {
            width: self.width,
            height: self.height,
            min_rooms: self.min_rooms,
            min_distinct_labels: self.min_labels,
            seed,
            ..FloorplanConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a floorplan and write it as text.
    GenEnv {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract deduplicated egocentric samples from random walks.
    ExtractDataset {
        /// Floorplan files; generated from `--seed` when none are given.
        #[arg(long = "env")]
        envs: Vec<PathBuf>,
        /// Number of floorplans to generate when no `--env` is given.
        #[arg(long, default_value_t = 10)]
        num_envs: usize,
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        episodes: usize,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finetune the projection and print the per-epoch history as CSV.
    TrainClassifier {
        #[arg(long, value_enum, default_value = "mscl")]
        loss: Loss,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sample file from `extract-dataset`; synthetic features when absent.
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-2)]
        lr: f64,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long, default_value_t = 0.07)]
        temperature: f64,
        /// Where to write the learned projection.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one mapping episode and write its outputs.
    RunEpisode {
        /// Floorplan file; generated from `--seed` when absent.
        #[arg(long)]
        env: Option<PathBuf>,
        #[command(flatten)]
        env_args: EnvArgs,
        /// `key=value` file applied before the flags below.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long, value_enum)]
        fusion: Option<Fusion>,
        #[arg(long, value_enum)]
        noise: Option<Switch>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        confusion_diag: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a map file against a floorplan.
    Evaluate {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        env: PathBuf,
    },
    /// Render a map file as a binary PPM.
    Render {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the fusion × mode × noise ablation and print one CSV row per setting.
    Bench {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        num_envs: usize,
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long, default_value_t = 1500)]
        steps: usize,
        #[arg(long, default_value_t = 0.7)]
        confusion_diag: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e
                .chain()
                .find_map(|c| c.downcast_ref::<isrm_core::Error>())
                .map_or("io", |c| c.kind());
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error,{kind},{msg}");
            ExitCode::FAILURE
        }
    }
}

fn load_floorplan(path: &Path) -> anyhow::Result<Floorplan> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(Floorplan::read(BufReader::new(f))?)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn generated_floorplans(env: &EnvArgs, seed: u64, n: usize) -> anyhow::Result<Vec<Floorplan>> {
    (0..n as u64)
        .map(|i| Ok(generate_floorplan(&env.config(seed.wrapping_add(i)))?))
        .collect()
}

fn run(cmd: Command) -> anyhow::Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cmd {
        Command::GenEnv { seed, env, out: path } => {
            let fp = generate_floorplan(&env.config(seed))?;
            let mut f = create(&path)?;
            fp.write(&mut f)?;
            f.flush()?;
            eprintln!(
                "floorplan {}x{}: {} rooms, {} doors, {} labels, {} free cells",
                fp.width,
                fp.height,
                fp.rooms.len(),
                fp.doors.len(),
                fp.distinct_labels(),
                fp.free_count()
            );
        }
        Command::ExtractDataset {
            envs,
            num_envs,
            env,
            seed,
            episodes,
            steps,
            out: path,
        } => {
            let fps = if envs.is_empty() {
                generated_floorplans(&env, seed, num_envs)?
            } else {
                envs.iter().map(|p| load_floorplan(p)).collect::<anyhow::Result<_>>()?
            };
            let cfg = DatasetConfig {
                episodes_per_env: episodes,
                steps_per_episode: steps,
                seed,
                ..DatasetConfig::default()
            };
            let samples = extract_dataset(&fps, &cfg)?;
            let mut f = create(&path)?;
            write_samples(&samples, &mut f)?;
            f.flush()?;
            let train = samples.iter().filter(|s| s.split == isrm_core::simulator::Split::Train).count();
            writeln!(out, "samples,train,val")?;
            writeln!(out, "{},{},{}", samples.len(), train, samples.len() - train)?;
        }
        Command::TrainClassifier {
            loss,
            seed,
            samples,
            epochs,
            lr,
            batch,
            temperature,
            out: path,
        } => {
            let synth = SyntheticConfig {
                seed,
                ..SyntheticConfig::default()
            };
            let (prototypes, train, val) = match samples {
                Some(s) => {
                    let f = File::open(&s).with_context(|| format!("opening {}", s.display()))?;
                    let samples = read_samples(BufReader::new(f))?;
                    let (model, t, v) = embed_samples(&samples, &synth)?;
                    (model.prototypes, t, v)
                }
                None => {
                    let data = generate_synthetic(&synth)?;
                    (data.prototypes, data.train, data.val)
                }
            };
            let cfg = FinetuneConfig {
                loss: match loss {
                    Loss::Mscl => LossKind::Mscl,
                    Loss::Infonce => LossKind::InfoNce,
                },
                lr,
                epochs,
                batch_size: batch,
                temperature,
                seed,
            };
            let result = finetune_projection(&train, &val, &prototypes, &cfg)?;
            write_history_csv(&result.history, &mut out)?;
            if let Some(path) = path {
                let mut f = create(&path)?;
                result.projection.write(&mut f)?;
                f.flush()?;
            }
        }
        Command::RunEpisode {
            env,
            env_args,
            config,
            seed,
            mode,
            fusion,
            noise,
            steps,
            confusion_diag,
            out: dir,
        } => {
            let mut cfg = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    EpisodeConfig::parse(&text)?
                }
                None => EpisodeConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = mode {
                cfg.mode = match m {
                    Mode::Spatial => ObservationMode::Spatial,
                    Mode::Repeated => ObservationMode::Repeated,
                };
            }
            if let Some(f) = fusion {
                cfg.fusion = match f {
                    Fusion::Avg => FusionRule::MovingAverage,
                    Fusion::Bayes => FusionRule::Bayesian,
                };
            }
            if let Some(n) = noise {
                cfg.noise = matches!(n, Switch::On);
            }
            if let Some(s) = steps {
                cfg.max_steps = s;
            }
            if let Some(d) = confusion_diag {
                cfg.confusion_diag = d;
            }
            let fp = match env {
                Some(p) => load_floorplan(&p)?,
                None => generate_floorplan(&env_args.config(cfg.seed))?,
            };
            let ep = run_episode(&fp, &cfg)?;
            write_episode_outputs(&dir, &fp, &cfg, &ep)?;
            let metrics = std::fs::read_to_string(dir.join("metrics.csv"))?;
            out.write_all(metrics.as_bytes())?;
            if let Some(reason) = &ep.stats.aborted {
                eprintln!("episode aborted at step {}: {reason}", ep.stats.steps);
            }
            eprintln!(
                "{} steps, explored {:.3}, maskAcc {:.4}, complete {}",
                ep.stats.steps, ep.metrics.explored_fraction, ep.metrics.mask_acc, ep.stats.complete
            );
        }
        Command::Evaluate { map, env } => {
            let fp = load_floorplan(&env)?;
            let f = File::open(&map).with_context(|| format!("opening {}", map.display()))?;
            let m = read_map(BufReader::new(f))?;
            let metrics = compute_metrics(&m, &fp)?;
            let labels: Vec<&str> = fp.labels.iter().collect();
            writeln!(out, "{}", MapMetrics::csv_header(&labels))?;
            writeln!(out, "{}", metrics.csv_row())?;
        }
        Command::Render { map, out: path } => {
            let f = File::open(&map).with_context(|| format!("opening {}", map.display()))?;
            let m = read_map(BufReader::new(f))?;
            if m.num_labels() > DEFAULT_PALETTE.len() {
                bail!("no default palette for {} labels", m.num_labels());
            }
            let palette = Palette::new(DEFAULT_PALETTE[..m.num_labels()].to_vec())?;
            let mut f = create(&path)?;
            render_map(&m, &palette, &mut f)?;
            f.flush()?;
        }
        Command::Bench {
            seed,
            num_envs,
            env,
            steps,
            confusion_diag,
        } => {
            let fps = generated_floorplans(&env, seed, num_envs)?;
            let base = EpisodeConfig {
                max_steps: steps,
                confusion_diag,
                seed,
                ..EpisodeConfig::default()
            };
            let rows = run_ablation(&fps, &base, &AblationSetting::full_grid())?;
            writeln!(out, "{ABLATION_HEADER}")?;
            for r in rows {
                writeln!(out, "{}", r.csv_row())?;
            }
        }
    }
    out.flush()?;
    Ok(())
}
