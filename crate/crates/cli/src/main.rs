use std::io::Write;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use viewplan_cli::commands::{self, Planner};
use viewplan_cli::teleop::TeleopServer;
use viewplan_cli::{CliError, ExperimentConfig};
use viewplan_core::episode::EpisodeParams;
use viewplan_core::expert::{sample_occluded_starts, ExpertConfig};
use viewplan_core::sim::{CameraIntrinsics, Difficulty, Scene};

#[derive(Parser)]
#[command(
    name = "viewplan",
    version,
    about = "Imitation-learned viewpoint planning for occluded targets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DifficultyArg {
    Easy,
    Medium,
    Hard,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExpertArg {
    Scripted,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlannerArg {
    Act,
    Baseline,
}

#[derive(Subcommand)]
enum Command {
    /// Generate certified scene files.
    GenScenes {
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum, default_value = "medium")]
        difficulty: DifficultyArg,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Experiment config; only its camera block is used.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Record scripted demonstrations plus stats.json.
    Collect {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long, value_enum, default_value = "scripted")]
        expert: ExpertArg,
        #[arg(long)]
        starts_per_scene: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the policy; one JSON line of metrics per epoch.
    Train {
        #[arg(long)]
        demos: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint directory to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run a planner over every (scene, start) pair and write a report.
    Eval {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        scenes: PathBuf,
        /// Starts per scene.
        #[arg(long, default_value_t = 1)]
        starts: usize,
        #[arg(long, default_value_t = 50)]
        max_steps: usize,
        #[arg(long, value_enum)]
        planner: PlannerArg,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Serve the teleoperation websocket for one scene.
    TeleopServe {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long)]
        out: PathBuf,
        /// Seed of the occluded start pose.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn optional_config(path: Option<&Path>) -> Result<Option<ExperimentConfig>, CliError> {
    path.map(ExperimentConfig::load).transpose()
}

fn camera(cfg: &Option<ExperimentConfig>) -> CameraIntrinsics {
    cfg.as_ref().map(|c| c.camera).unwrap_or_default()
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenScenes {
            n,
            difficulty,
            seed,
            out,
            config,
        } => {
            let cfg = optional_config(config.as_deref())?;
            let k = camera(&cfg);
            let difficulty = match difficulty {
                DifficultyArg::Easy => Difficulty::Easy,
                DifficultyArg::Medium => Difficulty::Medium,
                DifficultyArg::Hard => Difficulty::Hard,
            };
            let scenes = commands::generate_scenes(n, difficulty, seed, &k)?;
            for s in commands::write_scenes(&scenes, &out, &k)? {
                println!(
                    "{}  {}/{} candidates succeed  {}",
                    s.scene_id,
                    s.n_success,
                    s.n_candidates,
                    s.path.display()
                );
            }
        }
        Command::Collect {
            scenes,
            expert: ExpertArg::Scripted,
            starts_per_scene,
            out,
            config,
        } => {
            let cfg = optional_config(config.as_deref())?;
            let k = camera(&cfg);
            let expert = cfg
                .as_ref()
                .map(|c| c.expert)
                .unwrap_or_else(ExpertConfig::default);
            let scenes = commands::load_scenes(&scenes)?;
            let stats = commands::collect(&scenes, starts_per_scene, &expert, &k, &out, |d, p| {
                println!(
                    "{}  {} steps  save gate passed  {}",
                    d.demo_id,
                    d.steps.len(),
                    p.display()
                );
            })?;
            println!(
                "{} demos, {} steps, stats written to {}",
                stats.n_demos,
                stats.n_steps,
                out.display()
            );
        }
        Command::Train {
            demos,
            config,
            out,
            resume,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let (demos, stats) = commands::load_training_set(&demos)?;
            let stdout = std::io::stdout();
            let ckpt = commands::train_to(
                &demos,
                &stats,
                cfg.model.clone(),
                cfg.training.to_train_config(),
                resume.as_deref(),
                &out,
                stdout.lock(),
            )?;
            log::info!(
                "trained to epoch {} (step {}) in {}",
                ckpt.epoch,
                ckpt.step(),
                out.display()
            );
        }
        Command::Eval {
            ckpt,
            scenes,
            starts,
            max_steps,
            planner,
            report,
            config,
        } => {
            let cfg = optional_config(config.as_deref())?;
            let k = camera(&cfg);
            let tau_v = cfg
                .as_ref()
                .map(|c| c.evaluation.tau_v)
                .unwrap_or(EpisodeParams::default().tau_v);
            let params = EpisodeParams {
                max_steps,
                tau_v,
                ..Default::default()
            };
            let scenes = commands::load_scenes(&scenes)?;
            let pairs = commands::eval_pairs(&scenes, starts, &k)?;
            let planner = match planner {
                PlannerArg::Act => Planner::Act,
                PlannerArg::Baseline => Planner::Baseline,
            };
            let r = commands::run_eval(planner, ckpt.as_deref(), &pairs, params, &k)?;
            let text = serde_json::to_string_pretty(&r)?;
            std::fs::write(&report, text)
                .with_context(|| format!("writing {}", report.display()))?;
            let a = &r.aggregate;
            println!(
                "{}: {}/{} succeeded ({:.1}%), mean latency {:.2} ms",
                r.planner,
                a.n_success,
                a.n_episodes,
                a.success_rate,
                a.mean_latency_s.unwrap_or(0.0) * 1e3
            );
        }
        Command::TeleopServe {
            scene,
            port,
            out,
            seed,
            config,
        } => {
            let cfg = optional_config(config.as_deref())?;
            let k = camera(&cfg);
            let text = std::fs::read_to_string(&scene).map_err(|e| CliError::input(&scene, e))?;
            let scene = Scene::from_json(&text).map_err(|e| CliError::input(&scene, e))?;
            let start = sample_occluded_starts(&scene, 1, seed, scene.shell, &k)?[0];
            let mut server = TeleopServer::bind(
                SocketAddr::from((Ipv4Addr::LOCALHOST, port)),
                scene,
                k,
                start,
                &out,
            )?;
            println!("teleop listening on ws://{}", server.local_addr()?);
            std::io::stdout().flush().ok();
            server.serve_forever()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let user = e
                .downcast_ref::<CliError>()
                .is_some_and(CliError::is_user_error);
            ExitCode::from(if user { 1 } else { 2 })
        }
    }
}
