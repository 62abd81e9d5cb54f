use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ice::campaign::{stage, Campaign, InferOverrides, Method};
use ice::config::CampaignConfig;
use ice::error::{IceError, Result};
use ice::refine::InferenceMode;

#[derive(Parser)]
#[command(name = "ice", version, about = "Iterative controlled extrapolation on synthetic landscapes")]
struct Cli {
    /// Campaign config (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the ground-truth landscape.
    GenLandscape,
    /// Sample the corpus, the training region and the supervised split.
    GenData,
    /// Fit the ridge scorer.
    TrainScorer,
    /// Fit the infill model and build the edit pairs.
    GenPairs,
    /// Fit the editor and the score-conditioned baseline.
    TrainEditor,
    /// Generate candidates from the campaign's start sequences.
    Infer(InferArgs),
    /// Compute reports and the summary from persisted artifacts.
    Evaluate,
    /// Success rates over the configured beam width, k and iteration grid.
    Sweep,
    /// Every stage followed by evaluate.
    RunAll,
    /// Print the default config.
    DefaultConfig,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Ice,
    Sampling,
    IterSampling,
    ScoreCond,
}

#[derive(Args)]
struct InferArgs {
    /// Only used with `--method ice`; both modes run when omitted.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<InferenceMode>,
    /// Every method runs when omitted.
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Candidates sampled per step in guided modes.
    #[arg(long)]
    k: Option<usize>,
    /// Beam width of scorer-free ICE.
    #[arg(long)]
    beam: Option<usize>,
    /// Refinement iterations.
    #[arg(long)]
    iters: Option<usize>,
    /// Sampling temperature; 0 is greedy.
    #[arg(long)]
    temperature: Option<f64>,
    /// Inference seed; derived from the config seed when omitted.
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_mode(s: &str) -> std::result::Result<InferenceMode, String> {
    s.parse().map_err(|e: IceError| e.to_string())
}

impl InferArgs {
    fn overrides(&self) -> Result<InferOverrides> {
        let methods = match (self.method, self.mode) {
            (None, None) => None,
            (Some(MethodArg::Ice), None) => Some(vec![Method::IceScorerGuided, Method::IceScorerFree]),
            (Some(MethodArg::Ice), Some(InferenceMode::ScorerGuided)) => Some(vec![Method::IceScorerGuided]),
            (Some(MethodArg::Ice), Some(InferenceMode::ScorerFree)) => Some(vec![Method::IceScorerFree]),
            (None, Some(_)) | (Some(_), Some(_)) => {
                return Err(IceError::Parse {
                    context: "--mode".into(),
                    reason: "only applies to --method ice".into(),
                });
            }
            (Some(MethodArg::Sampling), None) => Some(vec![Method::Sampling]),
            (Some(MethodArg::IterSampling), None) => Some(vec![Method::IterSampling]),
            (Some(MethodArg::ScoreCond), None) => Some(vec![Method::ScoreCond]),
        };
        Ok(InferOverrides {
            methods,
            k: self.k,
            beam_width: self.beam,
            iterations: self.iters,
            temperature: self.temperature,
            seed: self.seed,
        })
    }
}

impl Command {
    fn stage_name(&self) -> &'static str {
        match self {
            Command::GenLandscape => "gen-landscape",
            Command::GenData => "gen-data",
            Command::TrainScorer => "train-scorer",
            Command::GenPairs => "gen-pairs",
            Command::TrainEditor => "train-editor",
            Command::Infer(_) => "infer",
            Command::Evaluate => "evaluate",
            Command::Sweep => "sweep",
            Command::RunAll => "run-all",
            Command::DefaultConfig => "default-config",
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = stage(
        "config",
        match &cli.config {
            Some(p) => CampaignConfig::load(p),
            None => Ok(CampaignConfig::default()),
        },
    )?;
    if let Command::DefaultConfig = cli.command {
        print!("{}", config.to_toml()?);
        return Ok(());
    }
    let name = cli.command.stage_name();
    stage(name, run_stage(Campaign::new(config, cli.out)?, cli.command))
}

fn run_stage(c: Campaign, command: Command) -> Result<()> {
    match command {
        Command::GenLandscape => {
            let l = c.gen_landscape()?;
            println!("landscape checksum {}", l.checksum());
        }
        Command::GenData => {
            let l = c.load_landscape()?;
            let d = c.gen_data(&l)?;
            println!(
                "region [{}, {}], {} supervised examples",
                d.record.low,
                d.record.high,
                d.split.sup_train.len()
            );
        }
        Command::TrainScorer => {
            let d = c.load_data()?;
            c.train_scorer(&d)?;
        }
        Command::GenPairs => {
            let d = c.load_data()?;
            let s = c.load_scorer()?;
            let (_, set) = c.gen_pairs(&d, &s)?;
            println!("{} pairs, acceptance rate {:.4}", set.pairs.len(), set.acceptance_rate());
        }
        Command::TrainEditor => {
            let d = c.load_data()?;
            let (pairs, _) = c.load_pairs()?;
            c.train_editor(&pairs, &d.record)?;
        }
        Command::Infer(args) => {
            let o = args.overrides()?;
            let d = c.load_data()?;
            let runs = c.infer(
                &d,
                &c.load_scorer()?,
                &c.load_infill()?,
                &c.load_editor()?,
                &c.load_score_cond()?,
                &o,
            )?;
            for r in runs {
                println!("{}: {} trajectories", r.record.method.name(), r.trajectories.len());
            }
        }
        Command::Evaluate => print_summary(&c.evaluate()?),
        Command::Sweep => print!("{}", c.sweep()?),
        Command::RunAll => print_summary(&c.run_all()?.summary),
        Command::DefaultConfig => unreachable!(),
    }
    Ok(())
}

fn print_summary(s: &ice::campaign::Summary) {
    println!("config hash {}", s.config_hash);
    for m in &s.methods {
        let rates: Vec<String> = m.success_rates.iter().map(|r| format!("{r:.4}")).collect();
        println!("{:<18} {}", m.method.name(), rates.join(" "));
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.workers.max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
