//! `sarl`: simulate games, fit human models, solve and evaluate agents, and
//! host the live study service.

use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use sarl_core::agents::baseline;
use sarl_core::equilibrium::verify_equilibrium;
use sarl_core::harness::{
    classify_strategy, load_dataset, metrics_csv, run_experiment, save_dataset, MetricsReport, Population, StrategyLabel,
};
use sarl_core::planner::{build_mdp, solve_agent};
use sarl_core::sarl::{compute_beta, score_pairs};
use sarl_core::{AgentPolicy, BetaReport, Episode, GridConfig, HumanModel, PlannedAgent, PlannerConfig, Representation};
use sarl_service::{AgentRegistry, AppState, QuizQuestion, ServiceConfig};

#[derive(Debug)]
enum CliError {
    /// Bad flags or names: exit code 2.
    Usage(String),
    /// Failure inside the pipeline: exit code 1.
    Domain(String),
}

impl From<sarl_core::Error> for CliError {
    fn from(e: sarl_core::Error) -> Self {
        CliError::Domain(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Domain(format!("{}: {e}", path.display()))
}

#[derive(Parser, Debug)]
#[command(name = "sarl", version, about = "Two-lane driving game: simulation, planning and live sessions")]
struct Cli {
    /// JSON file with `grid` and `planner` sections; explicit flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Board length.
    #[arg(long, global = true)]
    cols: Option<u8>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Play agents against a synthetic human population and store the games.
    Simulate(SimulateArgs),
    /// Fit a human model from a dataset.
    Fit(FitArgs),
    /// Solve the planning problem and write a policy file.
    Solve(SolveArgs),
    /// Report the correlation of final scores and the derived beta.
    Beta(BetaArgs),
    /// Expected blended return of an agent against a human model.
    Evaluate(EvaluateArgs),
    /// Label each human's play against the two equilibrium strategies.
    Classify(ClassifyArgs),
    /// Check that two strategies are mutual best responses.
    VerifyEquilibrium(VerifyArgs),
    /// Run the HTTP service for live games.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Baseline name or policy file; repeat for several agents.
    #[arg(long, required = true)]
    agent: Vec<String>,
    /// Comma-separated population, e.g. `noisy_careful:0.2,uniform`.
    #[arg(long, alias = "humans")]
    human: String,
    #[arg(short = 'n', long = "episodes", default_value_t = 1000)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSONL dataset output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Metrics output format on stdout.
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "velocity", value_parser = parse_repr)]
    representation: Representation,
    /// Model JSON output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PlannerArgs {
    #[arg(long, value_parser = parse_repr)]
    representation: Option<Representation>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_sweeps: Option<usize>,
}

#[derive(Args, Debug)]
struct ModelSource {
    /// Fitted model JSON.
    #[arg(long, conflicts_with = "dataset")]
    model: Option<PathBuf>,
    /// Dataset to fit the model from.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    source: ModelSource,
    #[command(flatten)]
    planner: PlannerArgs,
    /// A number in [0, 1] or `auto` to derive it from the dataset.
    #[arg(long, default_value = "1")]
    beta: String,
    #[arg(long, default_value = "sarl")]
    name: String,
    /// Policy file output.
    #[arg(long)]
    out: PathBuf,
    /// Optional value table output.
    #[arg(long)]
    values: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BetaArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Only games against this opponent.
    #[arg(long)]
    opponent: Option<String>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Baseline name or policy file.
    #[arg(long)]
    agent: String,
    #[command(flatten)]
    source: ModelSource,
    #[command(flatten)]
    planner: PlannerArgs,
    #[arg(long, default_value = "1")]
    beta: String,
    #[arg(long)]
    values: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Per-episode labels as JSONL.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Strategy in the agent seat.
    #[arg(long)]
    a: String,
    /// Strategy in the human seat.
    #[arg(long)]
    b: String,
    #[arg(long, default_value_t = 50)]
    horizon: u32,
    #[arg(long, default_value_t = 0.999)]
    gamma: f64,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// JSONL file finished games are appended to.
    #[arg(long)]
    dataset: PathBuf,
    /// Directory with the browser client.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
    /// Extra agents from policy files.
    #[arg(long)]
    policy: Vec<PathBuf>,
    /// Idle seconds before an open game is stored as abandoned.
    #[arg(long, default_value_t = 600)]
    timeout: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON array of quiz questions gating new sessions.
    #[arg(long)]
    quiz: Option<PathBuf>,
}

fn parse_repr(s: &str) -> Result<Representation, String> {
    s.parse().map_err(|e: sarl_core::Error| e.to_string())
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    grid: Option<GridConfig>,
    #[serde(default)]
    planner: PlannerOverrides,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlannerOverrides {
    gamma: Option<f64>,
    representation: Option<Representation>,
    epsilon: Option<f64>,
    max_sweeps: Option<usize>,
}

struct Context {
    grid: GridConfig,
    planner: PlannerConfig,
}

impl Context {
    fn load(cli: &Cli) -> CliResult<Context> {
        let file = match &cli.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
                serde_json::from_str::<ConfigFile>(&text)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
            }
            None => ConfigFile::default(),
        };
        let mut grid = file.grid.unwrap_or_default();
        if let Some(cols) = cli.cols {
            grid.n_cols = cols;
        }
        grid.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let d = PlannerConfig::default();
        let o = file.planner;
        let planner = PlannerConfig {
            gamma: o.gamma.unwrap_or(d.gamma),
            representation: o.representation.unwrap_or(d.representation),
            epsilon: o.epsilon.unwrap_or(d.epsilon),
            max_sweeps: o.max_sweeps.unwrap_or(d.max_sweeps),
            ..d
        };
        Ok(Context { grid, planner })
    }

    /// Beta is left at its default; callers set it once it is known.
    fn planner(&self, args: &PlannerArgs) -> CliResult<PlannerConfig> {
        let cfg = PlannerConfig {
            gamma: args.gamma.unwrap_or(self.planner.gamma),
            beta: self.planner.beta,
            representation: args.representation.unwrap_or(self.planner.representation),
            epsilon: args.epsilon.unwrap_or(self.planner.epsilon),
            max_sweeps: args.max_sweeps.unwrap_or(self.planner.max_sweeps),
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

enum BetaArg {
    Fixed(f64),
    Auto,
}

fn parse_beta(s: &str) -> CliResult<BetaArg> {
    if s == "auto" {
        return Ok(BetaArg::Auto);
    }
    match s.parse::<f64>() {
        Ok(b) if (0.0..=1.0).contains(&b) => Ok(BetaArg::Fixed(b)),
        _ => Err(CliError::Usage(format!("--beta expects a number in [0, 1] or auto, got {s:?}"))),
    }
}

/// A baseline by name, otherwise a policy file.
fn load_agent(spec: &str) -> CliResult<Box<dyn AgentPolicy>> {
    if let Some(agent) = baseline(spec) {
        return Ok(agent);
    }
    let path = Path::new(spec);
    if path.is_file() {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        return Ok(Box::new(PlannedAgent::from_json(&text)?));
    }
    Err(CliError::Usage(format!(
        "unknown agent {spec:?}: expected careful, aggressive, semi_aggressive, random or a policy file"
    )))
}

fn load(path: &Path) -> CliResult<Vec<Episode>> {
    Ok(load_dataset(path)?)
}

fn write_output(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| io_err(p, e)),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::Domain(e.to_string()))
}

/// The model plus, when it was fitted here, the episodes it came from.
fn resolve_model(
    source: &ModelSource,
    repr: Representation,
    grid: &GridConfig,
) -> CliResult<(HumanModel, Option<Vec<Episode>>)> {
    match (&source.model, &source.dataset) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            Ok((HumanModel::from_json(&text)?, None))
        }
        (None, Some(path)) => {
            let episodes = load(path)?;
            Ok((HumanModel::fit(&episodes, repr, grid)?, Some(episodes)))
        }
        (None, None) => Err(CliError::Usage("one of --model or --dataset is required".into())),
    }
}

fn resolve_beta(arg: BetaArg, episodes: Option<&[Episode]>) -> CliResult<(f64, Option<BetaReport>)> {
    match arg {
        BetaArg::Fixed(b) => Ok((b, None)),
        BetaArg::Auto => {
            let episodes =
                episodes.ok_or_else(|| CliError::Usage("--beta auto needs --dataset".into()))?;
            let report = compute_beta(&score_pairs(episodes, None))?;
            Ok((report.beta, Some(report)))
        }
    }
}

fn cmd_simulate(ctx: &Context, args: &SimulateArgs) -> CliResult<()> {
    let agents = args.agent.iter().map(|a| load_agent(a)).collect::<CliResult<Vec<_>>>()?;
    let humans = Population::parse(&args.human).map_err(|e| CliError::Usage(e.to_string()))?;
    if args.episodes == 0 {
        return Err(CliError::Usage("--episodes must be at least 1".into()));
    }
    let refs: Vec<&dyn AgentPolicy> = agents.iter().map(|a| a.as_ref()).collect();
    let exp = run_experiment(&refs, &humans, args.episodes, &ctx.grid, args.seed)?;
    if let Some(out) = &args.out {
        save_dataset(out, &exp.episodes)?;
    }
    let text = match args.format {
        Format::Table => metrics_table(&exp.reports),
        Format::Csv => metrics_csv(&exp.reports),
        Format::Json => to_json(&exp.reports)?,
    };
    print!("{text}");
    if !text.ends_with('\n') {
        println!();
    }
    Ok(())
}

fn metrics_table(reports: &[MetricsReport]) -> String {
    let mut out = format!(
        "{:<20} {:>8} {:>16} {:>16} {:>16} {:>10} {:>9}\n",
        "agent", "games", "agent", "human", "welfare", "collide", "truncated"
    );
    for r in reports {
        out.push_str(&format!(
            "{:<20} {:>8} {:>8.2} ±{:>6.2} {:>8.2} ±{:>6.2} {:>8.2} ±{:>6.2} {:>10.3} {:>9}\n",
            r.agent,
            r.n_episodes,
            r.agent_mean,
            r.agent_ci95,
            r.human_mean,
            r.human_ci95,
            r.welfare_mean,
            r.welfare_ci95,
            r.collision_rate,
            r.truncated
        ));
    }
    out
}

fn cmd_fit(ctx: &Context, args: &FitArgs) -> CliResult<()> {
    let episodes = load(&args.dataset)?;
    let model = HumanModel::fit(&episodes, args.representation, &ctx.grid)?;
    eprintln!(
        "fitted {} model on {} episodes ({} states seen)",
        args.representation,
        episodes.len(),
        model.n_states_seen()
    );
    write_output(args.out.as_deref(), &model.to_json()?)
}

#[derive(Serialize)]
struct SolveSummary {
    name: String,
    representation: Representation,
    beta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta_report: Option<BetaReport>,
    gamma: f64,
    states: usize,
    sweeps: usize,
    residual: f64,
    initial_value: f64,
}

fn cmd_solve(ctx: &Context, args: &SolveArgs) -> CliResult<()> {
    let beta_arg = parse_beta(&args.beta)?;
    let cfg = ctx.planner(&args.planner)?;
    let (model, episodes) = resolve_model(&args.source, cfg.representation, &ctx.grid)?;
    let (beta, beta_report) = resolve_beta(beta_arg, episodes.as_deref())?;
    let cfg = cfg.with_beta(beta);
    let (agent, solution) = solve_agent(&args.name, &model, &ctx.grid, &cfg)?;
    fs::write(&args.out, agent.to_json()?).map_err(|e| io_err(&args.out, e))?;
    if let Some(path) = &args.values {
        fs::write(path, solution.values.to_json()?).map_err(|e| io_err(path, e))?;
    }
    let summary = SolveSummary {
        name: args.name.clone(),
        representation: cfg.representation,
        beta,
        beta_report,
        gamma: cfg.gamma,
        states: solution.values.values.len(),
        sweeps: solution.values.sweeps,
        residual: solution.values.residual,
        initial_value: solution.values.initial,
    };
    println!("{}", to_json(&summary)?);
    Ok(())
}

fn cmd_beta(args: &BetaArgs) -> CliResult<()> {
    let episodes = load(&args.dataset)?;
    let report = compute_beta(&score_pairs(&episodes, args.opponent.as_deref()))?;
    println!("{}", to_json(&report)?);
    Ok(())
}

#[derive(Serialize)]
struct EvaluateSummary {
    agent: String,
    representation: Representation,
    beta: f64,
    states: usize,
    sweeps: usize,
    residual: f64,
    initial_value: f64,
}

fn cmd_evaluate(ctx: &Context, args: &EvaluateArgs) -> CliResult<()> {
    let agent = load_agent(&args.agent)?;
    let beta_arg = parse_beta(&args.beta)?;
    let cfg = ctx.planner(&args.planner)?;
    let (model, episodes) = resolve_model(&args.source, cfg.representation, &ctx.grid)?;
    let (beta, _) = resolve_beta(beta_arg, episodes.as_deref())?;
    let cfg = cfg.with_beta(beta);
    let mdp = build_mdp(&model, &ctx.grid, &cfg)?;
    let values = mdp.evaluate(agent.as_ref())?;
    if let Some(path) = &args.values {
        fs::write(path, values.to_json()?).map_err(|e| io_err(path, e))?;
    }
    let summary = EvaluateSummary {
        agent: agent.name().to_string(),
        representation: cfg.representation,
        beta,
        states: mdp.len(),
        sweeps: values.sweeps,
        residual: values.residual,
        initial_value: values.initial,
    };
    println!("{}", to_json(&summary)?);
    Ok(())
}

#[derive(Serialize, Default)]
struct ClassifySummary {
    episodes: usize,
    careful_consistent: usize,
    aggressive_consistent: usize,
    not_in_equilibrium: usize,
}

fn cmd_classify(args: &ClassifyArgs) -> CliResult<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        id: &'a str,
        opponent: &'a str,
        #[serde(flatten)]
        class: sarl_core::harness::StrategyClassification,
    }

    let episodes = load(&args.dataset)?;
    let mut summary = ClassifySummary {
        episodes: episodes.len(),
        ..Default::default()
    };
    let mut lines = String::new();
    for ep in &episodes {
        let class = classify_strategy(ep)?;
        match class.label {
            StrategyLabel::CarefulConsistent => summary.careful_consistent += 1,
            StrategyLabel::AggressiveConsistent => summary.aggressive_consistent += 1,
            StrategyLabel::NotInEquilibrium => summary.not_in_equilibrium += 1,
        }
        let row = Row {
            id: &ep.id,
            opponent: &ep.opponent_agent_name,
            class,
        };
        lines.push_str(&serde_json::to_string(&row).map_err(|e| CliError::Domain(e.to_string()))?);
        lines.push('\n');
    }
    if let Some(path) = &args.out {
        fs::write(path, lines).map_err(|e| io_err(path, e))?;
    }
    println!("{}", to_json(&summary)?);
    Ok(())
}

fn cmd_verify(ctx: &Context, args: &VerifyArgs) -> CliResult<()> {
    let a = baseline(&args.a).ok_or_else(|| CliError::Usage(format!("unknown strategy {:?}", args.a)))?;
    let b = baseline(&args.b).ok_or_else(|| CliError::Usage(format!("unknown strategy {:?}", args.b)))?;
    let report = verify_equilibrium(a.as_ref(), b.as_ref(), &ctx.grid, args.horizon, args.gamma)?;
    if args.json {
        println!("{}", to_json(&report)?);
    } else {
        println!("verified: {}", report.verified);
        println!("gain: {:.6}", report.gain);
        println!("initial_gain: {:.6}", report.initial_gain);
        println!("states_checked: {}", report.states_checked);
        if let (false, Some(state), Some(seat)) = (report.verified, report.worst_state, report.worst_seat) {
            println!("worst: {seat:?} at {state:?}");
        }
    }
    Ok(())
}

fn cmd_serve(ctx: &Context, args: &ServeArgs) -> CliResult<()> {
    let mut registry = AgentRegistry::with_baselines();
    for path in &args.policy {
        let name = registry.load_policy(path)?;
        eprintln!("loaded agent {name} from {}", path.display());
    }
    let mut cfg = ServiceConfig::new(&args.dataset);
    cfg.grid = ctx.grid;
    cfg.idle_timeout = Duration::from_secs(args.timeout);
    cfg.static_dir = args.static_dir.clone();
    cfg.seed = args.seed;
    if let Some(path) = &args.quiz {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        cfg.quiz = serde_json::from_str::<Vec<QuizQuestion>>(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    }
    let app = AppState::new(cfg, registry);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Domain(e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(args.addr)
            .await
            .map_err(|e| CliError::Domain(format!("bind {}: {e}", args.addr)))?;
        let local = listener.local_addr().map_err(|e| CliError::Domain(e.to_string()))?;
        println!("listening on http://{local}");
        let _ = std::io::stdout().flush();
        sarl_service::serve_on(listener, app)
            .await
            .map_err(|e| CliError::Domain(e.to_string()))
    })
}

fn run(cli: &Cli) -> CliResult<()> {
    let ctx = Context::load(cli)?;
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(&ctx, a),
        Command::Fit(a) => cmd_fit(&ctx, a),
        Command::Solve(a) => cmd_solve(&ctx, a),
        Command::Beta(a) => cmd_beta(a),
        Command::Evaluate(a) => cmd_evaluate(&ctx, a),
        Command::Classify(a) => cmd_classify(a),
        Command::VerifyEquilibrium(a) => cmd_verify(&ctx, a),
        Command::Serve(a) => cmd_serve(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
