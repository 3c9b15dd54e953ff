//! Single entry point wiring every subcommand.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.
//! Structured logs go to stderr; data goes to the requested files or stdout.
//! Config precedence is flags > config file > defaults.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use prefopt_core::data::{self, PreferencePair, Strategy};
use prefopt_core::evaluate::{
    agreement, compare_strategies, StrategyConfig, StrategyRow, StrategyTable,
};
use prefopt_core::judge::{
    CachedJudge, HttpJudge, HttpJudgeConfig, Judge, LatentRewardTable, Scorer, ScorerConfig,
    SimulatedJudge,
};
use prefopt_core::losses::{evaluate_loss, read_logprob_batch, LossConfig, Method};
use prefopt_core::ranking::{build_pairs, tournament_stats, BuildConfig, LoserRule, StopRule};
use prefopt_core::trainer::{
    failure_mode_instance, generate_world, sweep, train, LrSchedule, Optimizer, SweepPoint,
    TrainConfig,
};

const API_KEY_ENV: &str = "PREFOPT_API_KEY";

#[derive(Parser)]
#[command(
    name = "prefopt",
    version,
    about = "Preference-pair construction and preference-optimization toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build preference pairs from prompts and candidate completions
    GeneratePairs(GeneratePairsArgs),
    /// Per-iteration verdict histogram over ranking traces
    RankStats(RankStatsArgs),
    /// Evaluate a loss config on a batch of log-probs
    LossEval(LossEvalArgs),
    /// Train the toy softmax policy and emit the training log
    TrainToy(TrainToyArgs),
    /// Train one toy policy per grid point and emit the budget/winrate CSV
    Sweep(SweepArgs),
    /// Judge-agreement percentages over preference pairs
    EvaluateAgreement(EvaluateAgreementArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum JudgeKind {
    Simulated,
    Http,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    Ipr,
    Scoring,
    Copeland,
}

impl From<StrategyArg> for Strategy {
    fn from(value: StrategyArg) -> Self {
        match value {
            StrategyArg::Ipr => Strategy::Ipr,
            StrategyArg::Scoring => Strategy::Scoring,
            StrategyArg::Copeland => Strategy::Copeland,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StopArg {
    Full,
    FirstNonTie,
}

impl From<StopArg> for StopRule {
    fn from(value: StopArg) -> Self {
        match value {
            StopArg::Full => StopRule::Full,
            StopArg::FirstNonTie => StopRule::FirstNonTie,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LoserArg {
    InvertedIpr,
    ScoringArgmin,
}

impl From<LoserArg> for LoserRule {
    fn from(value: LoserArg) -> Self {
        match value {
            LoserArg::InvertedIpr => LoserRule::InvertedIpr,
            LoserArg::ScoringArgmin => LoserRule::ScoringArgmin,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Dpo,
    Ipo,
    Simpo,
    Cpo,
    Dpop,
    DpoBcr,
    IpoBcr,
    SimpoBcr,
}

impl From<MethodArg> for Method {
    fn from(value: MethodArg) -> Self {
        match value {
            MethodArg::Dpo => Method::Dpo,
            MethodArg::Ipo => Method::Ipo,
            MethodArg::Simpo => Method::Simpo,
            MethodArg::Cpo => Method::Cpo,
            MethodArg::Dpop => Method::Dpop,
            MethodArg::DpoBcr => Method::DpoBcr,
            MethodArg::IpoBcr => Method::IpoBcr,
            MethodArg::SimpoBcr => Method::SimpoBcr,
        }
    }
}

/// Flags shared by every subcommand that can talk to an HTTP judge.
#[derive(Args)]
struct HttpArgs {
    /// Chat-completions endpoint URL
    #[arg(long, default_value = "http://127.0.0.1:8000/v1/chat/completions")]
    endpoint: String,
    /// Model name sent in the request body
    #[arg(long, default_value = "judge")]
    model: String,
    /// Per-request timeout in seconds
    #[arg(long, default_value_t = 60)]
    timeout_secs: u64,
    /// Retries after the first failed attempt
    #[arg(long, default_value_t = 2)]
    retries: u32,
    /// Maximum concurrent judge requests
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
    /// Have the HTTP judge compare both orderings per duel; disagreement
    /// becomes a tie
    #[arg(long)]
    judge_symmetrize: bool,
    /// Treat unparseable verdicts as ties instead of failing
    #[arg(long)]
    parse_error_as_tie: bool,
    /// Verdict cache file (JSONL); omit to disable caching
    #[arg(long)]
    cache: Option<PathBuf>,
}

impl HttpArgs {
    fn config(&self) -> HttpJudgeConfig {
        HttpJudgeConfig {
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            timeout: Duration::from_secs(self.timeout_secs),
            max_retries: self.retries,
            max_in_flight: self.max_in_flight,
            symmetrize: self.judge_symmetrize,
            parse_error_as_tie: self.parse_error_as_tie,
            ..HttpJudgeConfig::default()
        }
    }

    fn build(&self) -> Result<Box<dyn Judge>> {
        let judge = HttpJudge::new(self.config())?;
        match &self.cache {
            Some(path) => Ok(Box::new(CachedJudge::open(judge, path)?)),
            None => Ok(Box::new(judge)),
        }
    }
}

#[derive(Args)]
struct GeneratePairsArgs {
    /// Prompts JSONL: {"id", "prompt"}
    #[arg(long)]
    prompts: PathBuf,
    /// Candidate sets JSONL: {"prompt_id", "candidates"}
    #[arg(long)]
    candidates: PathBuf,
    /// Latent rewards JSONL: {"prompt_id", "rewards"} (simulated judge / scorer)
    #[arg(long)]
    rewards: Option<PathBuf>,
    /// Tie band ε for the simulated judge
    #[arg(long, default_value_t = 0.0)]
    tie_band: f64,
    /// Additive score noise for the scoring strategy
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long, value_enum, default_value_t = StrategyArg::Ipr)]
    strategy: StrategyArg,
    #[arg(long, value_enum, default_value_t = StopArg::Full)]
    stop: StopArg,
    #[arg(long, value_enum, default_value_t = JudgeKind::Simulated)]
    judge: JudgeKind,
    #[arg(long, value_enum, default_value_t = LoserArg::InvertedIpr)]
    loser: LoserArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Abort on the first per-set judge failure
    #[arg(long)]
    fail_fast: bool,
    #[arg(long)]
    out_pairs: PathBuf,
    #[arg(long)]
    out_traces: Option<PathBuf>,
    #[command(flatten)]
    http: HttpArgs,
}

#[derive(Args)]
struct RankStatsArgs {
    /// Ranking traces JSONL as written by generate-pairs
    #[arg(long)]
    traces: PathBuf,
    /// Output CSV path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LossEvalArgs {
    /// LogProbBatch rows, one JSON object per line
    #[arg(long)]
    batch: PathBuf,
    /// Loss config JSON file; flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Include per-example gradients in the output
    #[arg(long)]
    gradients: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InstanceArg {
    /// The documented likelihood-reduction instance
    FailureMode,
    /// Random world with IPR-built pairs
    Random,
}

#[derive(Args)]
struct TrainToyArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Dpo)]
    method: MethodArg,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    optimizer: OptimizerArg,
    /// Fraction of steps spent in linear warmup before cosine decay
    #[arg(long)]
    cosine_warmup: Option<f64>,
    #[arg(long, value_enum, default_value_t = InstanceArg::FailureMode)]
    instance: InstanceArg,
    #[arg(long, default_value_t = 8)]
    num_prompts: usize,
    /// Vocabulary size for the random instance (failure-mode fixes 3)
    #[arg(long, default_value_t = 4)]
    vocab_size: usize,
    /// Training-log CSV path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep spec JSON: {"world": .., "base": .., "points": [..]}
    #[arg(long)]
    grid: PathBuf,
    /// Output CSV path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateAgreementArgs {
    /// Pre-built pairs JSONL; omit to build per strategy via --strategies
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Strategies to build and evaluate (requires --rewards)
    #[arg(long, value_enum, value_delimiter = ',')]
    strategies: Vec<StrategyArg>,
    /// Candidate sets JSONL (text resolution and pair construction)
    #[arg(long)]
    candidates: Option<PathBuf>,
    /// Prompts JSONL (required with --strategies)
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// Latent rewards JSONL for the simulated judge / scorer
    #[arg(long)]
    rewards: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    tie_band: f64,
    /// Score noise used by the scoring strategy when building pairs
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long, value_enum, default_value_t = JudgeKind::Simulated)]
    judge: JudgeKind,
    /// Judge both orderings during evaluation
    #[arg(long)]
    symmetrize: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    http: HttpArgs,
}

fn write_output(path: Option<&PathBuf>, content: &str) -> Result<()> {
    match path {
        Some(path) => {
            std::fs::write(path, content).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            std::io::stdout()
                .write_all(content.as_bytes())
                .context("writing stdout")?;
            Ok(())
        }
    }
}

fn load_rewards(path: Option<&PathBuf>, tie_band: f64) -> Result<Arc<LatentRewardTable>> {
    let path = path.context("--rewards is required for the simulated judge and scorer")?;
    Ok(Arc::new(LatentRewardTable::read_jsonl(path, tie_band)?))
}

fn run_generate_pairs(args: &GeneratePairsArgs) -> Result<()> {
    let prompts = data::read_prompts(&args.prompts)?.collect::<prefopt_core::Result<Vec<_>>>()?;
    let sets =
        data::read_candidates(&args.candidates)?.collect::<prefopt_core::Result<Vec<_>>>()?;

    let config = BuildConfig {
        strategy: args.strategy.into(),
        stop: args.stop.into(),
        loser: args.loser.into(),
        fail_fast: args.fail_fast,
        seed: args.seed,
    };

    let strategy: Strategy = args.strategy.into();
    let needs_scorer = strategy == Strategy::Scoring
        || (strategy == Strategy::Ipr && args.loser == LoserArg::ScoringArgmin);
    let needs_judge = strategy != Strategy::Scoring;

    let mut scorer_holder: Option<Scorer> = None;
    let mut judge_holder: Option<Box<dyn Judge>> = None;
    if needs_scorer {
        let table = load_rewards(args.rewards.as_ref(), args.tie_band)?;
        scorer_holder = Some(Scorer::new(
            table,
            ScorerConfig {
                noise_sigma: args.noise_sigma,
            },
        )?);
    }
    if needs_judge {
        judge_holder = Some(match args.judge {
            JudgeKind::Simulated => {
                let table = load_rewards(args.rewards.as_ref(), args.tie_band)?;
                Box::new(SimulatedJudge::with_sets(table, &sets))
            }
            JudgeKind::Http => args.http.build()?,
        });
    }

    let report = build_pairs(
        &prompts,
        &sets,
        judge_holder.as_deref(),
        scorer_holder.as_ref(),
        &config,
    )?;

    data::write_pairs(&report.pairs, &args.out_pairs)?;
    if let Some(out_traces) = &args.out_traces {
        data::write_traces(&report.traces, out_traces)?;
    }
    log::info!(
        "built {} pairs ({} skipped, {} failed) -> {}",
        report.pairs.len(),
        report.skipped.len(),
        report.failures.len(),
        args.out_pairs.display()
    );
    for skip in &report.skipped {
        log::info!("skipped {}: {}", skip.prompt_id, skip.reason);
    }
    if !report.failures.is_empty() {
        for failure in &report.failures {
            log::warn!("failed {}: {}", failure.prompt_id, failure.error);
        }
        bail!("{} candidate set(s) failed", report.failures.len());
    }
    Ok(())
}

fn run_rank_stats(args: &RankStatsArgs) -> Result<()> {
    let traces = data::read_traces(&args.traces)?;
    let stats = tournament_stats(&traces)?;
    write_output(args.out.as_ref(), &stats.to_csv())
}

fn run_loss_eval(args: &LossEvalArgs) -> Result<()> {
    let mut config: LossConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => {
            let method = args
                .method
                .context("either --config or --method is required")?;
            LossConfig::new(method.into())
        }
    };
    if let Some(method) = args.method {
        config.method = method.into();
    }
    if args.beta.is_some() {
        config.beta = args.beta;
    }
    if args.tau.is_some() {
        config.tau = args.tau;
    }
    if args.gamma.is_some() {
        config.gamma = args.gamma;
    }
    if args.lambda.is_some() {
        config.lambda = args.lambda;
    }
    if args.delta.is_some() {
        config.delta = args.delta;
    }

    let batch = read_logprob_batch(&args.batch)?;
    let output = evaluate_loss(&batch, &config)?;

    #[derive(serde::Serialize)]
    struct Report<'a> {
        method: Method,
        loss: f64,
        metrics: &'a prefopt_core::losses::BatchMetrics,
        #[serde(skip_serializing_if = "Option::is_none")]
        grad_lp_w: Option<&'a [f64]>,
        #[serde(skip_serializing_if = "Option::is_none")]
        grad_lp_l: Option<&'a [f64]>,
    }
    let report = Report {
        method: config.method,
        loss: output.loss,
        metrics: &output.metrics,
        grad_lp_w: args.gradients.then_some(output.grad_lp_w.as_slice()),
        grad_lp_l: args.gradients.then_some(output.grad_lp_l.as_slice()),
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn loss_config_from_flags(args: &TrainToyArgs) -> LossConfig {
    LossConfig {
        method: args.method.into(),
        beta: args.beta,
        tau: args.tau,
        gamma: args.gamma,
        lambda: args.lambda,
        delta: args.delta,
    }
}

fn run_train_toy(args: &TrainToyArgs) -> Result<()> {
    let config = TrainConfig {
        loss: loss_config_from_flags(args),
        learning_rate: args.lr,
        steps: args.steps,
        seed: args.seed,
        optimizer: match args.optimizer {
            OptimizerArg::Sgd => Optimizer::Sgd,
            OptimizerArg::Adam => Optimizer::Adam,
        },
        schedule: match args.cosine_warmup {
            Some(warmup_frac) => LrSchedule::CosineWarmup { warmup_frac },
            None => LrSchedule::Constant,
        },
    };

    let (policy, reference, pairs) = match args.instance {
        InstanceArg::FailureMode => {
            let instance = failure_mode_instance(args.num_prompts, args.seed)?;
            (instance.policy, instance.reference, instance.pairs)
        }
        InstanceArg::Random => {
            let world = generate_world(args.num_prompts, args.vocab_size, args.seed)?;
            let judge = SimulatedJudge::new(Arc::new(world.rewards.clone()));
            let report = build_pairs(
                &world.prompts,
                &world.candidate_sets,
                Some(&judge),
                None,
                &BuildConfig {
                    seed: args.seed,
                    ..BuildConfig::default()
                },
            )?;
            (world.policy, world.reference, report.pairs)
        }
    };

    let log = train(&policy, &reference, &pairs, &config)?;
    log::info!(
        "trained {} steps: loss {} -> {}, mean_lp_w {} -> {}",
        config.steps,
        log.initial().loss,
        log.last().loss,
        log.initial().metrics.mean_lp_w,
        log.last().metrics.mean_lp_w
    );
    write_output(args.out.as_ref(), &log.to_csv())
}

#[derive(Deserialize)]
struct WorldSpec {
    num_prompts: usize,
    vocab_size: usize,
    seed: u64,
}

#[derive(Deserialize)]
struct SweepSpec {
    world: WorldSpec,
    base: TrainConfig,
    points: Vec<SweepPoint>,
}

fn run_sweep(args: &SweepArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.grid)
        .with_context(|| format!("reading {}", args.grid.display()))?;
    let spec: SweepSpec =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", args.grid.display()))?;

    let world = generate_world(
        spec.world.num_prompts,
        spec.world.vocab_size,
        spec.world.seed,
    )?;
    let judge = SimulatedJudge::new(Arc::new(world.rewards.clone()));
    let report = build_pairs(
        &world.prompts,
        &world.candidate_sets,
        Some(&judge),
        None,
        &BuildConfig {
            seed: spec.world.seed,
            ..BuildConfig::default()
        },
    )?;
    if report.pairs.is_empty() {
        bail!("world produced no trainable pairs");
    }

    let result = sweep(&world, &report.pairs, &spec.base, &spec.points)?;
    write_output(args.out.as_ref(), &result.to_csv())
}

fn run_evaluate_agreement(args: &EvaluateAgreementArgs) -> Result<()> {
    let sets = match &args.candidates {
        Some(path) => data::read_candidates(path)?.collect::<prefopt_core::Result<Vec<_>>>()?,
        None => Vec::new(),
    };

    let eval_judge: Box<dyn Judge> = match args.judge {
        JudgeKind::Simulated => {
            let table = load_rewards(args.rewards.as_ref(), args.tie_band)?;
            Box::new(SimulatedJudge::with_sets(table, &sets))
        }
        JudgeKind::Http => args.http.build()?,
    };

    let table = if let Some(pairs_path) = &args.pairs {
        let pairs: Vec<PreferencePair> = data::read_pairs(pairs_path)?;
        let stats = agreement(&pairs, eval_judge.as_ref(), args.symmetrize)?;
        StrategyTable {
            rows: vec![StrategyRow {
                strategy: "pairs".to_string(),
                n: stats.n,
                agreement_pct: stats.agreement_pct(),
                tie_pct: stats.tie_pct(),
                disagreement_pct: stats.disagreement_pct(),
            }],
            failures: Vec::new(),
        }
    } else {
        if args.strategies.is_empty() {
            bail!("pass --pairs or at least one --strategies entry");
        }
        let prompts_path = args
            .prompts
            .as_ref()
            .context("--prompts is required with --strategies")?;
        let prompts =
            data::read_prompts(prompts_path)?.collect::<prefopt_core::Result<Vec<_>>>()?;
        if sets.is_empty() {
            bail!("--candidates is required with --strategies");
        }

        let rewards = load_rewards(args.rewards.as_ref(), args.tie_band)?;
        let build_judge = SimulatedJudge::with_sets(Arc::clone(&rewards), &sets);
        let scorer = Scorer::new(
            Arc::clone(&rewards),
            ScorerConfig {
                noise_sigma: args.noise_sigma,
            },
        )?;

        let strategies: Vec<StrategyConfig<'_>> = args
            .strategies
            .iter()
            .map(|&s| {
                let strategy: Strategy = s.into();
                StrategyConfig {
                    label: strategy.to_string(),
                    judge: (strategy != Strategy::Scoring).then_some(&build_judge as &dyn Judge),
                    scorer: (strategy == Strategy::Scoring).then_some(&scorer),
                    build: BuildConfig {
                        strategy,
                        seed: args.seed,
                        ..BuildConfig::default()
                    },
                }
            })
            .collect();
        compare_strategies(
            &prompts,
            &sets,
            eval_judge.as_ref(),
            args.symmetrize,
            &strategies,
        )?
    };

    for (label, error) in &table.failures {
        log::warn!("strategy {label} failed: {error}");
    }
    write_output(args.out.as_ref(), &table.to_csv())
}

fn run(command: &Command) -> Result<()> {
    match command {
        Command::GeneratePairs(args) => run_generate_pairs(args),
        Command::RankStats(args) => run_rank_stats(args),
        Command::LossEval(args) => run_loss_eval(args),
        Command::TrainToy(args) => run_train_toy(args),
        Command::Sweep(args) => run_sweep(args),
        Command::EvaluateAgreement(args) => run_evaluate_agreement(args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
