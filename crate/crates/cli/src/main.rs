use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use awaire::audit::{AuditConfig, AuditState, ContestHeader};
use awaire::contest::{last_round_margin, parse_contest, tabulate_irv, Contest, ContestFormat};
use awaire::sim::{
    add_fake_candidates, card_order, export_results, run_simulations, synthetic_contest, NamedConfig,
    SimPlan,
};
use awaire::{Eta0Policy, ExpansionPolicy};
use awaire_service::{AppState, ServiceConfig};

/// Risk-limiting audits for instant-runoff elections.
#[derive(Debug, Parser)]
#[command(name = "awaire", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the elimination order, round tallies and last-round margin.
    Tabulate {
        contest: PathBuf,
        /// Print the tabulation as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run many audits on random card orders and write a CSV.
    Simulate(SimulateArgs),
    /// Run one audit and stream a report per draw.
    Audit(AuditArgs),
    /// Serve the session API.
    Serve(ServeArgs),
    /// Write a synthetic two-front-runner contest as JSON.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
struct AuditOptions {
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Starting bet: 051, lrm or am.
    #[arg(long, default_value = "051")]
    eta0: Eta0Policy,
    /// Shrinkage of the bet towards the starting value.
    #[arg(long, default_value_t = 200.0)]
    d: f64,
    /// Skip requirements implied by refuted ones instead of abandoning them.
    #[arg(long)]
    no_abandonment: bool,
    /// Keep unwatched requirements up to date on every draw.
    #[arg(long)]
    no_parking: bool,
    #[arg(long)]
    frontier_cap: Option<usize>,
}

impl AuditOptions {
    fn config(&self, policy: ExpansionPolicy) -> AuditConfig {
        let mut config = AuditConfig {
            alpha: self.alpha,
            eta0: self.eta0,
            d: self.d,
            policy,
            abandonment: !self.no_abandonment,
            parking: !self.no_parking,
            ..AuditConfig::default()
        };
        if let Some(cap) = self.frontier_cap {
            config.frontier_cap = cap;
        }
        config
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    contest: PathBuf,
    #[arg(long, default_value_t = 100)]
    sims: usize,
    /// Expansion policy; repeat to compare several on the same card orders.
    #[arg(long, default_value = "below:1,tight:1.6487")]
    policy: Vec<ExpansionPolicy>,
    /// Master seed. Without it a random seed is drawn and logged.
    #[arg(long)]
    seed: Option<u64>,
    /// CSV destination; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Append this many candidates nobody votes for.
    #[arg(long, default_value_t = 0)]
    fake: usize,
    /// Per-audit wall-clock budget in seconds; overruns count as full hand counts.
    #[arg(long)]
    time_budget: Option<f64>,
    #[command(flatten)]
    audit: AuditOptions,
}

#[derive(Debug, Args)]
struct AuditArgs {
    contest: PathBuf,
    /// A file of 0-based card indices, or a seed for a random order.
    #[arg(long)]
    order: Option<String>,
    #[arg(long, default_value = "below:1,tight:1.6487")]
    policy: ExpansionPolicy,
    /// Audit this reported winner instead of the tabulated one.
    #[arg(long)]
    reported_winner: Option<String>,
    /// One JSON object per draw with the frontier and requirement store.
    #[arg(long)]
    trace: bool,
    #[command(flatten)]
    audit: AuditOptions,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Contest used by sessions created without one.
    #[arg(long)]
    contest: Option<PathBuf>,
    /// Persist sessions here and resume them on start.
    #[arg(long)]
    snapshot_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, default_value = "synthetic")]
    name: String,
    #[arg(long, default_value_t = 4)]
    candidates: usize,
    #[arg(long, default_value_t = 10_000)]
    cards: u64,
    /// Diluted margin between the front-runners.
    #[arg(long, default_value_t = 0.05)]
    margin: f64,
    /// Share of cards going to minor candidates first.
    #[arg(long, default_value_t = 0.2)]
    minor_share: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<io::Error>())
        .any(|io| io.kind() == io::ErrorKind::BrokenPipe)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Tabulate { contest, json } => tabulate(&contest, json),
        Command::Simulate(args) => simulate(args),
        Command::Audit(args) => audit(args),
        Command::Serve(args) => serve(args),
        Command::Generate(args) => generate(args),
    }
}

fn load_contest(path: &Path) -> Result<Contest> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_contest(io::BufReader::new(file), ContestFormat::Json)
        .with_context(|| format!("reading {}", path.display()))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn tabulate(path: &Path, as_json: bool) -> Result<()> {
    let contest = load_contest(path)?;
    let tab = tabulate_irv(&contest);
    let label = |c: usize| contest.label(c).to_string();
    let margin = last_round_margin(&tab, contest.total_cards()).ok();
    let mut out = output(None)?;
    if as_json {
        let rounds: Vec<_> = tab
            .round_tallies
            .iter()
            .map(|r| {
                let tallies: serde_json::Map<_, _> =
                    r.remaining.iter().map(|c| (label(c), json!(r.tallies[c]))).collect();
                json!({ "tallies": tallies, "exhausted": r.exhausted })
            })
            .collect();
        let order: Vec<_> = tab.elimination_order.iter().map(|&c| label(c)).collect();
        let value = json!({
            "contest": contest.name(),
            "elimination_order": order,
            "winner": label(tab.winner()),
            "rounds": rounds,
            "last_round_margin_cards": tab.last_round_margin_cards,
            "last_round_margin": margin,
        });
        writeln!(out, "{value}")?;
    } else {
        writeln!(out, "contest: {}", contest.name())?;
        writeln!(out, "cards: {}", contest.total_cards())?;
        for (i, r) in tab.round_tallies.iter().enumerate() {
            let tallies: Vec<String> =
                r.remaining.iter().map(|c| format!("{}={}", label(c), r.tallies[c])).collect();
            let outcome = if r.remaining.len() == 1 {
                format!("winner {}", label(tab.winner()))
            } else {
                format!("eliminate {}", label(tab.elimination_order[i]))
            };
            writeln!(out, "round {}: {} exhausted={} -> {}", i + 1, tallies.join(" "), r.exhausted, outcome)?;
        }
        let order: Vec<_> = tab.elimination_order.iter().map(|&c| label(c)).collect();
        writeln!(out, "elimination order: [{}]", order.join(","))?;
        writeln!(out, "winner: {}", label(tab.winner()))?;
        match margin {
            Some(m) => writeln!(out, "last-round margin: {} cards ({m:.6} diluted)", tab.last_round_margin_cards)?,
            None => writeln!(out, "last-round margin: {} cards", tab.last_round_margin_cards)?,
        }
    }
    out.flush()?;
    Ok(())
}

fn seed_or_entropy(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let seed = rand::random();
        log::info!("no --seed given; using seed {seed}");
        seed
    })
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut contest = load_contest(&args.contest)?;
    if args.fake > 0 {
        contest = add_fake_candidates(&contest, args.fake)?;
    }
    let seed = seed_or_entropy(args.seed);
    let configs = args
        .policy
        .iter()
        .map(|p| NamedConfig { label: p.to_string(), config: args.audit.config(*p) })
        .collect();
    let mut plan = SimPlan::new(contest, configs, args.sims, seed);
    plan.jobs = args.jobs;
    if let Some(secs) = args.time_budget {
        if !(secs > 0.0) {
            bail!("--time-budget must be positive");
        }
        plan.time_budget = Some(Duration::from_secs_f64(secs));
    }
    // Fail on configuration errors before spending time on simulations.
    for c in &plan.configs {
        AuditState::start(plan.header.clone(), c.config)?;
    }
    let results = run_simulations(&plan)?;
    for a in &results.aggregates {
        log::info!(
            "{}: mean sample size {:.1} (se {:.1}), certified {:.3}",
            a.config,
            a.mean_sample_size,
            a.std_err_sample_size,
            a.certification_rate
        );
    }
    let mut out = output(args.out.as_deref())?;
    export_results(&results, &mut out)?;
    out.flush()?;
    Ok(())
}

fn read_order(spec: &str, n: usize) -> Result<Vec<usize>> {
    let path = Path::new(spec);
    if !path.exists() {
        if let Ok(seed) = spec.parse::<u64>() {
            return Ok(card_order(n, seed));
        }
        bail!("--order {spec}: no such file and not a seed");
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let order = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().with_context(|| format!("bad card index {s:?}")))
        .collect::<Result<Vec<_>>>()?;
    let mut seen = vec![false; n];
    for &i in &order {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            bail!("order must be a permutation of 0..{n}; card {i} is out of range or repeated");
        }
    }
    Ok(order)
}

fn audit(args: AuditArgs) -> Result<()> {
    let contest = load_contest(&args.contest)?;
    let mut header = ContestHeader::from_contest(&contest);
    if let Some(w) = &args.reported_winner {
        let c = contest.candidate_index(w).with_context(|| format!("unknown candidate {w}"))?;
        header = header.with_reported_winner(c);
    }
    let cards = contest.cards();
    let order = match &args.order {
        Some(spec) => read_order(spec, cards.len())?,
        None => card_order(cards.len(), seed_or_entropy(None)),
    };
    let mut state = AuditState::start(header, args.audit.config(args.policy))?;
    let mut out = output(None)?;
    for &i in &order {
        let report = state.process_ballot(cards[i].clone())?;
        if args.trace {
            let line = json!({
                "report": report,
                "frontier": state.frontier_view(),
                "store": state.store_dump(),
            });
            writeln!(out, "{line}")?;
        } else {
            writeln!(out, "{}", serde_json::to_string(&report)?)?;
        }
        if report.status.is_terminal() {
            break;
        }
    }
    out.flush()?;
    log::info!("{:?} after {} of {} cards", state.status(), state.draws(), cards.len());
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let default_contest = args.contest.as_deref().map(load_contest).transpose()?;
    let config = ServiceConfig { snapshot_dir: args.snapshot_dir, default_contest };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let state = AppState::load(config).await.context("loading snapshots")?;
        let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port))
            .await
            .with_context(|| format!("binding {}:{}", args.host, args.port))?;
        log::info!("listening on {}", listener.local_addr()?);
        awaire_service::serve(listener, state).await?;
        Ok(())
    })
}

fn generate(args: GenerateArgs) -> Result<()> {
    let contest = synthetic_contest(&args.name, args.candidates, args.cards, args.margin, args.minor_share)?;
    let mut out = output(args.out.as_deref())?;
    writeln!(out, "{}", contest.to_json())?;
    out.flush()?;
    Ok(())
}
