use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use skillplug_core::eval::{
    elo_compute, format_leaderboard, parse_matches_jsonl, relative_score, run_capability_suite,
    win_rate, AgentSessionFactory, AllMode, AnswerRecord, EloParams, GoldRecord, Judge,
    MatchRecord, StubJudge, SuiteSpec, LLAVA_BENCH_LAYOUT, TOOLS_LAYOUT,
};
use skillplug_core::serving::protocol::ModeName;
use skillplug_serving::{LlmClient, LlmJudge};

use crate::{read_jsonl, session_mode, split_list, AgentArgs};

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Judge answers against gold answers and report relative scores.
    Relative(RelativeArgs),
    /// Elo ratings from a stream of pairwise matches.
    Elo(EloArgs),
    /// Each model's win rate against a reference contestant.
    Winrate(WinrateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum JudgeArg {
    /// Offline token-overlap judge.
    Stub,
    /// Chat-completions judge configured by LLM_API_BASE, LLM_API_KEY and LLM_MODEL.
    Remote,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LayoutArg {
    Tools,
    LlavaBench,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AllModeArg {
    SampleWeighted,
    CategoryMean,
}

#[derive(Debug, Args)]
pub struct RelativeArgs {
    /// Suite JSON: {category: [{id, prompt, image, gold}]}. Each item is
    /// answered by a fresh session.
    #[arg(long, conflicts_with_all = ["answers", "golds"])]
    pub suite: Option<PathBuf>,
    /// Precomputed answers, JSONL of {id, answer}.
    #[arg(long, requires = "golds")]
    pub answers: Option<PathBuf>,
    /// JSONL of {id, category, question, gold}.
    #[arg(long, requires = "answers")]
    pub golds: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "stub")]
    pub judge: JudgeArg,
    #[arg(long, value_enum, default_value = "tools")]
    pub layout: LayoutArg,
    #[arg(long, value_enum, default_value = "sample-weighted")]
    pub all_mode: AllModeArg,
    #[arg(long, default_value = "fly")]
    pub mode: ModeName,
    /// Tools preloaded in all-tools mode (comma-separated).
    #[arg(long)]
    pub tools: Option<String>,
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub agent: AgentArgs,
}

#[derive(Debug, Args)]
pub struct EloArgs {
    /// JSONL of {a, b, outcome, order_index}.
    #[arg(long)]
    pub matches: PathBuf,
    #[arg(long, default_value_t = 32.0)]
    pub k: f64,
    #[arg(long, default_value_t = 1000.0)]
    pub initial: f64,
    #[arg(long, default_value_t = 400.0)]
    pub scale: f64,
    #[arg(long, default_value_t = 10.0)]
    pub base: f64,
    /// Adds a win-rate column against this contestant.
    #[arg(long)]
    pub reference: Option<String>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct WinrateArgs {
    #[arg(long)]
    pub matches: PathBuf,
    #[arg(long, default_value = "human")]
    pub reference: String,
    #[arg(long)]
    pub json: bool,
}

pub fn run(cmd: EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Relative(a) => relative(a),
        EvalCommand::Elo(a) => elo(a),
        EvalCommand::Winrate(a) => winrate(a),
    }
}

fn relative(args: RelativeArgs) -> Result<()> {
    let judge: Box<dyn Judge> = match args.judge {
        JudgeArg::Stub => Box::new(StubJudge::default()),
        JudgeArg::Remote => {
            let client = LlmClient::from_env();
            if !client.has_key() {
                log::warn!("LLM_API_KEY is not set");
            }
            Box::new(LlmJudge(client))
        }
    };
    let layout = match args.layout {
        LayoutArg::Tools => TOOLS_LAYOUT,
        LayoutArg::LlavaBench => LLAVA_BENCH_LAYOUT,
    };
    let mode = match args.all_mode {
        AllModeArg::SampleWeighted => AllMode::SampleWeighted,
        AllModeArg::CategoryMean => AllMode::CategoryMean,
    };
    let report = match (&args.suite, &args.answers, &args.golds) {
        (Some(suite), _, _) => {
            let text = std::fs::read_to_string(suite)
                .with_context(|| format!("reading {}", suite.display()))?;
            let spec: SuiteSpec = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", suite.display()))?;
            let parts = args.agent.build()?;
            let tools = args.tools.as_deref().map(split_list).unwrap_or_default();
            let factory = AgentSessionFactory {
                repo: &parts.repo,
                planner: parts.planner.as_ref(),
                backend: parts.backend.as_ref(),
                mode: session_mode(args.mode, &tools),
            };
            run_capability_suite(&factory, &spec, judge.as_ref(), layout, mode)?
        }
        (None, Some(answers), Some(golds)) => {
            let answers: Vec<AnswerRecord> = read_jsonl(answers)?;
            let golds: Vec<GoldRecord> = read_jsonl(golds)?;
            relative_score(&answers, &golds, judge.as_ref(), layout, mode)?
        }
        _ => bail!("give --suite, or --answers with --golds"),
    };
    if args.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_table());
    }
    for f in &report.failures {
        eprintln!("failed {} ({}): {}", f.id, f.category, f.reason);
    }
    Ok(())
}

fn load_matches(path: &std::path::Path) -> Result<Vec<MatchRecord>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_matches_jsonl(&text)?)
}

fn elo(args: EloArgs) -> Result<()> {
    let matches = load_matches(&args.matches)?;
    let params = EloParams {
        k: args.k,
        initial: args.initial,
        scale: args.scale,
        base: args.base,
    };
    let table = elo_compute(&matches, params)?;
    let rates = match &args.reference {
        Some(r) => win_rate(&matches, r)?,
        None => BTreeMap::new(),
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&table)?);
    } else {
        print!(
            "{}",
            format_leaderboard(&table, &rates, args.reference.as_deref().unwrap_or(""))
        );
    }
    Ok(())
}

fn winrate(args: WinrateArgs) -> Result<()> {
    let matches = load_matches(&args.matches)?;
    let rates = win_rate(&matches, &args.reference)?;
    if args.json {
        let out: BTreeMap<&str, f64> = rates.iter().map(|(m, r)| (m.as_str(), r.rate())).collect();
        println!("{}", serde_json::to_string_pretty(&out)?);
    } else {
        let mut rows: Vec<_> = rates.iter().collect();
        rows.sort_by(|a, b| b.1.rate().total_cmp(&a.1.rate()).then(a.0.cmp(b.0)));
        let width = rows.iter().map(|(m, _)| m.len()).max().unwrap_or(5).max(5);
        println!("{:<width$}  vs {}", "Model", args.reference);
        for (model, rate) in rows {
            println!("{model:<width$}  {rate}");
        }
    }
    Ok(())
}
