mod chat;
mod datagen;
mod eval;
mod serve;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use skillplug_core::serving::protocol::ModeName;
use skillplug_core::serving::{MockToolBackend, Planner, ScriptedPlanner, ToolBackend};
use skillplug_core::session::{OutputRenderer, SessionMode};
use skillplug_core::skills::{builtin_repository, SkillRepository, DEFAULT_ALL_TOOLS};
use skillplug_serving::{ControllerClient, RemotePlanner, RemoteToolBackend};

pub const DEFAULT_CONTROLLER: &str = "http://127.0.0.1:21001";
pub const DEFAULT_PLANNER_MODEL: &str = "llava-plus-7b";

#[derive(Debug, Parser)]
#[command(
    name = "skillplug",
    version,
    about = "Tool-use multimodal agent runtime"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the controller that tracks workers and routes requests.
    ServeController(serve::ControllerArgs),
    /// Run a planner or tool worker and keep it registered.
    ServeWorker(serve::WorkerArgs),
    /// Run the chat gateway (sessions and event streams over HTTP).
    ServeGateway(serve::GatewayArgs),
    /// Chat in the terminal.
    Chat(chat::ChatArgs),
    /// Generate training data from annotations, or summarize a data file.
    Datagen(datagen::DatagenArgs),
    /// Score answers, compute Elo ratings or win rates.
    #[command(subcommand)]
    Eval(eval::EvalCommand),
}

/// Where planning and tool execution happen.
#[derive(Debug, Clone, Args)]
pub struct AgentArgs {
    /// Controller that routes to planner and tool workers.
    #[arg(long, env = "CONTROLLER_URL", default_value = DEFAULT_CONTROLLER)]
    pub controller: String,
    /// Served name of the planner model.
    #[arg(long, default_value = DEFAULT_PLANNER_MODEL)]
    pub model: String,
    /// Run the scripted planner and mock tools in-process instead.
    #[arg(long)]
    pub local: bool,
    /// Seed for in-process mock tools.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Rule file for the in-process scripted planner.
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Skill repository JSON; defaults to the built-in repository.
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// How tool outputs are written into skill-result turns.
    #[arg(long, default_value = "json", value_parser = parse_renderer)]
    pub renderer: OutputRenderer,
}

pub struct AgentParts {
    pub repo: Arc<SkillRepository>,
    pub planner: Arc<dyn Planner>,
    pub backend: Arc<dyn ToolBackend>,
}

impl AgentArgs {
    /// Builds blocking clients; call outside any async runtime.
    pub fn build(&self) -> Result<AgentParts> {
        let repo = Arc::new(load_registry(self.registry.as_deref())?);
        if self.local {
            return Ok(AgentParts {
                repo,
                planner: Arc::new(load_script(self.script.as_deref())?),
                backend: Arc::new(MockToolBackend::new(self.seed)),
            });
        }
        let controller = ControllerClient::new(&self.controller);
        Ok(AgentParts {
            repo,
            planner: Arc::new(RemotePlanner::new(controller.clone(), self.model.clone())),
            backend: Arc::new(RemoteToolBackend::new(controller)),
        })
    }
}

pub fn load_registry(path: Option<&std::path::Path>) -> Result<SkillRepository> {
    match path {
        Some(p) => SkillRepository::from_json_file(p)
            .with_context(|| format!("loading skill registry {}", p.display())),
        None => Ok(builtin_repository()),
    }
}

pub fn load_script(path: Option<&std::path::Path>) -> Result<ScriptedPlanner> {
    match path {
        Some(p) => ScriptedPlanner::from_json_file(p)
            .with_context(|| format!("loading planner script {}", p.display())),
        None => Ok(ScriptedPlanner::tool_use_defaults()),
    }
}

pub fn parse_renderer(s: &str) -> Result<OutputRenderer, String> {
    match s {
        "json" => Ok(OutputRenderer::Json),
        "repr" => Ok(OutputRenderer::Repr),
        other => Err(format!("unknown renderer `{other}` (json|repr)")),
    }
}

pub fn session_mode(mode: ModeName, tools: &[String]) -> SessionMode {
    match mode {
        ModeName::Fly => SessionMode::OnTheFly,
        ModeName::AllTools if tools.is_empty() => SessionMode::AllTools {
            tools: DEFAULT_ALL_TOOLS.iter().map(|s| s.to_string()).collect(),
        },
        ModeName::AllTools => SessionMode::AllTools {
            tools: tools.to_vec(),
        },
    }
}

/// `45`, `45s`, `500ms` or `2m`.
pub fn parse_duration(s: &str) -> Result<Duration, String> {
    let s = s.trim();
    let (num, unit) = match s.find(|c: char| !c.is_ascii_digit() && c != '.') {
        Some(i) => s.split_at(i),
        None => (s, "s"),
    };
    let n: f64 = num.parse().map_err(|_| format!("bad duration `{s}`"))?;
    let secs = match unit {
        "ms" => n / 1000.0,
        "s" => n,
        "m" => n * 60.0,
        _ => return Err(format!("bad duration unit in `{s}` (ms|s|m)")),
    };
    if !(secs.is_finite() && secs > 0.0) {
        return Err(format!("duration must be positive: `{s}`"));
    }
    Ok(Duration::from_secs_f64(secs))
}

pub fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

pub fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::ServeController(a) => serve::controller(a),
        Command::ServeWorker(a) => serve::worker(a),
        Command::ServeGateway(a) => serve::gateway(a),
        Command::Chat(a) => chat::run(a),
        Command::Datagen(a) => datagen::run(a),
        Command::Eval(c) => eval::run(c),
    }
}

/// One JSON value per nonblank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &std::path::Path) -> Result<Vec<T>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn durations() {
        assert_eq!(parse_duration("45").unwrap(), Duration::from_secs(45));
        assert_eq!(parse_duration("45s").unwrap(), Duration::from_secs(45));
        assert_eq!(parse_duration("250ms").unwrap(), Duration::from_millis(250));
        assert_eq!(parse_duration("2m").unwrap(), Duration::from_secs(120));
        assert!(parse_duration("0").is_err());
        assert!(parse_duration("3h").is_err());
        assert!(parse_duration("soon").is_err());
    }

    #[test]
    fn lists_and_modes() {
        assert_eq!(split_list("sam, blip2,,"), vec!["sam", "blip2"]);
        assert_eq!(session_mode(ModeName::Fly, &[]), SessionMode::OnTheFly);
        assert_eq!(
            session_mode(ModeName::AllTools, &["ram".into()]),
            SessionMode::AllTools {
                tools: vec!["ram".into()]
            }
        );
    }
}
