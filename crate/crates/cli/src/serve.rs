use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use axum::Router;
use clap::{Args, ValueEnum};
use skillplug_core::serving::{MockToolBackend, RoutingPolicy, SystemClock};
use skillplug_serving::{run_heartbeat, Controller, Gateway, LlmClient, LlmGenerator, Worker};

use crate::{load_registry, load_script, parse_duration, runtime, split_list, AgentArgs};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    Lottery,
    #[value(name = "shortest_queue", alias = "shortest-queue")]
    ShortestQueue,
}

impl From<PolicyArg> for RoutingPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Lottery => RoutingPolicy::Lottery,
            PolicyArg::ShortestQueue => RoutingPolicy::ShortestQueue,
        }
    }
}

#[derive(Debug, Args)]
pub struct ControllerArgs {
    #[arg(long, default_value = "127.0.0.1:21001")]
    pub addr: String,
    /// Workers silent for longer than this are dropped.
    #[arg(long, default_value = "45s", value_parser = parse_duration)]
    pub heartbeat_timeout: Duration,
    #[arg(long, value_enum, default_value = "lottery")]
    pub policy: PolicyArg,
    /// Seed for lottery routing; random when absent.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Tool,
    Planner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlannerArg {
    Scripted,
    Llm,
}

#[derive(Debug, Args)]
pub struct WorkerArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    /// Comma-separated names to serve. Tool workers default to every
    /// registered skill, planner workers to `--model-name`.
    #[arg(long)]
    pub skills: Option<String>,
    /// Serve deterministic mock tool outputs.
    #[arg(long)]
    pub mock: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "WORKER_ADDR", default_value = "127.0.0.1:0")]
    pub addr: String,
    #[arg(long, env = "CONTROLLER_URL", default_value = crate::DEFAULT_CONTROLLER)]
    pub controller: String,
    #[arg(long)]
    pub worker_id: Option<String>,
    #[arg(long, default_value = "15s", value_parser = parse_duration)]
    pub heartbeat_interval: Duration,
    #[arg(long, default_value = crate::DEFAULT_PLANNER_MODEL)]
    pub model_name: String,
    #[arg(long, value_enum, default_value = "scripted")]
    pub planner: PlannerArg,
    /// Rule file for the scripted planner.
    #[arg(long)]
    pub script: Option<PathBuf>,
    #[arg(long)]
    pub registry: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GatewayArgs {
    #[arg(long, default_value = "127.0.0.1:7860")]
    pub addr: String,
    #[command(flatten)]
    pub agent: AgentArgs,
}

async fn bind(addr: &str) -> Result<(tokio::net::TcpListener, std::net::SocketAddr)> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    let local = listener.local_addr()?;
    Ok((listener, local))
}

fn announce(what: &str, addr: std::net::SocketAddr) {
    println!("{what} listening on http://{addr}");
    let _ = std::io::stdout().flush();
}

async fn serve(listener: tokio::net::TcpListener, app: Router) -> Result<()> {
    axum::serve(listener, app).await.context("server stopped")
}

pub fn controller(args: ControllerArgs) -> Result<()> {
    let controller = match args.seed {
        Some(seed) => Controller::new(
            args.heartbeat_timeout,
            args.policy.into(),
            Arc::new(SystemClock),
            seed,
        ),
        None => Controller::with_system_clock(args.heartbeat_timeout, args.policy.into()),
    };
    runtime()?.block_on(async move {
        let (listener, local) = bind(&args.addr).await?;
        let sweep_every = (args.heartbeat_timeout / 3).max(Duration::from_millis(100));
        tokio::spawn(Arc::clone(&controller).sweep_forever(sweep_every));
        announce("controller", local);
        serve(listener, controller.router()).await
    })
}

pub fn worker(args: WorkerArgs) -> Result<()> {
    let repo = Arc::new(load_registry(args.registry.as_deref())?);
    let generator: Option<Arc<dyn skillplug_serving::TextGenerator>> = match args.kind {
        KindArg::Tool => {
            if !args.mock {
                bail!("tool workers need --mock; real tool models are not bundled");
            }
            None
        }
        KindArg::Planner => Some(match args.planner {
            PlannerArg::Scripted => Arc::new(load_script(args.script.as_deref())?),
            PlannerArg::Llm => {
                let client = LlmClient::from_env();
                if !client.has_key() {
                    log::warn!("LLM_API_KEY is not set");
                }
                Arc::new(LlmGenerator(client))
            }
        }),
    };
    let names = match (&args.skills, args.kind) {
        (Some(s), _) => split_list(s),
        (None, KindArg::Tool) => repo.names().map(str::to_owned).collect(),
        (None, KindArg::Planner) => vec![args.model_name.clone()],
    };
    if names.is_empty() {
        bail!("nothing to serve");
    }
    if args.kind == KindArg::Tool {
        if let Some(bad) = names.iter().find(|n| !repo.contains(n)) {
            bail!("unknown skill `{bad}`");
        }
    }
    runtime()?.block_on(async move {
        let (listener, local) = bind(&args.addr).await?;
        let address = format!("http://{local}");
        let id = args
            .worker_id
            .clone()
            .unwrap_or_else(|| format!("{}-{}", kind_name(args.kind), local.port()));
        let w = match generator {
            None => Worker::tool(
                id,
                address,
                names,
                repo,
                Arc::new(MockToolBackend::new(args.seed)),
            ),
            Some(g) => Worker::planner(id, address, names, g),
        };
        tokio::spawn(run_heartbeat(
            Arc::clone(&w),
            args.controller.clone(),
            args.heartbeat_interval,
        ));
        announce("worker", local);
        serve(listener, w.router()).await
    })
}

fn kind_name(kind: KindArg) -> &'static str {
    match kind {
        KindArg::Tool => "tool",
        KindArg::Planner => "planner",
    }
}

pub fn gateway(args: GatewayArgs) -> Result<()> {
    let parts = args.agent.build()?;
    let gateway = Gateway::with_renderer(
        parts.repo,
        parts.planner,
        parts.backend,
        args.agent.renderer,
    );
    runtime()?.block_on(async move {
        let (listener, local) = bind(&args.addr).await?;
        announce("gateway", local);
        serve(listener, gateway.router()).await
    })
}
