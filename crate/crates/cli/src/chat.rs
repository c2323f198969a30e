use std::io::{BufRead, Write};

use anyhow::{bail, Result};
use clap::Args;
use skillplug_core::format::VisualPrompt;
use skillplug_core::serving::protocol::{image_ref_from_wire, EventKind, ModeName, SessionEvent};
use skillplug_core::serving::ToolStatus;
use skillplug_core::session::{Agent, Session, ViewContent};

use crate::{session_mode, split_list, AgentArgs};

#[derive(Debug, Args)]
pub struct ChatArgs {
    #[arg(long, default_value = "fly")]
    pub mode: ModeName,
    /// Tools preloaded in all-tools mode (comma-separated).
    #[arg(long)]
    pub tools: Option<String>,
    /// Also print the hidden skill turns after each answer.
    #[arg(long)]
    pub debug: bool,
    #[command(flatten)]
    pub agent: AgentArgs,
}

const HELP: &str = "\
commands:
  /image <uri>          attach an image to the next message
  /point <x> <y>        add a point prompt (normalized) to the next message
  /box <x1> <y1> <x2> <y2>
  /view                 print the conversation so far
  /quit";

enum Line {
    Message(String),
    Image(String),
    Prompt(VisualPrompt),
    View,
    Help,
    Quit,
}

fn parse_line(line: &str) -> Result<Line> {
    let line = line.trim();
    let Some(rest) = line.strip_prefix('/') else {
        return Ok(Line::Message(line.to_owned()));
    };
    let mut words = rest.split_whitespace();
    let cmd = words.next().unwrap_or("");
    let args: Vec<&str> = words.collect();
    let numbers = || -> Result<Vec<f64>> {
        args.iter()
            .map(|a| {
                a.trim_matches(|c| c == ',' || c == '[' || c == ']')
                    .parse::<f64>()
            })
            .collect::<Result<_, _>>()
            .map_err(|e| anyhow::anyhow!("bad coordinate: {e}"))
    };
    Ok(match cmd {
        "image" if args.len() == 1 => Line::Image(args[0].to_owned()),
        "point" => match numbers()?[..] {
            [x, y] => Line::Prompt(VisualPrompt::point(x, y)?),
            _ => bail!("usage: /point <x> <y>"),
        },
        "box" => match numbers()?[..] {
            [a, b, c, d] => {
                let p = VisualPrompt::Box([a, b, c, d]);
                p.check()?;
                Line::Prompt(p)
            }
            _ => bail!("usage: /box <x1> <y1> <x2> <y2>"),
        },
        "view" => Line::View,
        "help" => Line::Help,
        "quit" | "exit" => Line::Quit,
        _ => bail!("unknown command `/{rest}` (try /help)"),
    })
}

fn print_event(out: &mut impl Write, ev: &SessionEvent) -> std::io::Result<()> {
    match ev.kind {
        EventKind::Status => writeln!(out, "[status] {}", ev.payload_text().unwrap_or_default()),
        EventKind::Answer => writeln!(out, "assistant: {}", ev.payload_text().unwrap_or_default()),
        EventKind::Error => writeln!(out, "[error] {}", ev.payload_text().unwrap_or_default()),
        EventKind::ToolResult => match ev.payload_tool_result() {
            Some(r) => match &r.status {
                ToolStatus::Ok => writeln!(
                    out,
                    "[tool] {} ok {}",
                    r.skill,
                    serde_json::to_string(&r.output).unwrap_or_default()
                ),
                ToolStatus::Error(e) => writeln!(out, "[tool] {} failed: {e}", r.skill),
            },
            None => writeln!(out, "[tool] {}", ev.payload.get()),
        },
    }
}

fn print_view(out: &mut impl Write, session: &Session, debug: bool, from: usize) -> Result<usize> {
    let view = session.user_view(debug);
    for e in view.entries.iter().skip(from) {
        match &e.content {
            ViewContent::Text { text } => writeln!(out, "  {}: {text}", e.role)?,
            ViewContent::Image { image } => writeln!(out, "  {}: <image {}>", e.role, image.id)?,
        }
    }
    Ok(view.entries.len())
}

pub fn run(args: ChatArgs) -> Result<()> {
    let parts = args.agent.build()?;
    let tools = args.tools.as_deref().map(split_list).unwrap_or_default();
    let mode = session_mode(args.mode, &tools);
    let agent = Agent::new(&parts.repo, parts.planner.as_ref(), parts.backend.as_ref());
    let mut session = Session::new("cli", mode).with_renderer(args.agent.renderer);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let mut pending_image: Option<String> = None;
    let mut pending_prompt: Option<VisualPrompt> = None;
    let mut debug_seen = 0;
    let mut context_seen = 0;
    for line in std::io::stdin().lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let text = match parse_line(&line) {
            Ok(Line::Message(t)) => t,
            Ok(Line::Image(uri)) => {
                writeln!(out, "[image attached: {uri}]")?;
                pending_image = Some(uri);
                continue;
            }
            Ok(Line::Prompt(p)) => {
                pending_prompt = Some(p);
                continue;
            }
            Ok(Line::View) => {
                print_view(&mut out, &session, args.debug, 0)?;
                continue;
            }
            Ok(Line::Help) => {
                writeln!(out, "{HELP}")?;
                continue;
            }
            Ok(Line::Quit) => break,
            Err(e) => {
                writeln!(out, "[error] {e}")?;
                continue;
            }
        };
        let text = match pending_prompt.take() {
            Some(p) => p.append_to(&text),
            None => text,
        };
        let images = pending_image
            .take()
            .map(|img| {
                vec![image_ref_from_wire(
                    &img,
                    format!("img-{}", session.images().len()),
                )]
            })
            .unwrap_or_default();
        let result = agent.handle_message(&mut session, &text, images, &mut |ev| {
            let _ = print_event(&mut out, &ev);
        });
        if let Err(e) = result {
            log::debug!("message failed: {e}");
        }
        if args.debug {
            writeln!(out, "--- dialogue ---")?;
            debug_seen = print_view(&mut out, &session, true, debug_seen)?;
            let context = session.symbolic_context();
            if context.len() > context_seen {
                writeln!(out, "--- context ---")?;
                writeln!(out, "{}", context[context_seen..].trim_start())?;
                context_seen = context.len();
            }
        }
        out.flush()?;
    }
    Ok(())
}
