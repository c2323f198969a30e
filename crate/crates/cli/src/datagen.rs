use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use skillplug_core::datagen::{
    dataset_stats, format_stats_table, generate_corpus, load_coco_file, to_jsonl,
    AnswerSynthesizer, CorpusSpec, CurationRecord, DataGenerator, GeneratorKind, IdentityRewriter,
    KnowledgeChecker, Rewriter, RotationRewriter, SubstringChecker, TemplateSynthesizer,
};
use skillplug_core::session::OutputRenderer;
use skillplug_serving::{LlmClient, LlmKnowledgeChecker, LlmRewriter, LlmSynthesizer};

use crate::{load_registry, parse_renderer, read_jsonl, split_list};

#[derive(Debug, Args)]
#[command(args_conflicts_with_subcommands = true)]
pub struct DatagenArgs {
    #[command(subcommand)]
    pub command: Option<DatagenCommand>,
    #[command(flatten)]
    pub generate: GenerateArgs,
}

#[derive(Debug, Subcommand)]
pub enum DatagenCommand {
    /// Per-skill sample counts of a generated JSONL file.
    Stats {
        file: PathBuf,
        #[arg(long)]
        registry: Option<PathBuf>,
        /// Print the rows as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TextBackend {
    /// Offline deterministic defaults.
    Offline,
    /// A chat-completions endpoint configured by LLM_API_BASE, LLM_API_KEY and LLM_MODEL.
    Llm,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// COCO-style annotation JSON (images, captions, instances).
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Restrict image-only samples to these skills (comma-separated).
    #[arg(long)]
    pub skills: Option<String>,
    /// Generators to cycle through (comma-separated); all by default.
    #[arg(long)]
    pub kinds: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSONL of {question, answer, retrieved} for knowledge samples.
    #[arg(long)]
    pub knowledge: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "offline")]
    pub text_backend: TextBackend,
    /// Leave questions unparaphrased (offline backend only).
    #[arg(long)]
    pub no_rewrite: bool,
    #[arg(long, default_value = "json", value_parser = parse_renderer)]
    pub renderer: OutputRenderer,
    #[arg(long)]
    pub registry: Option<PathBuf>,
}

pub fn run(args: DatagenArgs) -> Result<()> {
    match args.command {
        Some(DatagenCommand::Stats {
            file,
            registry,
            json,
        }) => stats(&file, registry.as_deref(), json),
        None => generate(args.generate),
    }
}

fn stats(file: &Path, registry: Option<&Path>, json: bool) -> Result<()> {
    let repo = load_registry(registry)?;
    let records: Vec<CurationRecord> = read_jsonl(file)?;
    let rows = dataset_stats(&records, &repo);
    if json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
    } else {
        print!("{}", format_stats_table(&rows));
    }
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<()> {
    let Some(source) = &args.source else {
        bail!("--source is required (or use `datagen stats <file>`)");
    };
    let Some(out) = &args.out else {
        bail!("--out is required");
    };
    let repo = load_registry(args.registry.as_deref())?;
    let contexts = load_coco_file(source)?;
    let knowledge = match &args.knowledge {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    let mut spec = CorpusSpec::new(args.n, args.seed);
    if let Some(kinds) = &args.kinds {
        spec.kinds = split_list(kinds)
            .iter()
            .map(|k| k.parse::<GeneratorKind>().map_err(anyhow::Error::msg))
            .collect::<Result<_>>()?;
    }
    spec.skills = args.skills.as_deref().map(split_list);

    let (rewriter, synth, checker): (
        Box<dyn Rewriter>,
        Box<dyn AnswerSynthesizer>,
        Box<dyn KnowledgeChecker>,
    ) = match args.text_backend {
        TextBackend::Offline if args.no_rewrite => (
            Box::new(IdentityRewriter),
            Box::new(TemplateSynthesizer),
            Box::new(SubstringChecker),
        ),
        TextBackend::Offline => (
            Box::new(RotationRewriter),
            Box::new(TemplateSynthesizer),
            Box::new(SubstringChecker),
        ),
        TextBackend::Llm => {
            let client = LlmClient::from_env();
            if !client.has_key() {
                log::warn!("LLM_API_KEY is not set");
            }
            (
                Box::new(LlmRewriter(client.clone())),
                Box::new(LlmSynthesizer(client.clone())),
                Box::new(LlmKnowledgeChecker(client)),
            )
        }
    };
    let mut generator = DataGenerator::new(&repo, rewriter.as_ref(), synth.as_ref());
    generator.renderer = args.renderer;
    let output = generate_corpus(&generator, &contexts, &knowledge, checker.as_ref(), &spec)?;
    std::fs::write(out, to_jsonl(&output.records))
        .with_context(|| format!("writing {}", out.display()))?;
    for s in &output.skipped {
        log::debug!("skipped sample {} ({}): {}", s.index, s.generator, s.reason);
    }
    eprintln!(
        "wrote {} records to {} ({} skipped)",
        output.records.len(),
        out.display(),
        output.skipped.len()
    );
    Ok(())
}
