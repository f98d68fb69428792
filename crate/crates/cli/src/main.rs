use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use glean_core::evidence::EvidenceMode;
use glean_core::governance::SEED_CATALOG;
use glean_core::harness::{
    emit_plots, ingest, render_markdown, requests, run, split_derived_id, stratified_sample, synth_generate, verify, BundlePaths,
    DatasetBundle, Report, RunManifest, Stages,
};
use glean_core::jsonl;
use glean_core::probes::ProbeKind;
use glean_core::rng::sha256_hex;
use glean_core::serialization::{emit, SerializationFormat};
use glean_core::table::GroundingConfig;

const EXIT_SCHEMA: u8 = 1;
const EXIT_FAIL_SOFT: u8 = 2;

#[derive(Parser)]
#[command(name = "glean", version, about = "Evaluation harness for table question answering and fact verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate input files and write a normalized bundle.
    Ingest {
        #[command(flatten)]
        inputs: Inputs,
        /// Keep at most this many verdict examples per label.
        #[arg(long)]
        sample_per_label: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic bundle with planted answers.
    Synth {
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serialize each example's table in one format.
    Serialize {
        #[arg(long)]
        tables: PathBuf,
        #[arg(long)]
        examples: PathBuf,
        #[arg(long)]
        format: SerializationFormat,
        /// Output JSONL file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate probe variants and contamination deltas.
    Probe(StageArgs),
    /// Rank rows with every configured retriever and score recall.
    Retrieve(StageArgs),
    /// Write the budgeted row and column selection for every example.
    Prune(StageArgs),
    /// Write inference requests for every example.
    Requests(StageArgs),
    /// Run every stage and write the full report.
    Evaluate(StageArgs),
    /// Identify evidence rows and validate the detectors.
    Evidence(StageArgs),
    /// Execute gold SQL and account for mismatches.
    SqlAudit(StageArgs),
    /// Attribute each prediction to an error label.
    Attribute(StageArgs),
    /// Apply labeling functions and contrast sets.
    Govern(StageArgs),
    /// Re-render report.md and plot data from a run's report.json.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute report numbers from a run's stage files.
    Verify {
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Args)]
struct Inputs {
    #[arg(long)]
    tables: PathBuf,
    #[arg(long)]
    examples: PathBuf,
    #[arg(long)]
    gold_sql: Option<PathBuf>,
    /// Model predictions as TAG=PATH; repeatable.
    #[arg(long = "predictions", value_parser = tagged)]
    predictions: Vec<(String, PathBuf)>,
    /// Verdict classifier scores as TAG=PATH; repeatable.
    #[arg(long = "scores", value_parser = tagged)]
    scores: Vec<(String, PathBuf)>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Reference corpus for n-gram overlap.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Evidence audit judgments ({id, row, judgment, judge} lines).
    #[arg(long)]
    judgments: Option<PathBuf>,
    /// Per-row external scores ({id, scores}) for the `external` retriever.
    #[arg(long)]
    row_scores: Option<PathBuf>,
}

impl Inputs {
    fn paths(&self) -> BundlePaths {
        BundlePaths {
            tables: self.tables.clone(),
            examples: self.examples.clone(),
            gold_sql: self.gold_sql.clone(),
            predictions: self.predictions.clone(),
            scores: self.scores.clone(),
            embeddings: self.embeddings.clone(),
            corpus: self.corpus.clone(),
            judgments: self.judgments.clone(),
            row_scores: self.row_scores.clone(),
        }
    }
}

#[derive(Args)]
struct StageArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Base manifest; flags below override its fields.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Table token budget.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    max_cols: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    /// Retrievers to run; the first one builds requests.
    #[arg(long, value_delimiter = ',')]
    retriever: Vec<String>,
    #[arg(long)]
    evidence_mode: Option<EvidenceMode>,
    /// JSON file with a grounding configuration.
    #[arg(long)]
    grounding_config: Option<PathBuf>,
    #[arg(long = "kind", value_delimiter = ',')]
    probe_kinds: Vec<ProbeKind>,
    /// Labeling-function catalog; the built-in seed catalog by default.
    #[arg(long)]
    lf_catalog: Option<PathBuf>,
    #[arg(long)]
    resamples: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn tagged(s: &str) -> Result<(String, PathBuf), String> {
    let (tag, path) = s.split_once('=').ok_or_else(|| format!("expected TAG=PATH, got {s:?}"))?;
    if tag.is_empty() {
        return Err("empty tag".into());
    }
    Ok((tag.to_owned(), PathBuf::from(path)))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

impl StageArgs {
    fn manifest(&self, stages: Stages, catalog: &str) -> Result<RunManifest> {
        let mut m = match &self.manifest {
            Some(p) => read_json(p)?,
            None => RunManifest::new("glean", self.seed.unwrap_or(0)),
        };
        if let Some(id) = &self.run_id {
            m.run_id = id.clone();
        }
        if let Some(seed) = self.seed {
            if seed != m.global_seed && self.manifest.is_some() {
                m.canary = RunManifest::new(&m.run_id, seed).canary;
            }
            m.global_seed = seed;
        }
        if let Some(b) = self.budget {
            m.budget.max_table_tokens = b;
        }
        if let Some(c) = self.max_cols {
            m.budget.max_cols = c;
        }
        if !self.k.is_empty() {
            m.ks = self.k.clone();
        }
        if !self.retriever.is_empty() {
            m.retrievers = self.retriever.clone();
            m.primary_retriever = self.retriever[0].clone();
        }
        if let Some(e) = self.evidence_mode {
            m.evidence_mode = e;
        }
        if let Some(p) = &self.grounding_config {
            m.grounding = read_json::<GroundingConfig>(p)?;
        }
        if !self.probe_kinds.is_empty() {
            m.probe_kinds = self.probe_kinds.clone();
        }
        if let Some(r) = self.resamples {
            m.bootstrap_resamples = r;
        }
        m.lf_catalog_hash = sha256_hex(catalog.as_bytes());
        m.stages = stages;
        m.validate()?;
        Ok(m)
    }

    fn catalog(&self) -> Result<String> {
        match &self.lf_catalog {
            Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
            None => Ok(SEED_CATALOG.to_owned()),
        }
    }
}

fn only(f: impl FnOnce(&mut Stages)) -> Stages {
    let mut s = Stages {
        probes: false,
        retrieval: false,
        metrics: false,
        evidence: false,
        sql: false,
        attribution: false,
        governance: false,
    };
    f(&mut s);
    s
}

/// Run the harness with `stages` enabled and write its output directory.
fn run_stages(args: &StageArgs, stages: Stages) -> Result<u8> {
    let bundle = ingest(&args.inputs.paths())?;
    let catalog = args.catalog()?;
    let m = args.manifest(stages, &catalog)?;
    let out = run(&m, &bundle, &catalog)?;
    out.write(&args.out)?;
    let f = &out.report.failures;
    println!(
        "{}: {} examples, {} failed ({:.2}%), report digest {}",
        args.out.display(),
        f.n_examples,
        f.failed_examples,
        100.0 * f.rate,
        out.report_digest()
    );
    if out.exceeded() {
        eprintln!(
            "failure rate {:.4} exceeds {:.2}; see {}",
            f.rate,
            f.threshold,
            args.out.join("errors.jsonl").display()
        );
        return Ok(EXIT_FAIL_SOFT);
    }
    Ok(0)
}

#[derive(Serialize)]
struct PrunedLine<'a> {
    id: &'a str,
    retriever: &'a str,
    budget: usize,
    rows: &'a [usize],
    cols: &'a [usize],
    oversize: bool,
}

#[derive(Serialize)]
struct SerializedLine<'a> {
    id: &'a str,
    format: SerializationFormat,
    text: String,
}

fn write_requests(args: &StageArgs, pruned_only: bool) -> Result<u8> {
    let bundle = ingest(&args.inputs.paths())?;
    let catalog = args.catalog()?;
    let m = args.manifest(only(|s| s.retrieval = true), &catalog)?;
    let (reqs, failures) = requests(&m, &bundle)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let (name, body) = if pruned_only {
        let lines: Vec<PrunedLine> = reqs
            .iter()
            .map(|r| PrunedLine {
                id: &r.id,
                retriever: &r.retriever,
                budget: r.budget,
                rows: &r.rows,
                cols: &r.cols,
                oversize: r.oversize,
            })
            .collect();
        ("pruned.jsonl", jsonl::to_string(&lines))
    } else {
        ("requests.jsonl", jsonl::to_string(&reqs))
    };
    fs::write(args.out.join(name), body)?;
    fs::write(args.out.join("errors.jsonl"), jsonl::to_string(&failures))?;
    write_json(&args.out.join("manifest.json"), &m)?;
    println!("{}: {} lines, {} failures", args.out.join(name).display(), reqs.len(), failures.len());
    let rate = failures.len() as f64 / bundle.examples.len().max(1) as f64;
    Ok(if rate > glean_core::harness::FAIL_SOFT_THRESHOLD {
        EXIT_FAIL_SOFT
    } else {
        0
    })
}

fn write_bundle(bundle: &DatasetBundle, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let paths = bundle.write(out)?;
    write_json(&out.join("bundle.json"), &paths)?;
    write_json(&out.join("counts.json"), &bundle.counts())?;
    Ok(())
}

fn execute(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Ingest {
            inputs,
            sample_per_label,
            seed,
            out,
        } => {
            let mut bundle = ingest(&inputs.paths())?;
            if let Some(k) = sample_per_label {
                let all: Vec<_> = bundle.examples.values().cloned().collect();
                bundle.examples = stratified_sample(&all, k, seed)
                    .into_iter()
                    .map(|e| (e.id.clone(), e))
                    .collect();
                let kept = &bundle.examples;
                let source = |id: &str| split_derived_id(id).map_or(id, |(src, _)| src).to_owned();
                for preds in bundle.predictions.values_mut() {
                    preds.retain(|id, _| kept.contains_key(&source(id)));
                }
                for scores in bundle.scores.values_mut() {
                    scores.retain(|id, _| kept.contains_key(id));
                }
                bundle.embeddings.retain(|id, _| kept.contains_key(id));
            }
            write_bundle(&bundle, &out)?;
            println!("{}", serde_json::to_string_pretty(&bundle.counts())?);
            Ok(0)
        }
        Command::Synth { n, seed, out } => {
            let s = synth_generate(n, seed);
            write_bundle(&s.bundle, &out)?;
            println!("{}: {} qa, {} verdict examples", out.display(), s.qa_ids.len(), s.verdict_ids.len());
            Ok(0)
        }
        Command::Serialize {
            tables,
            examples,
            format,
            out,
        } => {
            let bundle = ingest(&BundlePaths {
                tables,
                examples,
                ..BundlePaths::default()
            })?;
            let lines: Vec<SerializedLine> = bundle
                .examples
                .values()
                .map(|ex| SerializedLine {
                    id: &ex.id,
                    format,
                    text: emit(bundle.table_of(ex), format),
                })
                .collect();
            fs::write(&out, jsonl::to_string(&lines)).with_context(|| format!("writing {}", out.display()))?;
            println!("{}: {} lines", out.display(), lines.len());
            Ok(0)
        }
        Command::Probe(a) => run_stages(&a, only(|s| s.probes = true)),
        Command::Retrieve(a) => run_stages(
            &a,
            only(|s| {
                s.retrieval = true;
                s.evidence = true;
            }),
        ),
        Command::Prune(a) => write_requests(&a, true),
        Command::Requests(a) => write_requests(&a, false),
        Command::Evaluate(a) => run_stages(&a, Stages::ALL),
        Command::Evidence(a) => run_stages(&a, only(|s| s.evidence = true)),
        Command::SqlAudit(a) => run_stages(&a, only(|s| s.sql = true)),
        Command::Attribute(a) => run_stages(
            &a,
            only(|s| {
                s.attribution = true;
                s.sql = true;
                s.retrieval = true;
                s.evidence = true;
            }),
        ),
        Command::Govern(a) => run_stages(&a, only(|s| s.governance = true)),
        Command::Report { run, out } => {
            let report: Report = read_json(&run.join("report.json"))?;
            let out = out.unwrap_or(run);
            fs::create_dir_all(out.join("plots"))?;
            fs::write(out.join("report.md"), render_markdown(&report))?;
            for (name, body) in emit_plots(&report) {
                fs::write(out.join("plots").join(name), body)?;
            }
            println!("{}", out.join("report.md").display());
            Ok(0)
        }
        Command::Verify { run } => {
            let v = verify(&run)?;
            for c in &v.checks {
                println!("{} {}: {}", if c.ok { "ok  " } else { "FAIL" }, c.name, c.detail);
            }
            if v.checks.is_empty() {
                bail!("{}: report has no sections to verify", run.display());
            }
            Ok(if v.ok() { 0 } else { EXIT_SCHEMA })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_SCHEMA)
        }
    }
}
