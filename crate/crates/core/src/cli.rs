//! Command-line interface: `simulate`, `fit`, `align`, `diagnose`,
//! `export-flow`, `experiment` and `perplexity`.

use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::alignment::Method;
use crate::corpus::{
    load_counts, load_ensemble, save_counts, save_ensemble, CorpusError, CountFormat, ModelRecord,
};
use crate::experiment::{run_experiment, ExperimentConfig, Mechanism};
use crate::lda::{fit_ensemble, perplexity, GibbsConfig, LdaHyperparams, TopicModel};
use crate::report::{analyze, scores_csv, summarize, AlignmentDocument};
use crate::rng::SeededRng;
use crate::simulate::{
    sim_background, sim_lda, sim_null, sim_strain_switching, BackgroundSimSpec, LdaSimSpec, LdaTruth,
    StrainSwitchSpec,
};
use crate::svg::render_flow;
use crate::Error;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "TOPIC_ALIGN_THREADS";

#[derive(Debug, Parser)]
#[command(name = "topic-align", version, about = "Fit LDA ensembles across K, align topics and score their stability")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic corpora (and their generating parameters).
    Simulate(SimulateArgs),
    /// Fit one LDA model per K on a count matrix.
    Fit(FitArgs),
    /// Align all model pairs of an ensemble and score every topic.
    Align(AlignArgs),
    /// Write the per-topic scores table and print a per-K summary.
    Diagnose(DiagnoseArgs),
    /// Render an alignment as an SVG flow diagram.
    ExportFlow(ExportFlowArgs),
    /// Run a replicated simulation sweep from a JSON config.
    Experiment(ExperimentArgs),
    /// Held-out perplexity of every model in an ensemble.
    Perplexity(PerplexityArgs),
}

#[derive(Debug, Args)]
pub struct GibbsArgs {
    #[arg(long, default_value_t = 500)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value_t = 2)]
    pub thin: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl GibbsArgs {
    fn config(&self) -> GibbsConfig {
        GibbsConfig { burn_in: self.burn_in, samples: self.samples, thin: self.thin, rng: SeededRng::new(self.seed) }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value = "lda")]
    pub mechanism: Mechanism,
    #[arg(long, default_value_t = 250)]
    pub n: usize,
    #[arg(long, default_value_t = 1000)]
    pub d: usize,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 10_000)]
    pub doc_total: u64,
    #[arg(long, default_value_t = 0.5)]
    pub lambda_gamma: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lambda_beta: f64,
    /// Mixing weight of the LDA mean (background mechanism).
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_nu: f64,
    /// Variants per topic, comma separated (strain mechanism).
    #[arg(long, default_value = "2,2,1,1,1", value_delimiter = ',')]
    pub replicates_per_topic: Vec<usize>,
    #[arg(long, default_value_t = 230)]
    pub subset_size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lambda_s: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
    #[arg(long, default_value = "csv")]
    pub format: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub counts: PathBuf,
    /// Inclusive range such as `2..10`.
    #[arg(long, default_value = "2..10")]
    pub k_range: String,
    #[arg(long, default_value_t = 0.5)]
    pub lambda_gamma: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lambda_beta: f64,
    #[command(flatten)]
    pub gibbs: GibbsArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub ensemble: PathBuf,
    #[arg(long, default_value = "product")]
    pub method: Method,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub alignment: PathBuf,
    /// Scores table destination.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional JSON summary destination; the summary is always printed.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportFlowArgs {
    #[arg(long)]
    pub alignment: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// JSON experiment config; omitted fields take their defaults.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PerplexityArgs {
    #[arg(long)]
    pub ensemble: PathBuf,
    /// Held-out count matrix.
    #[arg(long)]
    pub counts: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parse `a..b` or `a..=b` (both inclusive) or a single K.
pub fn parse_k_range(text: &str) -> Result<RangeInclusive<usize>, Error> {
    let bad = || Error::Usage(format!("invalid K range `{text}` (expected e.g. 2..10)"));
    let (lo, hi) = match text.split_once("..") {
        Some((lo, hi)) => (lo, hi.strip_prefix('=').unwrap_or(hi)),
        None => (text, text),
    };
    let lo: usize = lo.trim().parse().map_err(|_| bad())?;
    let hi: usize = hi.trim().parse().map_err(|_| bad())?;
    if lo == 0 || lo > hi {
        return Err(bad());
    }
    Ok(lo..=hi)
}

fn parse_format(text: &str) -> Result<CountFormat, Error> {
    match text {
        "csv" => Ok(CountFormat::Csv),
        "json" => Ok(CountFormat::Json),
        other => Err(Error::Usage(format!("unknown count format `{other}` (expected csv or json)"))),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Error> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|source| CorpusError::IoFailure { path: parent.display().to_string(), source })?;
    }
    std::fs::write(path, contents)
        .map_err(|source| CorpusError::IoFailure { path: path.display().to_string(), source })?;
    Ok(())
}

fn truth_json(truth: &LdaTruth, spec: &LdaSimSpec) -> Result<String, Error> {
    let model = TopicModel {
        hyper: LdaHyperparams::new(spec.n_topics, spec.lambda_gamma, spec.lambda_beta)?,
        beta: truth.beta.clone(),
        gamma: truth.gamma.clone(),
        log_likelihood_trace: Vec::new(),
    };
    Ok(serde_json::to_string(&[ModelRecord::from_model(&model, None)]).expect("records always serialize"))
}

#[derive(Serialize)]
struct VariantFile<'a> {
    variants: &'a [Vec<Vec<f64>>],
    subsets: &'a [Vec<usize>],
    choices: &'a [Vec<usize>],
}

fn simulate(args: &SimulateArgs) -> Result<(), Error> {
    if args.replicates == 0 {
        return Err(Error::Usage("replicates must be at least 1".into()));
    }
    let format = parse_format(&args.format)?;
    let ext = match format {
        CountFormat::Csv => "csv",
        CountFormat::Json => "json",
    };
    std::fs::create_dir_all(&args.out)
        .map_err(|source| CorpusError::IoFailure { path: args.out.display().to_string(), source })?;
    for r in 0..args.replicates {
        let rng = SeededRng::new(args.seed).path(&[r as u64, 0]);
        let spec = LdaSimSpec {
            n_samples: args.n,
            n_features: args.d,
            n_topics: args.k,
            lambda_gamma: args.lambda_gamma,
            lambda_beta: args.lambda_beta,
            doc_total: args.doc_total,
            rng,
        };
        let corpus_path = args.out.join(format!("corpus_{r:03}.{ext}"));
        let truth_path = args.out.join(format!("truth_{r:03}.json"));
        match args.mechanism {
            Mechanism::Null => {
                let counts = sim_null(args.n, args.d, args.doc_total, rng)?;
                save_counts(&counts, &corpus_path, format)?;
            }
            Mechanism::Lda => {
                let sim = sim_lda(&spec)?;
                save_counts(&sim.counts, &corpus_path, format)?;
                write_file(&truth_path, &truth_json(&sim.truth, &spec)?)?;
            }
            Mechanism::Background => {
                let bg = BackgroundSimSpec { base: spec.clone(), alpha: args.alpha, lambda_nu: args.lambda_nu };
                let sim = sim_background(&bg)?;
                save_counts(&sim.counts, &corpus_path, format)?;
                write_file(&truth_path, &truth_json(&sim.truth, &spec)?)?;
            }
            Mechanism::Strain => {
                let st = StrainSwitchSpec {
                    base: spec.clone(),
                    replicates_per_topic: args.replicates_per_topic.clone(),
                    subset_size: args.subset_size,
                    lambda_s: args.lambda_s,
                };
                let sim = sim_strain_switching(&st)?;
                save_counts(&sim.counts, &corpus_path, format)?;
                write_file(&truth_path, &truth_json(&sim.truth.base, &spec)?)?;
                let t = &sim.truth;
                let variants = VariantFile { variants: &t.variants, subsets: &t.subsets, choices: &t.choices };
                let text = serde_json::to_string(&variants).expect("variants always serialize");
                write_file(&args.out.join(format!("variants_{r:03}.json")), &text)?;
            }
        }
    }
    Ok(())
}

fn fit(args: &FitArgs) -> Result<(), Error> {
    let range = parse_k_range(&args.k_range)?;
    let counts = load_counts(&args.counts, CountFormat::from_path(&args.counts))?;
    let ensemble = fit_ensemble(&counts, range, args.lambda_gamma, args.lambda_beta, &args.gibbs.config())?;
    save_ensemble(&ensemble, &args.out)?;
    Ok(())
}

fn align(args: &AlignArgs) -> Result<(), Error> {
    let ensemble = load_ensemble(&args.ensemble)?;
    let analysis = analyze(&ensemble, args.method)?;
    AlignmentDocument::new(&ensemble, &analysis).save(&args.out)?;
    Ok(())
}

fn diagnose(args: &DiagnoseArgs) -> Result<String, Error> {
    let doc = AlignmentDocument::load(&args.alignment)?;
    doc.to_graph()?;
    write_file(&args.out, &scores_csv(&doc))?;
    let summary = serde_json::to_string_pretty(&summarize(&doc)).expect("summaries always serialize");
    if let Some(path) = &args.summary {
        write_file(path, &summary)?;
    }
    Ok(summary)
}

fn export_flow(args: &ExportFlowArgs) -> Result<(), Error> {
    let doc = AlignmentDocument::load(&args.alignment)?;
    doc.to_graph()?;
    write_file(&args.out, &render_flow(&doc))
}

fn experiment(args: &ExperimentArgs) -> Result<String, Error> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|source| CorpusError::IoFailure { path: args.config.display().to_string(), source })?;
    let mut config: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| Error::Usage(format!("invalid experiment config: {e}")))?;
    if let Some(r) = args.replicates {
        config.replicates = r;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    let report = run_experiment(&config, Some(&args.out))?;
    Ok(report.to_csv())
}

fn perplexity_table(args: &PerplexityArgs) -> Result<String, Error> {
    let ensemble = load_ensemble(&args.ensemble)?;
    let heldout = load_counts(&args.counts, CountFormat::from_path(&args.counts))?;
    let cfg = GibbsConfig { rng: SeededRng::new(args.seed), ..GibbsConfig::default() };
    let mut out = String::from("k,perplexity\n");
    for model in &ensemble.models {
        let p = perplexity(model, &heldout, &cfg)?;
        out.push_str(&format!("{},{}\n", model.k(), p));
    }
    Ok(out)
}

/// Execute a parsed command; returns text for standard output.
pub fn run(cli: &Cli) -> Result<String, Error> {
    match &cli.command {
        Command::Simulate(a) => simulate(a).map(|_| String::new()),
        Command::Fit(a) => fit(a).map(|_| String::new()),
        Command::Align(a) => align(a).map(|_| String::new()),
        Command::Diagnose(a) => diagnose(a),
        Command::ExportFlow(a) => export_flow(a).map(|_| String::new()),
        Command::Experiment(a) => experiment(a),
        Command::Perplexity(a) => perplexity_table(a),
    }
}

/// Size the global worker pool from [`THREADS_ENV`] when set.
pub fn configure_threads() -> Result<(), Error> {
    let Ok(value) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Usage(format!("{THREADS_ENV} must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Usage(format!("cannot size thread pool: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_ranges() {
        assert_eq!(parse_k_range("2..10").unwrap(), 2..=10);
        assert_eq!(parse_k_range("2..=4").unwrap(), 2..=4);
        assert_eq!(parse_k_range("7").unwrap(), 7..=7);
        assert!(parse_k_range("5..2").is_err());
        assert!(parse_k_range("0..3").is_err());
        assert!(parse_k_range("a..b").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
