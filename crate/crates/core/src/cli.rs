//! Command-line front end.
//!
//! Every command reads one [`RunConfig`] (a TOML file, the catalog's stored
//! copy, or the defaults) and applies `--set section.key=value` overrides
//! before running.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use crate::cluster::{bisecting_kmeans, elbow_curve};
use crate::config::RunConfig;
use crate::corpus::{generate_corpus, read_corpus, write_corpus};
use crate::embed::{Embedder, HashedNgramEmbedder};
use crate::error::Error;
use crate::eval::{dump_instance, prepare, probe_sweep, read_split, run_comparison, train_experts, write_catalog, EvalContext, Method};
use crate::lm::{generate_with, Lm};
use crate::merge::merge_adapters;
use crate::router::route;
use crate::store::{latency_sweep, load_active, ExpertCatalog, FsReader};

/// Resolved configuration stored next to every catalog.
pub const CATALOG_CONFIG: &str = "config.toml";

#[derive(Debug, Parser)]
#[command(name = "ttmm", version, about = "Clustered LoRA experts merged per prompt")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set cluster.k=16`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic multi-domain corpus, one document per line.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Optional `domain,topic` label file aligned with the corpus.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Cluster a corpus, train one expert per cluster and write a catalog.
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Hold out per-cluster test and tuning documents (needed by `eval`).
        #[arg(long)]
        holdout: bool,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Evaluate every method on the held-out test documents.
    Eval {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Directory receiving report.json and report.csv.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated subset, e.g. `base,finetune,ttmm,merge-10`.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
    },
    /// Time select/load/merge over a grid of sparsities and temperatures.
    Bench {
        #[arg(long)]
        catalog: PathBuf,
        /// Corpus whose document prefixes serve as queries.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_delimiter = ',')]
        taus: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
        #[arg(long)]
        repetitions: Option<usize>,
        /// Optional JSON output of the table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample text after a prompt.
    Generate {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long, default_value_t = 100)]
        n_tokens: usize,
        /// `base`, `merged` or `expert-<id>`.
        #[arg(long, default_value = "merged")]
        method: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check the neighbourhood-training bound on random small instances.
    Probe {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where violating instances are written.
        #[arg(long, default_value = ".")]
        dump_dir: PathBuf,
    },
    /// k-means loss per K and a few characteristic n-grams per cluster.
    ClusterReport {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32")]
        k_list: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        top: usize,
    },
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `section.key=value` overrides to a configuration.
pub fn apply_overrides(cfg: RunConfig, overrides: &[String]) -> anyhow::Result<RunConfig> {
    let mut root = toml::Value::try_from(&cfg)?;
    for o in overrides {
        let (path, raw) = o.split_once('=').with_context(|| format!("override {o:?} is not KEY=VALUE"))?;
        let keys: Vec<&str> = path.trim().split('.').collect();
        let mut node = &mut root;
        for key in &keys[..keys.len() - 1] {
            let table = node.as_table_mut().with_context(|| format!("{path}: {key} is not a section"))?;
            node = table.entry(key.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        }
        let table = node.as_table_mut().with_context(|| format!("{path}: not a section"))?;
        table.insert(keys[keys.len() - 1].to_string(), parse_value(raw.trim()));
    }
    let cfg: RunConfig = root.try_into().context("invalid configuration override")?;
    Ok(cfg)
}

fn resolve_unchecked(cli_config: Option<&Path>, fallback: Option<&Path>, overrides: &[String]) -> anyhow::Result<RunConfig> {
    let cfg = match (cli_config, fallback) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(p)) if p.exists() => RunConfig::load(p)?,
        _ => RunConfig::default(),
    };
    apply_overrides(cfg, overrides)
}

fn resolve(cli_config: Option<&Path>, fallback: Option<&Path>, overrides: &[String]) -> anyhow::Result<RunConfig> {
    let cfg = resolve_unchecked(cli_config, fallback, overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn check_embedder(catalog: &ExpertCatalog, embedder: &HashedNgramEmbedder) -> anyhow::Result<()> {
    if catalog.manifest().embedder != embedder.fingerprint() {
        bail!(
            "store: catalog was built with embedder {:?}, configuration gives {:?}",
            catalog.manifest().embedder,
            embedder.fingerprint()
        );
    }
    Ok(())
}

/// Distinctive character n-grams of a cluster: frequent in the cluster and
/// rare elsewhere.
fn top_ngrams(docs: &[String], members: &[usize], order: usize, top: usize, corpus_counts: &HashMap<String, usize>) -> Vec<String> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for &i in members {
        let chars: Vec<char> = docs[i].chars().collect();
        for w in chars.windows(order) {
            *counts.entry(w.iter().collect()).or_default() += 1;
        }
    }
    let mut scored: Vec<(f64, String)> = counts
        .into_iter()
        .map(|(g, c)| {
            let total = corpus_counts.get(&g).copied().unwrap_or(c) as f64;
            (c as f64 * (c as f64 / total), g)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    scored.into_iter().take(top).map(|(_, g)| g).collect()
}

pub fn run(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    let cfg_path = cli.config.as_deref();
    match cli.command {
        Command::Synth { out: path, labels } => {
            let cfg = resolve(cfg_path, None, &cli.overrides)?;
            let docs = generate_corpus(&cfg.corpus)?;
            let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
            write_corpus(&path, &texts)?;
            if let Some(lp) = labels {
                let text: String = docs.iter().map(|d| format!("{},{}\n", d.domain, d.topic)).collect();
                std::fs::write(&lp, text).with_context(|| format!("writing {}", lp.display()))?;
            }
            writeln!(out, "wrote {} documents to {}", docs.len(), path.display())?;
        }
        Command::Build { corpus, out: dir, holdout, k } => {
            let mut cfg = resolve_unchecked(cfg_path, None, &cli.overrides)?;
            if let Some(k) = k {
                cfg.cluster.k = k;
            }
            let docs = read_corpus(&corpus)?;
            if cfg.cluster.k > docs.len() {
                return Err(Error::TooManyClusters { k: cfg.cluster.k, n: docs.len() }.into());
            }
            cfg.validate()?;
            let prepared = prepare(&docs, &cfg, holdout)?;
            let experts = train_experts(&docs, &prepared, &cfg)?;
            let catalog = write_catalog(&dir, &experts, &prepared, &cfg)?;
            let cp = dir.join(CATALOG_CONFIG);
            std::fs::write(&cp, cfg.to_toml()?).with_context(|| format!("writing {}", cp.display()))?;
            writeln!(out, "built {} experts from {} documents into {}", catalog.k(), docs.len(), dir.display())?;
            writeln!(out, "cluster sizes: {:?}", experts.sizes)?;
        }
        Command::Eval { catalog, corpus, out: dir, methods } => {
            let mut cfg = resolve(cfg_path, Some(&catalog.join(CATALOG_CONFIG)), &cli.overrides)?;
            if let Some(m) = methods {
                cfg.eval.methods = m;
            }
            let cat = ExpertCatalog::open(&catalog)?;
            check_embedder(&cat, &HashedNgramEmbedder::new(cfg.embedder.clone())?)?;
            let docs = read_corpus(&corpus)?;
            let prepared = read_split(&catalog, &docs, &cfg)?;
            let base = cat.load_base()?;
            let adapters = cat.load_all()?;
            let ctx = EvalContext {
                docs: &docs,
                prepared: &prepared,
                base: &base,
                adapters: &adapters,
                centroids: cat.centroids(),
            };
            let report = run_comparison(&ctx, &cfg)?;
            report.write(&dir)?;
            writeln!(out, "{:<14}{:>12}{:>10}", "method", "perplexity", "active")?;
            for r in &report.methods {
                writeln!(out, "{:<14}{:>12.4}{:>10.2}", r.method.to_string(), r.perplexity, r.mean_active)?;
            }
            writeln!(out, "beta {}  diagonal {:.3}", report.beta, report.diagonal_fraction)?;
            writeln!(out, "report written to {}", dir.display())?;
        }
        Command::Bench { catalog, corpus, taus, betas, repetitions, out: json } => {
            let mut cfg = resolve(cfg_path, Some(&catalog.join(CATALOG_CONFIG)), &cli.overrides)?;
            if let Some(t) = taus {
                cfg.bench.taus = t;
            }
            if let Some(b) = betas {
                cfg.bench.betas = b;
            }
            if let Some(r) = repetitions {
                cfg.bench.repetitions = r;
            }
            cfg.validate()?;
            let cat = ExpertCatalog::open(&catalog)?;
            let embedder = HashedNgramEmbedder::new(cfg.embedder.clone())?;
            check_embedder(&cat, &embedder)?;
            let docs = read_corpus(&corpus)?;
            let queries = docs
                .iter()
                .take(cfg.bench.n_queries)
                .map(|d| embedder.embed(cfg.protocol.query(d)))
                .collect::<crate::Result<Vec<_>>>()?;
            let rows = latency_sweep(&cat, &queries, &cfg.bench.taus, &cfg.bench.betas, cfg.bench.repetitions, &FsReader)?;
            writeln!(out, "{:>8}{:>8}{:>6}{:>12}{:>12}{:>12}{:>10}{:>12}", "tau", "beta", "reps", "select_us", "load_us", "merge_us", "active", "bytes")?;
            for r in &rows {
                writeln!(
                    out,
                    "{:>8}{:>8}{:>6}{:>12.1}{:>12.1}{:>12.1}{:>10.2}{:>12.0}",
                    r.tau,
                    r.beta,
                    r.repetitions,
                    r.select_median.as_secs_f64() * 1e6,
                    r.load_median.as_secs_f64() * 1e6,
                    r.merge_median.as_secs_f64() * 1e6,
                    r.n_active_mean,
                    r.bytes_loaded_mean
                )?;
            }
            if let Some(p) = json {
                std::fs::write(&p, serde_json::to_string_pretty(&rows)?).with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::Generate { catalog, prompt, n_tokens, method, seed } => {
            let cfg = resolve(cfg_path, Some(&catalog.join(CATALOG_CONFIG)), &cli.overrides)?;
            let cat = ExpertCatalog::open(&catalog)?;
            let base = cat.load_base()?;
            let text = match method.as_str() {
                "base" => generate_with(&Lm::new(&base, None)?, &prompt, n_tokens, seed)?,
                "merged" => {
                    let embedder = HashedNgramEmbedder::new(cfg.embedder.clone())?;
                    check_embedder(&cat, &embedder)?;
                    let w = route(&embedder.embed(&prompt)?, cat.centroids(), &cfg.routing)?;
                    let (adapters, _) = load_active(&cat, &w, &FsReader)?;
                    let merged = merge_adapters(&w, &adapters)?;
                    generate_with(&merged.model(&base)?, &prompt, n_tokens, seed)?
                }
                m => {
                    let id: usize = m
                        .strip_prefix("expert-")
                        .and_then(|s| s.parse().ok())
                        .with_context(|| format!("unknown generation method {m:?} (base, merged, expert-<id>)"))?;
                    let adapter = cat.load_expert(id)?;
                    generate_with(&Lm::new(&base, Some(&adapter))?, &prompt, n_tokens, seed)?
                }
            };
            writeln!(out, "{text}")?;
        }
        Command::Probe { n, seed, dump_dir } => {
            let results = probe_sweep(n, seed)?;
            let mut violations = Vec::new();
            let mut worst = 0.0f64;
            for (inst, o) in &results {
                if o.rhs > 0.0 {
                    worst = worst.max(o.lhs / o.rhs);
                }
                if !o.holds {
                    let p = dump_dir.join(format!("probe_violation_{}.json", inst.seed));
                    dump_instance(&p, inst, o)?;
                    violations.push(p);
                }
            }
            writeln!(out, "bound held on {}/{} instances (largest lhs/rhs {:.4})", n - violations.len(), n, worst)?;
            if !violations.is_empty() {
                bail!("eval: bound violated on {} instance(s), dumped to {:?}", violations.len(), violations);
            }
        }
        Command::ClusterReport { corpus, k_list, top } => {
            let cfg = resolve(cfg_path, None, &cli.overrides)?;
            let docs = read_corpus(&corpus)?;
            let embedder = HashedNgramEmbedder::new(cfg.embedder.clone())?;
            let emb = embedder.embed_all(&docs)?;
            let mut ks: Vec<usize> = k_list.into_iter().filter(|&k| k <= docs.len()).collect();
            ks.sort_unstable();
            ks.dedup();
            writeln!(out, "{:>6}{:>16}", "K", "kmeans_loss")?;
            for (k, loss) in elbow_curve(&emb, &ks, cfg.cluster.seed)? {
                writeln!(out, "{k:>6}{loss:>16.4}")?;
            }
            let assignment = bisecting_kmeans(&emb, cfg.cluster.k, cfg.cluster.seed)?;
            let order = cfg.embedder.ngram_orders.iter().copied().max().unwrap_or(3);
            let mut corpus_counts = HashMap::new();
            for d in &docs {
                let chars: Vec<char> = d.chars().collect();
                for w in chars.windows(order) {
                    *corpus_counts.entry(w.iter().collect::<String>()).or_default() += 1;
                }
            }
            for (c, members) in assignment.all_members().iter().enumerate() {
                let titles = top_ngrams(&docs, members, order, top, &corpus_counts);
                let shown: Vec<String> = titles.iter().map(|t| format!("{t:?}")).collect();
                writeln!(out, "cluster {c:>3} ({:>4} docs): {}", members.len(), shown.join(" "))?;
            }
        }
    }
    Ok(())
}
