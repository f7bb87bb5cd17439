//! End-to-end build and evaluation over a corpus.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::baselines::{global_finetune, ttt_adapt};
use super::diagnostics::{centroid_vs_sum_selection, diagonal_row_min_fraction, expert_cluster_matrix, pass_at_n, selection_agreement};
use super::protocol::{split_holdout, Split};
use crate::cluster::{bisecting_kmeans, compute_centroids, ClusterAssignment};
use crate::config::RunConfig;
use crate::embed::{Embedder, EmbeddingVector, HashedNgramEmbedder};
use crate::error::{Error, Result};
use crate::lm::{document_nll, pretrain_base, train_adapter, BaseParams, Lm, LoraAdapter, SequenceModel, Vocab};
use crate::merge::{ensemble, merge_adapters};
use crate::router::{route, route_fixed_n, weights_dawin, weights_sift, weights_uniform_topn, MergeWeights, RoutingConfig};
use crate::store::ExpertCatalog;

/// File next to the catalog manifest recording the clustering and split.
pub const SPLIT_FILE: &str = "split.json";

/// A row of the evaluation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Base,
    Finetune,
    /// Sparse-softmax routing at the configured sparsity.
    Ttmm,
    /// Merge of the `n` closest experts.
    Merge(usize),
    /// Prediction-space mixture of the `n` closest experts.
    Ensemble(usize),
    /// Uniform merge of the `n` closest experts.
    Uniform(usize),
    Sift,
    /// Entropy-weighted ensemble.
    Dawin,
    /// Single expert chosen by summed distance to its members.
    SumSelect,
    Ttt,
}

impl Method {
    /// Every row of the default table.
    pub fn table() -> Vec<Method> {
        use Method::*;
        vec![
            Base,
            Finetune,
            Ttmm,
            Merge(1),
            Merge(3),
            Merge(10),
            Ensemble(1),
            Ensemble(3),
            Ensemble(10),
            Uniform(3),
            Sift,
            Dawin,
            SumSelect,
            Ttt,
        ]
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Base => write!(f, "base"),
            Method::Finetune => write!(f, "finetune"),
            Method::Ttmm => write!(f, "ttmm"),
            Method::Merge(n) => write!(f, "merge-{n}"),
            Method::Ensemble(n) => write!(f, "ensemble-{n}"),
            Method::Uniform(n) => write!(f, "uniform-{n}"),
            Method::Sift => write!(f, "sift"),
            Method::Dawin => write!(f, "dawin"),
            Method::SumSelect => write!(f, "sum-select"),
            Method::Ttt => write!(f, "ttt"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown method {s:?}"));
        Ok(match s {
            "base" => Method::Base,
            "finetune" => Method::Finetune,
            "ttmm" => Method::Ttmm,
            "sift" => Method::Sift,
            "dawin" => Method::Dawin,
            "sum-select" => Method::SumSelect,
            "ttt" => Method::Ttt,
            _ => {
                let (kind, n) = s.rsplit_once('-').ok_or_else(bad)?;
                let n: usize = n.parse().map_err(|_| bad())?;
                match kind {
                    "merge" => Method::Merge(n),
                    "ensemble" => Method::Ensemble(n),
                    "uniform" => Method::Uniform(n),
                    _ => return Err(bad()),
                }
            }
        })
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

/// Embeddings, clustering and (optionally) the evaluation split.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub embeddings: Vec<EmbeddingVector>,
    pub assignment: ClusterAssignment,
    pub split: Option<Split>,
}

impl Prepared {
    /// Documents experts are trained on: the train split, or everything.
    pub fn train_ids(&self) -> Vec<usize> {
        match &self.split {
            Some(s) => s.train.clone(),
            None => (0..self.embeddings.len()).collect(),
        }
    }
}

pub fn prepare(docs: &[String], cfg: &RunConfig, holdout: bool) -> Result<Prepared> {
    let embedder = HashedNgramEmbedder::new(cfg.embedder.clone())?;
    let embeddings = embedder.embed_all(docs)?;
    let assignment = bisecting_kmeans(&embeddings, cfg.cluster.k, cfg.cluster.seed)?;
    let split = if holdout {
        Some(split_holdout(&assignment, &cfg.protocol)?)
    } else {
        None
    };
    Ok(Prepared { embeddings, assignment, split })
}

/// A pretrained base with one adapter and centroid per cluster.
#[derive(Clone, Debug)]
pub struct Experts {
    pub base: BaseParams,
    pub adapters: Vec<LoraAdapter>,
    pub centroids: Vec<EmbeddingVector>,
    pub sizes: Vec<usize>,
}

/// Pretrains the base on the training documents, then trains one adapter per
/// cluster. Centroids are computed from training documents only.
pub fn train_experts(docs: &[String], prepared: &Prepared, cfg: &RunConfig) -> Result<Experts> {
    let train = prepared.train_ids();
    let labels: Vec<usize> = train.iter().map(|&d| prepared.assignment.label(d)).collect();
    let k = prepared.assignment.k();
    let sub = ClusterAssignment::new(labels, k)?;
    let train_emb: Vec<EmbeddingVector> = train.iter().map(|&d| prepared.embeddings[d].clone()).collect();
    let cents = compute_centroids(&train_emb, &sub)?;

    let train_docs: Vec<&str> = train.iter().map(|&d| docs[d].as_str()).collect();
    let base = pretrain_base(Vocab::from_texts(docs), &train_docs, &cfg.pretrain)?;
    let adapters = sub
        .all_members()
        .iter()
        .enumerate()
        .map(|(c, members)| {
            let cluster_docs: Vec<&str> = members.iter().map(|&i| train_docs[i]).collect();
            let tc = crate::lm::TrainConfig {
                seed: cfg.expert.seed.wrapping_add(c as u64),
                ..cfg.expert.clone()
            };
            train_adapter(&base, &cluster_docs, &cfg.lora, &tc)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Experts {
        base,
        adapters,
        centroids: cents.centroids,
        sizes: cents.sizes,
    })
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    labels: Vec<usize>,
    k: usize,
    split: Option<Split>,
}

/// Writes the catalog plus the clustering and split it was built with.
pub fn write_catalog(dir: &Path, experts: &Experts, prepared: &Prepared, cfg: &RunConfig) -> Result<ExpertCatalog> {
    let embedder = HashedNgramEmbedder::new(cfg.embedder.clone())?;
    let catalog = ExpertCatalog::write(dir, &experts.base, &experts.adapters, &experts.centroids, &experts.sizes, &embedder.fingerprint())?;
    let file = SplitFile {
        labels: prepared.assignment.labels().to_vec(),
        k: prepared.assignment.k(),
        split: prepared.split.clone(),
    };
    let path = dir.join(SPLIT_FILE);
    let text = serde_json::to_string(&file).map_err(|e| Error::Catalog(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(catalog)
}

/// Restores the clustering and split recorded next to a catalog.
pub fn read_split(dir: &Path, docs: &[String], cfg: &RunConfig) -> Result<Prepared> {
    let path = dir.join(SPLIT_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let file: SplitFile = serde_json::from_str(&text).map_err(|e| Error::Catalog(e.to_string()))?;
    if file.labels.len() != docs.len() {
        return Err(Error::Catalog(format!(
            "catalog was built on {} documents, corpus has {}",
            file.labels.len(),
            docs.len()
        )));
    }
    let embedder = HashedNgramEmbedder::new(cfg.embedder.clone())?;
    Ok(Prepared {
        embeddings: embedder.embed_all(docs)?,
        assignment: ClusterAssignment::new(file.labels, file.k)?,
        split: file.split,
    })
}

/// Pooled perplexity of one method over the test documents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub perplexity: f64,
    pub n_tokens: usize,
    pub mean_active: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: RunConfig,
    pub k: usize,
    pub n_test: usize,
    pub beta: f64,
    /// Holdout perplexity of sparse-softmax routing for every tried beta.
    pub beta_curve: Vec<(f64, f64)>,
    pub methods: Vec<MethodResult>,
    /// `matrix[k][j]`: perplexity of expert `k` on the holdout of cluster `j`.
    pub matrix: Vec<Vec<f64>>,
    pub diagonal_fraction: f64,
    pub pass_at_n: Vec<(usize, f64)>,
    pub selection_agreement: f64,
    pub timings: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn perplexity(&self, m: Method) -> Option<f64> {
        self.methods.iter().find(|r| r.method == m).map(|r| r.perplexity)
    }

    /// Flat `section,key,subkey,value` table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("section,key,subkey,value\n");
        for r in &self.methods {
            out.push_str(&format!("perplexity,{},,{}\n", r.method, r.perplexity));
            out.push_str(&format!("active,{},,{}\n", r.method, r.mean_active));
            out.push_str(&format!("seconds,{},,{}\n", r.method, r.seconds));
        }
        for (b, p) in &self.beta_curve {
            out.push_str(&format!("beta,{b},,{p}\n"));
        }
        for (k, row) in self.matrix.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                out.push_str(&format!("matrix,{k},{j},{v}\n"));
            }
        }
        for (n, v) in &self.pass_at_n {
            out.push_str(&format!("pass_at_n,{n},,{v}\n"));
        }
        out.push_str(&format!("diagonal_fraction,,,{}\n", self.diagonal_fraction));
        out.push_str(&format!("selection_agreement,,,{}\n", self.selection_agreement));
        for (k, v) in &self.timings {
            out.push_str(&format!("timing,{k},,{v}\n"));
        }
        out
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        let jp = dir.join("report.json");
        std::fs::write(&jp, json).map_err(|e| Error::io(&jp, e))?;
        let cp = dir.join("report.csv");
        std::fs::write(&cp, self.to_csv()).map_err(|e| Error::io(&cp, e))
    }
}

/// Everything a table run reads.
pub struct EvalContext<'a> {
    pub docs: &'a [String],
    pub prepared: &'a Prepared,
    pub base: &'a BaseParams,
    pub adapters: &'a [LoraAdapter],
    pub centroids: &'a [EmbeddingVector],
}

impl EvalContext<'_> {
    fn split(&self) -> Result<&Split> {
        self.prepared
            .split
            .as_ref()
            .ok_or_else(|| Error::Config("evaluation needs a catalog built with a holdout split".into()))
    }

    /// Up to `per_cluster` holdout document ids of each cluster.
    fn holdout(&self, per_cluster: usize) -> Result<Vec<Vec<usize>>> {
        Ok(self.split()?.holdout.iter().map(|h| h.iter().copied().take(per_cluster).collect()).collect())
    }
}

struct Scored {
    nll: f64,
    tokens: usize,
    active: usize,
}

fn score<M: SequenceModel + ?Sized>(model: &M, index: usize, doc: &str, skip: usize, active: usize) -> Result<Scored> {
    let (nll, tokens) = document_nll(model, index, doc, skip)?;
    Ok(Scored { nll, tokens, active })
}

fn pooled(scores: &[Scored]) -> (f64, usize, f64) {
    let nll: f64 = scores.iter().map(|s| s.nll).sum();
    let tokens: usize = scores.iter().map(|s| s.tokens).sum();
    let active = scores.iter().map(|s| s.active).sum::<usize>() as f64 / scores.len().max(1) as f64;
    ((nll / tokens.max(1) as f64).exp(), tokens, active)
}

/// Perplexity of routed merging at one temperature over a document set.
fn ttmm_perplexity(ctx: &EvalContext, ids: &[usize], routing: &RoutingConfig, cfg: &RunConfig, embedder: &HashedNgramEmbedder) -> Result<f64> {
    let mut scores = Vec::with_capacity(ids.len());
    for &d in ids {
        let doc = &ctx.docs[d];
        let q = embedder.embed(cfg.protocol.query(doc))?;
        let w = route(&q, ctx.centroids, routing)?;
        let merged = merge_adapters(&w, ctx.adapters)?;
        scores.push(score(&merged.model(ctx.base)?, d, doc, cfg.protocol.eval_prefix_len, w.n_active())?);
    }
    Ok(pooled(&scores).0)
}

/// Picks the temperature with the lowest holdout perplexity (first on ties).
pub fn tune_beta(ctx: &EvalContext, cfg: &RunConfig) -> Result<(f64, Vec<(f64, f64)>)> {
    let ids: Vec<usize> = ctx.holdout(cfg.eval.holdout_docs_per_cluster)?.concat();
    if ids.is_empty() || cfg.eval.beta_grid.is_empty() {
        return Ok((cfg.routing.beta, Vec::new()));
    }
    let embedder = HashedNgramEmbedder::new(cfg.embedder.clone())?;
    let mut curve = Vec::with_capacity(cfg.eval.beta_grid.len());
    for &beta in &cfg.eval.beta_grid {
        let routing = RoutingConfig { beta, ..cfg.routing.clone() };
        curve.push((beta, ttmm_perplexity(ctx, &ids, &routing, cfg, &embedder)?));
    }
    let best = curve.iter().fold(curve[0], |b, &c| if c.1 < b.1 { c } else { b });
    Ok((best.0, curve))
}

fn evaluate_method(
    ctx: &EvalContext,
    cfg: &RunConfig,
    method: Method,
    beta: f64,
    finetuned: Option<&LoraAdapter>,
    embedder: &HashedNgramEmbedder,
) -> Result<Vec<Scored>> {
    let split = ctx.split()?;
    let skip = cfg.protocol.eval_prefix_len;
    let train = &split.train;
    let train_docs: Vec<&str> = train.iter().map(|&d| ctx.docs[d].as_str()).collect();
    let train_emb: Vec<EmbeddingVector> = train.iter().map(|&d| ctx.prepared.embeddings[d].clone()).collect();
    let routing = RoutingConfig { beta, ..cfg.routing.clone() };
    let merged_score = |w: &MergeWeights, d: usize| -> Result<Scored> {
        let merged = merge_adapters(w, ctx.adapters)?;
        score(&merged.model(ctx.base)?, d, &ctx.docs[d], skip, w.n_active())
    };
    split
        .test
        .iter()
        .map(|&d| {
            let doc = &ctx.docs[d];
            let query_text = cfg.protocol.query(doc);
            let q = embedder.embed(query_text)?;
            match method {
                Method::Base => score(&Lm::new(ctx.base, None)?, d, doc, skip, 0),
                Method::Finetune => {
                    let ft = finetuned.ok_or_else(|| Error::Config("fine-tuned adapter missing".into()))?;
                    score(&Lm::new(ctx.base, Some(ft))?, d, doc, skip, 1)
                }
                Method::Ttmm => merged_score(&route(&q, ctx.centroids, &routing)?, d),
                Method::Merge(n) => merged_score(&route_fixed_n(&q, ctx.centroids, n, beta)?, d),
                Method::Uniform(n) => merged_score(&weights_uniform_topn(&q, ctx.centroids, n)?, d),
                Method::Sift => merged_score(&weights_sift(&q, ctx.centroids, &cfg.routing.sift)?, d),
                Method::SumSelect => {
                    let points: Vec<Vec<f64>> = train_emb.iter().map(EmbeddingVector::to_f64).collect();
                    let labels: Vec<usize> = train.iter().map(|&i| ctx.prepared.assignment.label(i)).collect();
                    let a = ClusterAssignment::new(labels, ctx.adapters.len())?;
                    let (_, by_sum) = centroid_vs_sum_selection(&q.to_f64(), &points, &a);
                    merged_score(&MergeWeights::one_hot(by_sum), d)
                }
                Method::Ensemble(n) => {
                    let w = route_fixed_n(&q, ctx.centroids, n, beta)?;
                    score(&ensemble(&w, ctx.adapters, ctx.base)?, d, doc, skip, w.n_active())
                }
                Method::Dawin => {
                    let w = weights_dawin(query_text, ctx.base, ctx.adapters, beta, cfg.routing.tau)?;
                    score(&ensemble(&w, ctx.adapters, ctx.base)?, d, doc, skip, w.n_active())
                }
                Method::Ttt => {
                    let a = ttt_adapt(ctx.base, &q, &train_emb, &train_docs, &cfg.ttt, &cfg.lora, &cfg.expert)?;
                    score(&Lm::new(ctx.base, Some(&a))?, d, doc, skip, 1)
                }
            }
        })
        .collect()
}

/// Fills every requested row of the evaluation table plus diagnostics.
pub fn run_comparison(ctx: &EvalContext, cfg: &RunConfig) -> Result<EvalReport> {
    let split = ctx.split()?;
    let k = ctx.adapters.len();
    if ctx.centroids.len() != k || split.test.len() != k {
        return Err(Error::Config(format!(
            "{k} experts, {} centroids, {} test documents",
            ctx.centroids.len(),
            split.test.len()
        )));
    }
    for &n in cfg.eval.methods.iter().filter_map(|m| match m {
        Method::Merge(n) | Method::Ensemble(n) | Method::Uniform(n) => Some(n),
        _ => None,
    }) {
        if n == 0 || n > k {
            return Err(Error::ExpertCountOutOfRange { n, k });
        }
    }
    let embedder = HashedNgramEmbedder::new(cfg.embedder.clone())?;
    let mut timings = BTreeMap::new();

    let t = Instant::now();
    let (beta, beta_curve) = tune_beta(ctx, cfg)?;
    timings.insert("tune_beta".to_string(), t.elapsed().as_secs_f64());

    let finetuned = if cfg.eval.methods.contains(&Method::Finetune) {
        let t = Instant::now();
        let train_docs: Vec<&str> = split.train.iter().map(|&d| ctx.docs[d].as_str()).collect();
        let a = global_finetune(ctx.base, &train_docs, &cfg.lora, &cfg.finetune)?;
        timings.insert("finetune_train".to_string(), t.elapsed().as_secs_f64());
        Some(a)
    } else {
        None
    };

    let mut methods = Vec::with_capacity(cfg.eval.methods.len());
    for &m in &cfg.eval.methods {
        let t = Instant::now();
        let scores = evaluate_method(ctx, cfg, m, beta, finetuned.as_ref(), &embedder)?;
        let (perplexity, n_tokens, mean_active) = pooled(&scores);
        methods.push(MethodResult {
            method: m,
            perplexity,
            n_tokens,
            mean_active,
            seconds: t.elapsed().as_secs_f64(),
        });
    }

    let t = Instant::now();
    let holdout = ctx.holdout(cfg.eval.holdout_docs_per_cluster)?;
    let holdout_docs: Vec<Vec<&str>> = holdout.iter().map(|ids| ids.iter().map(|&d| ctx.docs[d].as_str()).collect()).collect();
    let matrix = if holdout_docs.iter().all(|h| !h.is_empty()) {
        expert_cluster_matrix(ctx.base, ctx.adapters, &holdout_docs, cfg.protocol.eval_prefix_len)?
    } else {
        Vec::new()
    };
    timings.insert("matrix".to_string(), t.elapsed().as_secs_f64());

    let samples = holdout
        .iter()
        .enumerate()
        .flat_map(|(c, ids)| ids.iter().map(move |&d| (c, d)))
        .map(|(c, d)| Ok((embedder.embed(cfg.protocol.query(&ctx.docs[d]))?, c)))
        .collect::<Result<Vec<_>>>()?;
    let n_list: Vec<usize> = cfg.eval.pass_at.iter().copied().filter(|&n| n >= 1 && n <= k).collect();
    let pass = pass_at_n(ctx.centroids, &samples, &n_list)?;

    let test_queries = split
        .test
        .iter()
        .map(|&d| embedder.embed(cfg.protocol.query(&ctx.docs[d])))
        .collect::<Result<Vec<_>>>()?;
    let train_emb: Vec<EmbeddingVector> = split.train.iter().map(|&d| ctx.prepared.embeddings[d].clone()).collect();
    let train_labels: Vec<usize> = split.train.iter().map(|&d| ctx.prepared.assignment.label(d)).collect();
    let agreement = selection_agreement(&test_queries, &train_emb, &ClusterAssignment::new(train_labels, k)?);

    Ok(EvalReport {
        config: cfg.clone(),
        k,
        n_test: split.test.len(),
        beta,
        beta_curve,
        methods,
        diagonal_fraction: diagonal_row_min_fraction(&matrix),
        matrix,
        pass_at_n: pass,
        selection_agreement: agreement,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusConfig};
    use crate::lm::{LoraConfig, ModelConfig, PretrainConfig, TrainConfig};

    #[test]
    fn method_names_round_trip() {
        for m in Method::table() {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("merge-x".parse::<Method>().is_err());
        assert!("blend-3".parse::<Method>().is_err());
        let v: Vec<Method> = serde_json::from_str(r#"["ttmm","ensemble-3"]"#).unwrap();
        assert_eq!(v, vec![Method::Ttmm, Method::Ensemble(3)]);
    }

    fn tiny() -> (Vec<String>, RunConfig) {
        let corpus = CorpusConfig {
            n_domains: 2,
            topics_per_domain: 1,
            docs_per_domain: 12,
            min_len: 40,
            max_len: 60,
            ..CorpusConfig::default()
        };
        let docs = generate_corpus(&corpus).unwrap().into_iter().map(|d| d.text).collect();
        let mut cfg = RunConfig::default();
        cfg.cluster.k = 2;
        cfg.pretrain = PretrainConfig { model: ModelConfig { hidden: 8, ..ModelConfig::default() }, steps: 3, ..PretrainConfig::default() };
        cfg.lora = LoraConfig { rank: 2, ..LoraConfig::default() };
        cfg.expert = TrainConfig { max_seq_len: 64, ..TrainConfig::default() };
        cfg.finetune = cfg.expert.clone();
        cfg.protocol.query_prefix_len = 10;
        cfg.protocol.eval_prefix_len = 10;
        cfg.protocol.holdout_fraction = 0.2;
        cfg.ttt.n_neighbors = 3;
        cfg.eval.methods = vec![Method::Base, Method::Ttmm, Method::Merge(2), Method::Ensemble(2), Method::Ttt];
        cfg.eval.beta_grid = vec![0.05, 0.5];
        (docs, cfg)
    }

    #[test]
    fn tiny_table_has_requested_rows() {
        let (docs, cfg) = tiny();
        let prepared = prepare(&docs, &cfg, true).unwrap();
        let experts = train_experts(&docs, &prepared, &cfg).unwrap();
        let ctx = EvalContext {
            docs: &docs,
            prepared: &prepared,
            base: &experts.base,
            adapters: &experts.adapters,
            centroids: &experts.centroids,
        };
        let report = run_comparison(&ctx, &cfg).unwrap();
        let got: Vec<Method> = report.methods.iter().map(|r| r.method).collect();
        assert_eq!(got, cfg.eval.methods);
        assert!(report.methods.iter().all(|r| r.perplexity >= 1.0));
        assert_eq!(report.matrix.len(), 2);
        assert!(report.matrix.iter().all(|r| r.len() == 2));
        assert_eq!(report.pass_at_n.last().unwrap(), &(2, 1.0));
        assert_eq!(report.beta_curve.len(), 2);
        let csv = report.to_csv();
        assert!(csv.lines().any(|l| l.starts_with("perplexity,ttmm,,")));

        let dir = tempfile::tempdir().unwrap();
        write_catalog(dir.path(), &experts, &prepared, &cfg).unwrap();
        let back = read_split(dir.path(), &docs, &cfg).unwrap();
        assert_eq!(back.split, prepared.split);
        assert_eq!(back.assignment, prepared.assignment);
    }

    #[test]
    fn evaluation_needs_a_split() {
        let (docs, cfg) = tiny();
        let prepared = prepare(&docs, &cfg, false).unwrap();
        assert_eq!(prepared.train_ids().len(), docs.len());
        let experts = train_experts(&docs, &prepared, &cfg).unwrap();
        let ctx = EvalContext {
            docs: &docs,
            prepared: &prepared,
            base: &experts.base,
            adapters: &experts.adapters,
            centroids: &experts.centroids,
        };
        assert!(run_comparison(&ctx, &cfg).is_err());
    }
}
