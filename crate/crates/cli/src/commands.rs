use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use icl_gr::corpus::{
    ingest_corpus, load_queries, split_corpus, split_queries, write_queries, Corpus, CorpusSplit,
    QueryRecord,
};
use icl_gr::dpo::{decode_and_mine, PairKind};
use icl_gr::eval::harness::{
    evaluate_detailed, shot_sweep, EvalParams, EvalReport, EvalSetup, System,
};
use icl_gr::eval::write_rows_csv;
use icl_gr::prompt::{InContextInstance, InstanceFactory, InstanceRecord, NegativeMiner};
use icl_gr::scorer::{fit_training_tfidf, MockModel};
use icl_gr::tokenizer::{build_vocab, Vocabulary};
use icl_gr::trie::{build_trie, DocidTrie};

use crate::config::RunConfig;
use crate::{Cli, Command, Overrides, SystemChoice};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const QUERIES_FILE: &str = "queries.jsonl";
pub const VOCAB_FILE: &str = "vocab.json";
pub const SPLIT_FILE: &str = "split.json";
pub const TRIE_FILE: &str = "trie.bin";
pub const RETENTION_FILE: &str = "queries_retention.jsonl";
pub const ADAPTATION_FILE: &str = "queries_adaptation.jsonl";
pub const NEGATIVES_FILE: &str = "negatives.jsonl";
pub const INSTANCES_FILE: &str = "instances.jsonl";
pub const PAIRS_FILE: &str = "pairs.jsonl";
pub const REPORTS_DIR: &str = "reports";

/// Failures with their own exit codes.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    MissingInput(PathBuf),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "invalid configuration: {m}"),
            Failure::MissingInput(p) => write!(f, "missing input file {}", p.display()),
        }
    }
}

impl std::error::Error for Failure {}

/// Error kind and exit code: 3 config, 4 missing input, 5 invalid data, 1 other.
pub fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return match f {
                Failure::Config(_) => ("config", 3),
                Failure::MissingInput(_) => ("missing_input", 4),
            };
        }
        if let Some(e) = cause.downcast_ref::<std::io::Error>() {
            if e.kind() == std::io::ErrorKind::NotFound {
                return ("missing_input", 4);
            }
        }
        if let Some(e) = cause.downcast_ref::<icl_gr::Error>() {
            return match e {
                icl_gr::Error::Io { source, .. }
                    if source.kind() == std::io::ErrorKind::NotFound =>
                {
                    ("missing_input", 4)
                }
                icl_gr::Error::Io { .. } => ("io", 1),
                _ => ("invalid_input", 5),
            };
        }
    }
    ("error", 1)
}

fn require(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Failure::MissingInput(path.to_path_buf()).into())
    }
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Failure::Config(msg.into()).into()
}

fn resolve_config(o: &Overrides, command: &Command) -> Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(p) => {
            require(p)?;
            RunConfig::load(p).map_err(|e| config_error(format!("{}: {e:#}", p.display())))?
        }
        None => RunConfig::default(),
    };
    cfg.resolve_workdir(o.workdir.clone());
    if let Some(p) = &o.corpus {
        cfg.paths.corpus = Some(p.clone());
    }
    if let Some(p) = &o.queries {
        cfg.paths.queries = Some(p.clone());
    }
    if let Some(r) = o.ratio {
        cfg.split.ratio = r;
    }
    if let Some(k) = o.k {
        cfg.negatives.k = k;
    }
    if let Some(b) = o.beam {
        cfg.decode.beam_width = b;
    }
    if let Some(seed) = o.seed {
        match command {
            Command::Split => cfg.split.seed = seed,
            Command::BuildInstances => cfg.instances.seed = seed,
            _ => cfg.eval.seed = seed,
        }
    }
    if let Some(shots) = &o.shots {
        let single = || match shots.as_slice() {
            [n] => Ok(*n),
            _ => Err(config_error(
                "--shots takes a single value for this subcommand",
            )),
        };
        match command {
            Command::SweepShots => cfg.eval.shots = shots.clone(),
            Command::Evaluate => cfg.eval.n = single()?,
            Command::BuildInstances => cfg.instances.n_shots = single()?,
            _ => {}
        }
    }
    cfg.validate().map_err(|e| config_error(format!("{e:#}")))?;
    Ok(cfg)
}

struct Run {
    cfg: RunConfig,
    workdir: PathBuf,
    out: Option<PathBuf>,
    system: Option<SystemChoice>,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.workdir.join(name)
    }

    fn reports_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| self.path(REPORTS_DIR))
    }

    /// The ingested corpus, or the configured source if nothing was ingested.
    fn corpus(&self) -> Result<Corpus> {
        let ingested = self.path(CORPUS_FILE);
        let path = if ingested.exists() {
            ingested
        } else {
            self.cfg
                .paths
                .corpus
                .clone()
                .ok_or(Failure::MissingInput(ingested))?
        };
        Ok(ingest_corpus(require(&path)?)?)
    }

    fn queries(&self, corpus: &Corpus) -> Result<Vec<QueryRecord>> {
        let ingested = self.path(QUERIES_FILE);
        let path = if ingested.exists() {
            ingested
        } else {
            self.cfg
                .paths
                .queries
                .clone()
                .ok_or(Failure::MissingInput(ingested))?
        };
        Ok(load_queries(require(&path)?, corpus)?)
    }

    fn split(&self, corpus: &Corpus) -> Result<CorpusSplit> {
        let stored = self.path(SPLIT_FILE);
        if stored.exists() {
            Ok(CorpusSplit::load(&stored, corpus)?)
        } else {
            Ok(split_corpus(
                corpus,
                self.cfg.split.ratio,
                self.cfg.split.seed,
            )?)
        }
    }

    fn vocab(&self, corpus: &Corpus, queries: &[QueryRecord]) -> Result<Vocabulary> {
        let stored = self.path(VOCAB_FILE);
        if stored.exists() {
            let value: Value = serde_json::from_reader(BufReader::new(File::open(&stored)?))
                .with_context(|| format!("reading {}", stored.display()))?;
            Ok(Vocabulary::from_json(&value)?)
        } else {
            Ok(build_vocab(corpus, queries)?)
        }
    }

    fn mock(&self, corpus: &Corpus, split: &CorpusSplit, vocab: &Vocabulary) -> Result<MockModel> {
        Ok(MockModel::for_split(
            self.cfg.mock.clone(),
            corpus,
            split,
            vocab.clone(),
        )?)
    }

    fn systems(&self, default: SystemChoice) -> Vec<SystemChoice> {
        match self.system.unwrap_or(default) {
            SystemChoice::All => vec![SystemChoice::ContextRouted, SystemChoice::Bm25],
            s => vec![s],
        }
    }

    fn eval_params(&self, n: usize) -> EvalParams {
        EvalParams {
            n_shots: n,
            beam_width: self.cfg.decode.beam_width,
            seed: self.cfg.eval.seed,
            ece_bins: self.cfg.eval.ece_bins,
            measure_latency: false,
        }
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_file(
    path: &Path,
    write: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    create_parent(path)?;
    let mut w =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    write(&mut w)
        .and_then(|_| w.flush())
        .with_context(|| format!("writing {}", path.display()))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    write_file(path, |w| {
        for item in items {
            serde_json::to_writer(&mut *w, item)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(require(path)?)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .with_context(|| format!("{}:{}: malformed record", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, report)?;
        w.write_all(b"\n")
    })
}

fn timestamp() -> String {
    humantime::format_rfc3339_seconds(SystemTime::now()).to_string()
}

fn echo(command: &str, cfg: &RunConfig, outputs: &[PathBuf], summary: Value) -> Result<()> {
    let out = json!({
        "command": command,
        "config": cfg,
        "outputs": outputs,
        "summary": summary,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct NegativesLine {
    doc_id: String,
    negatives: Vec<String>,
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli.overrides, &cli.command)?;
    let run = Run {
        workdir: cfg.workdir().to_path_buf(),
        cfg,
        out: cli.overrides.out.clone(),
        system: cli.overrides.system,
    };
    match cli.command {
        Command::Ingest => ingest(&run, &cli.overrides),
        Command::Split => split(&run),
        Command::MineNegatives => mine_negatives(&run),
        Command::BuildInstances => build_instances(&run),
        Command::Evaluate => evaluate(&run),
        Command::SweepShots => sweep(&run),
        Command::MineDpo => mine_dpo(&run),
        Command::Report => report(&run),
    }
}

fn ingest(run: &Run, o: &Overrides) -> Result<()> {
    let corpus_path = o
        .corpus
        .clone()
        .or_else(|| run.cfg.paths.corpus.clone())
        .ok_or_else(|| config_error("no corpus path given (--corpus or paths.corpus)"))?;
    let corpus = ingest_corpus(require(&corpus_path)?)?;
    let queries = match o.queries.clone().or_else(|| run.cfg.paths.queries.clone()) {
        Some(p) => load_queries(require(&p)?, &corpus)?,
        None => Vec::new(),
    };
    let vocab = build_vocab(&corpus, &queries)?;
    let (c, q, v) = (
        run.path(CORPUS_FILE),
        run.path(QUERIES_FILE),
        run.path(VOCAB_FILE),
    );
    write_file(&c, |w| corpus.write_jsonl(w))?;
    let mut outputs = vec![c];
    if !queries.is_empty() {
        write_file(&q, |w| write_queries(&queries, w))?;
        outputs.push(q);
    }
    write_file(&v, |w| {
        serde_json::to_writer(&mut *w, &vocab.to_json())?;
        w.write_all(b"\n")
    })?;
    outputs.push(v);
    echo(
        "ingest",
        &run.cfg,
        &outputs,
        json!({ "documents": corpus.len(), "queries": queries.len(), "vocab_size": vocab.len() }),
    )
}

fn split(run: &Run) -> Result<()> {
    let corpus = run.corpus()?;
    let queries = run.queries(&corpus)?;
    let vocab = run.vocab(&corpus, &queries)?;
    let split = split_corpus(&corpus, run.cfg.split.ratio, run.cfg.split.seed)?;
    let (retention, adaptation) = split_queries(&queries, &split, &corpus)?;
    let trie = build_trie(&vocab, split.train_ids())?;
    let paths = [
        run.path(SPLIT_FILE),
        run.path(TRIE_FILE),
        run.path(RETENTION_FILE),
        run.path(ADAPTATION_FILE),
    ];
    write_file(&paths[0], |w| writeln!(w, "{}", split.to_json()))?;
    write_file(&paths[1], |w| trie.write_snapshot(w))?;
    write_file(&paths[2], |w| write_queries(&retention, w))?;
    write_file(&paths[3], |w| write_queries(&adaptation, w))?;
    echo(
        "split",
        &run.cfg,
        &paths,
        json!({
            "train_documents": split.train_ids().len(),
            "new_documents": split.new_ids().len(),
            "retention_queries": retention.len(),
            "adaptation_queries": adaptation.len(),
            "trie_nodes": trie.node_count(),
        }),
    )
}

fn mine_negatives(run: &Run) -> Result<()> {
    let corpus = run.corpus()?;
    let split = run.split(&corpus)?;
    let tfidf = fit_training_tfidf(&corpus, &split);
    let miner = NegativeMiner::new(&tfidf, &corpus, split.train_ids())?;
    let k = run.cfg.negatives.k;
    let lines = split
        .train_ids()
        .iter()
        .map(|id| {
            Ok(NegativesLine {
                doc_id: id.clone(),
                negatives: miner.mine(id, k)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let out = run.path(NEGATIVES_FILE);
    write_jsonl(&out, &lines)?;
    echo(
        "mine-negatives",
        &run.cfg,
        &[out],
        json!({ "documents": lines.len(), "k": k }),
    )
}

fn load_negatives(run: &Run) -> Result<HashMap<String, Vec<String>>> {
    let lines: Vec<NegativesLine> = read_jsonl(&run.path(NEGATIVES_FILE))?;
    Ok(lines.into_iter().map(|l| (l.doc_id, l.negatives)).collect())
}

fn build_instances(run: &Run) -> Result<()> {
    let corpus = run.corpus()?;
    let queries = run.queries(&corpus)?;
    let vocab = run.vocab(&corpus, &queries)?;
    let split = run.split(&corpus)?;
    let (retention, _) = split_queries(&queries, &split, &corpus)?;
    let negatives = load_negatives(run)?;
    let factory = InstanceFactory::new(&corpus, &vocab);
    let (n, seed) = (run.cfg.instances.n_shots, run.cfg.instances.seed);
    let mut records = Vec::with_capacity(2 * retention.len());
    for q in &retention {
        let negs = negatives.get(&q.gold_doc_id).ok_or_else(|| {
            anyhow!(
                "no mined negatives for {:?}; rerun mine-negatives",
                q.gold_doc_id
            )
        })?;
        records.push(factory.context_dependent(q, negs, n, seed)?.to_record());
        records.push(factory.query_irrelevant(q, negs, n, seed)?.to_record());
    }
    let out = run.path(INSTANCES_FILE);
    write_jsonl(&out, &records)?;
    echo(
        "build-instances",
        &run.cfg,
        &[out],
        json!({ "instances": records.len(), "context_dependent": retention.len(), "query_irrelevant": retention.len(), "n_shots": n }),
    )
}

struct EvalInputs {
    corpus: Corpus,
    split: CorpusSplit,
    vocab: Vocabulary,
    retention: Vec<QueryRecord>,
    adaptation: Vec<QueryRecord>,
}

fn eval_inputs(run: &Run) -> Result<EvalInputs> {
    let corpus = run.corpus()?;
    let queries = run.queries(&corpus)?;
    let vocab = run.vocab(&corpus, &queries)?;
    let split = run.split(&corpus)?;
    let (retention, adaptation) = split_queries(&queries, &split, &corpus)?;
    Ok(EvalInputs {
        corpus,
        split,
        vocab,
        retention,
        adaptation,
    })
}

fn finish_report(run: &Run, mut report: EvalReport, system: SystemChoice) -> EvalReport {
    report.timestamp = timestamp();
    if system == SystemChoice::ContextRouted {
        let mock = serde_json::to_string(&run.cfg.mock).unwrap_or_default();
        report.notes.push(format!("scorer: mock model {mock}"));
    }
    report
}

fn system_tag(s: SystemChoice) -> &'static str {
    match s {
        SystemChoice::ContextRouted => "context_routed",
        SystemChoice::Bm25 => "bm25",
        SystemChoice::All => "all",
    }
}

fn evaluate(run: &Run) -> Result<()> {
    let inp = eval_inputs(run)?;
    let tfidf = fit_training_tfidf(&inp.corpus, &inp.split);
    let setup = EvalSetup::new(&inp.corpus, &inp.split, &inp.vocab, &tfidf)?;
    let model = run.mock(&inp.corpus, &inp.split, &inp.vocab)?;
    let params = run.eval_params(run.cfg.eval.n);
    let dir = run.reports_dir();
    let mut outputs = Vec::new();
    let mut summary = serde_json::Map::new();
    for choice in run.systems(SystemChoice::All) {
        let system = match choice {
            SystemChoice::Bm25 => System::Bm25,
            _ => System::ContextRouted(&model),
        };
        let (report, rows) = evaluate_detailed(
            &setup,
            system,
            &inp.retention,
            &inp.adaptation,
            &params,
            &run.cfg.eval.dataset,
        )?;
        let report = finish_report(run, report, choice);
        let tag = system_tag(choice);
        let path = dir.join(format!("report_{tag}.json"));
        write_report(&path, &report)?;
        outputs.push(path);
        if run.cfg.eval.csv {
            let path = dir.join(format!("rows_{tag}.csv"));
            write_file(&path, |w| write_rows_csv(&rows, w))?;
            outputs.push(path);
        }
        summary.insert(
            tag.to_string(),
            json!({
                "retention_hits_at_1": report.retention.as_ref().map(|r| r.hits_at_1),
                "adaptation_hits_at_1": report.adaptation.as_ref().map(|r| r.hits_at_1),
            }),
        );
    }
    echo("evaluate", &run.cfg, &outputs, Value::Object(summary))
}

fn sweep(run: &Run) -> Result<()> {
    let inp = eval_inputs(run)?;
    let tfidf = fit_training_tfidf(&inp.corpus, &inp.split);
    let setup = EvalSetup::new(&inp.corpus, &inp.split, &inp.vocab, &tfidf)?;
    let model = run.mock(&inp.corpus, &inp.split, &inp.vocab)?;
    let params = run.eval_params(run.cfg.eval.n);
    let dir = run.reports_dir().join("sweep");
    let mut outputs = Vec::new();
    let mut summary = serde_json::Map::new();
    for choice in run.systems(SystemChoice::ContextRouted) {
        let system = match choice {
            SystemChoice::Bm25 => System::Bm25,
            _ => System::ContextRouted(&model),
        };
        let reports = shot_sweep(
            &setup,
            system,
            &inp.retention,
            &inp.adaptation,
            &run.cfg.eval.shots,
            &params,
            &run.cfg.eval.dataset,
        )?;
        let tag = system_tag(choice);
        let mut curve = Vec::new();
        for (n, report) in run.cfg.eval.shots.iter().zip(reports) {
            let report = finish_report(run, report, choice);
            let path = dir.join(format!("report_{tag}_n{n}.json"));
            write_report(&path, &report)?;
            outputs.push(path);
            curve.push(json!({
                "N": n,
                "adaptation_hits_at_1": report.adaptation.as_ref().map(|r| r.hits_at_1),
                "retention_hits_at_1": report.retention.as_ref().map(|r| r.hits_at_1),
            }));
        }
        summary.insert(tag.to_string(), Value::Array(curve));
    }
    echo("sweep-shots", &run.cfg, &outputs, Value::Object(summary))
}

fn mine_dpo(run: &Run) -> Result<()> {
    let corpus = run.corpus()?;
    let queries = run.queries(&corpus)?;
    let vocab = run.vocab(&corpus, &queries)?;
    let split = run.split(&corpus)?;
    let records: Vec<InstanceRecord> = read_jsonl(&run.path(INSTANCES_FILE))?;
    let by_qid: HashMap<&str, &QueryRecord> =
        queries.iter().map(|q| (q.query_id.as_str(), q)).collect();
    let factory = InstanceFactory::new(&corpus, &vocab);
    let instances = records
        .iter()
        .map(|r| {
            let q = by_qid
                .get(r.qid.as_str())
                .ok_or_else(|| anyhow!("instance refers to unknown query {:?}", r.qid))?;
            Ok(factory.from_record(r, q)?)
        })
        .collect::<Result<Vec<InContextInstance>>>()?;
    let model = run.mock(&corpus, &split, &vocab)?;
    let trie_path = run.path(TRIE_FILE);
    let global = if trie_path.exists() {
        DocidTrie::read_snapshot(BufReader::new(File::open(&trie_path)?))?
    } else {
        build_trie(&vocab, split.train_ids())?
    };
    let pairs = decode_and_mine(
        &model,
        &vocab,
        &global,
        &instances,
        run.cfg.decode.beam_width,
    )?;
    let count = |k: PairKind| pairs.iter().filter(|p| p.kind == k).count();
    let out = run.path(PAIRS_FILE);
    write_jsonl(&out, &pairs)?;
    echo(
        "mine-dpo",
        &run.cfg,
        &[out],
        json!({
            "instances": instances.len(),
            "pairs": pairs.len(),
            "ranking_failure": count(PairKind::RankingFailure),
            "routing_failure": count(PairKind::RoutingFailure),
            "beta": run.cfg.dpo.beta,
        }),
    )
}

fn collect_reports(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect_reports(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "json")
            && path
                .file_name()
                .is_some_and(|n| n.to_string_lossy().starts_with("report_"))
        {
            out.push(path);
        }
    }
    Ok(())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

fn report(run: &Run) -> Result<()> {
    let dir = run.reports_dir();
    require(&dir)?;
    let mut files = Vec::new();
    collect_reports(&dir, &mut files)?;
    files.sort();
    if files.is_empty() {
        bail!("no report files under {}", dir.display());
    }
    let mut table = String::from(
        "| report | system | N | split | H@1 | H@10 | routing recall | hit given copy | ECE |\n\
         |---|---|---|---|---|---|---|---|---|\n",
    );
    let mut loaded = Vec::new();
    for path in &files {
        let report: EvalReport = serde_json::from_reader(BufReader::new(File::open(path)?))
            .with_context(|| format!("parsing {}", path.display()))?;
        let name = path
            .strip_prefix(&dir)
            .unwrap_or(path)
            .display()
            .to_string();
        loaded.push((name, report));
    }
    loaded.sort_by(|(a, x), (b, y)| {
        (&x.system, x.config.n_shots, a).cmp(&(&y.system, y.config.n_shots, b))
    });
    let mut rows = Vec::new();
    for (name, report) in &loaded {
        for (split_name, split) in [
            ("retention", &report.retention),
            ("adaptation", &report.adaptation),
        ] {
            let Some(s) = split else { continue };
            table.push_str(&format!(
                "| {name} | {} | {} | {split_name} | {:.3} | {:.3} | {} | {} | {} |\n",
                report.system,
                report.config.n_shots,
                s.hits_at_1,
                s.hits_at_10,
                fmt_opt(s.routing_recall),
                fmt_opt(s.hit_given_copy),
                fmt_opt(s.ece),
            ));
            rows.push(json!({
                "report": name,
                "system": report.system,
                "N": report.config.n_shots,
                "split": split_name,
                "hits_at_1": s.hits_at_1,
                "hits_at_10": s.hits_at_10,
                "routing_recall": s.routing_recall,
                "hit_given_copy": s.hit_given_copy,
                "ece": s.ece,
            }));
        }
    }
    let out = dir.join("summary.md");
    write_file(&out, |w| w.write_all(table.as_bytes()))?;
    echo("report", &run.cfg, &[out], Value::Array(rows))
}
