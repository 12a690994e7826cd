use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use hkgdiff::baselines::{baseline_with_rejection, BaselineKind, CycleConfig, CycleOrder};
use hkgdiff::data::io::{format_fact_line, load_dataset, parse_fact_line, save_dataset, ENTITIES_FILE, RELATIONS_FILE, SPLITS};
use hkgdiff::data::{generate_synthetic_hkg, Dataset, Fact, FilterIndex, MaskedQuery, RuleOracle, SlotState, SynthConfig, Vocab};
use hkgdiff::inference::{
    build_setting_queries, evaluate_lp, generate_with_rejection, mrr_hits, summarize, GenRecord, GenSummary, GenerationConfig,
    HeldOutOracle, LpMetrics, Outcome, PositionSet, Predictor, RankResult, Setting, SettingQuery, Validity,
};
use hkgdiff::model::Model;
use hkgdiff::numerics::checkpoint::Checkpoint;
use hkgdiff::rng::substream;
use hkgdiff::training::{composite_gradcheck, GradcheckConfig, MetricsLog, MetricsRecord, TrainConfig, Trainer};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::args::*;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::parallel::par_map;

pub const LAST_CKPT: &str = "last.ckpt";
pub const BEST_CKPT: &str = "best.ckpt";
pub const BEST_JSON: &str = "best.json";
pub const LP_METRICS: &str = "lp_metrics.csv";
pub const LP_RANKS: &str = "lp_ranks.jsonl";
pub const GEN_REPORT: &str = "generation.jsonl";
pub const GEN_SUMMARY: &str = "generation_summary.csv";
pub const EVAL_GEN_SUMMARY: &str = "eval_gen_summary.csv";
pub const ORACLE_FILE: &str = "oracle.json";

pub fn dispatch(cmd: &Command, threads: usize) -> CliResult<()> {
    match cmd {
        Command::Synth(a) => synth(cmd, a),
        Command::Train(a) => train(cmd, a),
        Command::EvalLp(a) => eval_lp(cmd, a, threads),
        Command::Generate(a) => generate(cmd, a, threads),
        Command::EvalGen(a) => eval_gen(cmd, a),
        Command::Baseline(a) => baseline(cmd, a, threads),
        Command::Gradcheck(a) => gradcheck(cmd, a),
        Command::Replay(a) => replay(a),
    }
}

fn read_text(path: &Path, m: &mut RunManifest) -> CliResult<String> {
    m.input(path)?;
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn load_data(dir: &Path, m: &mut RunManifest) -> CliResult<Dataset> {
    for name in [ENTITIES_FILE, RELATIONS_FILE] {
        m.input(&dir.join(name))?;
    }
    for split in SPLITS {
        m.input(&dir.join(format!("{split}.jsonl")))?;
    }
    Ok(load_dataset(dir)?)
}

/// Training facts without repeats, the graph every evaluation encodes.
pub fn graph_facts(data: &Dataset) -> Vec<Fact> {
    let mut seen = HashSet::new();
    data.train.iter().filter(|f| seen.insert(*f)).cloned().collect()
}

fn load_model(path: &Path, data: &Dataset, m: &mut RunManifest) -> CliResult<Model> {
    m.input(path)?;
    let model = Model::from_checkpoint(&Checkpoint::load(path)?)?;
    let spec = model.spec();
    if spec.n_ent != data.vocab.entity_count() || spec.n_rel != data.vocab.relation_count() {
        return Err(CliError::Data(format!(
            "checkpoint expects {} entities and {} relations, dataset has {} and {}",
            spec.n_ent,
            spec.n_rel,
            data.vocab.entity_count(),
            data.vocab.relation_count()
        )));
    }
    Ok(model)
}

/// Rule oracle when given, else exact match against the held-out splits.
fn load_oracle(path: Option<&PathBuf>, data: &Dataset, m: &mut RunManifest) -> CliResult<Box<dyn Validity + Sync>> {
    Ok(match path {
        Some(p) => Box::new(RuleOracle::from_json(&read_text(p, m)?)?),
        None => Box::new(HeldOutOracle(data.valid.iter().chain(&data.test).cloned().collect())),
    })
}

fn fact_json(fact: &Fact, vocab: &Vocab) -> Value {
    serde_json::from_str(&format_fact_line(fact, vocab)).expect("canonical record is JSON")
}

/// Slot labels in canonical order, `null` for masks.
fn query_json(q: &MaskedQuery, vocab: &Vocab) -> Value {
    Value::Array(
        q.slots()
            .map(|s| match s.state {
                SlotState::Known(v) => Value::String(vocab.name(s.kind, v).to_string()),
                SlotState::Masked => Value::Null,
            })
            .collect(),
    )
}

fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_jsonl(path: &Path, rows: &[Value]) -> CliResult<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    write_text(path, &text)
}

fn toml_file<T: serde::de::DeserializeOwned>(path: &Path, m: &mut RunManifest) -> CliResult<T> {
    toml::from_str(&read_text(path, m)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn synth(cmd: &Command, a: &SynthArgs) -> CliResult<()> {
    let mut m = RunManifest::new(cmd, Value::Null, 0);
    let mut cfg = match &a.config {
        Some(p) => SynthConfig::from_toml(&read_text(p, &mut m)?)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    m.config = serde_json::to_value(&cfg)?;
    m.seed = cfg.seed;
    for name in [ENTITIES_FILE, RELATIONS_FILE, "train.jsonl", "valid.jsonl", "test.jsonl", ORACLE_FILE, "synth.toml", "stats.json"] {
        m.output(&a.out.join(name));
    }
    m.write(&a.out)?;
    let (data, oracle) = generate_synthetic_hkg(&cfg)?;
    save_dataset(&a.out, &data)?;
    write_text(&a.out.join(ORACLE_FILE), &oracle.to_json())?;
    write_text(&a.out.join("synth.toml"), &cfg.to_toml())?;
    let stats = json!({
        "entities": data.vocab.entity_count(),
        "relations": data.vocab.relation_count(),
        "train": data.train.len(),
        "valid": data.valid.len(),
        "test": data.test.len(),
        "train_lengths": data.train_length_counts(),
    });
    write_text(&a.out.join("stats.json"), &(serde_json::to_string_pretty(&stats)? + "\n"))?;
    eprintln!("{stats}");
    Ok(())
}

fn train_config(a: &TrainArgs, m: &mut RunManifest) -> CliResult<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::from_toml(&read_text(p, m)?)?,
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($field:ident).+ <- $flag:ident) => {
            if let Some(v) = a.$flag {
                cfg.$($field).+ = v;
            }
        };
    }
    set!(epochs <- epochs);
    set!(warmup_epochs <- warmup_epochs);
    set!(lr_max <- lr_max);
    set!(lr_min <- lr_min);
    set!(batch_size <- batch_size);
    set!(p_obs <- p_obs);
    set!(weight_decay <- weight_decay);
    set!(clip_norm <- clip_norm);
    set!(validation_interval <- validation_interval);
    set!(seed <- seed);
    set!(model.d <- d);
    set!(model.layers <- layers);
    set!(model.dropout <- dropout);
    for name in &a.ablations {
        cfg.ablations.set(name, true)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize, Deserialize)]
struct BestFile {
    epoch: usize,
    mrr: f64,
}

fn resumed_trainer(a: &TrainArgs, ckpt_path: &Path, data: &Dataset, m: &mut RunManifest) -> CliResult<Trainer> {
    let fixed = TrainArgs {
        data: a.data.clone(),
        out: a.out.clone(),
        resume: a.resume.clone(),
        epochs: a.epochs,
        ..TrainArgs::default()
    };
    if *a != fixed {
        return Err(CliError::Config("a resumed run takes its config from the checkpoint; only --epochs may be given".into()));
    }
    m.input(ckpt_path)?;
    let mut t = Trainer::resume(&Checkpoint::load(ckpt_path)?, data)?;
    if let Some(e) = a.epochs {
        t.config.epochs = e;
        t.config.validate()?;
    }
    let dir = ckpt_path.parent().unwrap_or(Path::new("."));
    let (best_ckpt, best_json) = (dir.join(BEST_CKPT), dir.join(BEST_JSON));
    if best_ckpt.is_file() && best_json.is_file() {
        let record: BestFile = serde_json::from_str(&read_text(&best_json, m)?)?;
        m.input(&best_ckpt)?;
        let best = Model::from_checkpoint(&Checkpoint::load(&best_ckpt)?)?;
        t.restore_best(
            hkgdiff::training::BestRecord {
                epoch: record.epoch,
                mrr: record.mrr,
            },
            best.params,
        );
    }
    Ok(t)
}

fn save_best(t: &Trainer, out: &Path) -> CliResult<()> {
    let model = t.best_model();
    let mut ckpt = model.to_checkpoint();
    if let Some(b) = t.best() {
        ckpt.header["best"] = serde_json::to_value(b)?;
        let file = BestFile { epoch: b.epoch, mrr: b.mrr };
        write_text(&out.join(BEST_JSON), &(serde_json::to_string(&file)? + "\n"))?;
    }
    Ok(ckpt.save(&out.join(BEST_CKPT))?)
}

fn train(cmd: &Command, a: &TrainArgs) -> CliResult<()> {
    let mut m = RunManifest::new(cmd, Value::Null, 0);
    let data = load_data(&a.data, &mut m)?;
    let mut trainer = match &a.resume {
        Some(p) => resumed_trainer(a, p, &data, &mut m)?,
        None => Trainer::new(train_config(a, &mut m)?, &data)?,
    };
    m.config = serde_json::to_value(&trainer.config)?;
    m.seed = trainer.config.seed;
    for name in [LAST_CKPT, BEST_CKPT, BEST_JSON, "metrics.csv", "metrics.jsonl", "train_config.toml"] {
        m.output(&a.out.join(name));
    }
    m.write(&a.out)?;
    let log = MetricsLog::new(&a.out);
    // A fresh run owns its log; a resumed run in the same directory appends.
    let appending = a.resume.as_ref().is_some_and(|p| p.parent() == Some(a.out.as_path()));
    if !appending {
        for name in ["metrics.csv", "metrics.jsonl"] {
            let p = a.out.join(name);
            if p.exists() {
                fs::remove_file(&p).map_err(|e| CliError::io(&p, e))?;
            }
        }
    }
    write_text(&a.out.join("train_config.toml"), &trainer.config.to_toml())?;
    let filter = FilterIndex::build(&data);
    trainer.fit(&data, &filter, |t, st, metrics| {
        let Some(mt) = metrics else {
            return Ok(());
        };
        let rec = MetricsRecord {
            epoch: t.epoch(),
            loss: st.loss,
            lr: st.lr,
            mrr: mt.mrr,
            hits1: mt.hits1,
            hits3: mt.hits3,
            hits10: mt.hits10,
        };
        log.append(&rec)?;
        eprintln!("epoch {} loss {:.4} valid mrr {:.4} hits@1 {:.4}", rec.epoch, rec.loss, rec.mrr, rec.hits1);
        t.to_checkpoint().save(&a.out.join(LAST_CKPT))?;
        if t.best().is_some_and(|b| b.epoch == t.epoch()) {
            save_best(t, &a.out).map_err(|e| hkgdiff::Error::Checkpoint(e.to_string()))?;
        }
        Ok(())
    })?;
    trainer.to_checkpoint().save(&a.out.join(LAST_CKPT))?;
    save_best(&trainer, &a.out)
}

#[derive(Serialize)]
struct LpRow<'a> {
    split: &'a str,
    positions: &'a str,
    count: usize,
    mrr: f64,
    hits1: f64,
    hits3: f64,
    hits10: f64,
}

/// Ranks of every position of `facts`, query-parallel; identical for any thread count.
pub fn rank_all(model: &Model, graph: &[Fact], facts: &[Fact], filter: &FilterIndex, batch: usize, top_k: usize, threads: usize) -> CliResult<Vec<RankResult>> {
    let cache = Predictor::new(model, graph)?.cache().clone();
    let chunk = facts.len().div_ceil(threads.max(1)).max(1);
    let ranges: Vec<(usize, usize)> = (0..facts.len()).step_by(chunk).map(|s| (s, (s + chunk).min(facts.len()))).collect();
    let parts = par_map(
        &ranges,
        threads,
        || Ok(Predictor::from_cache(model, cache.clone())),
        |pred, _, &(s, e)| {
            let mut r = evaluate_lp(pred, &facts[s..e], filter, PositionSet::All, batch, top_k)?.results;
            for x in &mut r {
                x.fact += s;
            }
            Ok(r)
        },
    )?;
    Ok(parts.into_iter().flatten().collect())
}

/// Primary-triple and all-position metrics from one ranking pass.
pub fn lp_tables(results: &[RankResult]) -> CliResult<(LpMetrics, LpMetrics)> {
    let primary: Vec<usize> = results.iter().filter(|r| r.position < 3).map(|r| r.rank).collect();
    let all: Vec<usize> = results.iter().map(|r| r.rank).collect();
    Ok((mrr_hits(&primary)?, mrr_hits(&all)?))
}

fn eval_lp(cmd: &Command, a: &EvalLpArgs, threads: usize) -> CliResult<()> {
    let mut m = RunManifest::new(cmd, Value::Null, 0);
    let data = load_data(&a.data, &mut m)?;
    let model = load_model(&a.checkpoint, &data, &mut m)?;
    let split = match a.split {
        SplitName::Valid => "valid",
        SplitName::Test => "test",
    };
    m.config = json!({ "split": split, "batch_size": a.batch_size, "top_k": a.top_k });
    m.output(&a.out.join(LP_METRICS));
    m.output(&a.out.join(LP_RANKS));
    m.write(&a.out)?;
    let facts = if split == "valid" { &data.valid } else { &data.test };
    if facts.is_empty() {
        return Err(CliError::Data(format!("{split} split is empty")));
    }
    let filter = FilterIndex::build(&data);
    let results = rank_all(&model, &graph_facts(&data), facts, &filter, a.batch_size, a.top_k, threads)?;
    let (pri, all) = lp_tables(&results)?;
    let rows: Vec<LpRow> = [("primary", pri), ("all", all)]
        .iter()
        .map(|&(positions, x)| LpRow {
            split,
            positions,
            count: x.count,
            mrr: x.mrr,
            hits1: x.hits1,
            hits3: x.hits3,
            hits10: x.hits10,
        })
        .collect();
    write_csv(&a.out.join(LP_METRICS), &rows)?;
    let v = &data.vocab;
    let ranks: Vec<Value> = results
        .iter()
        .map(|r| {
            let kind = hkgdiff::data::Kind::at_position(r.position);
            json!({
                "fact": r.fact,
                "position": r.position,
                "gold": v.name(kind, r.gold),
                "rank": r.rank,
                "top": r.top.iter().map(|&(c, p)| json!([v.name(kind, c), p])).collect::<Vec<_>>(),
            })
        })
        .collect();
    write_jsonl(&a.out.join(LP_RANKS), &ranks)?;
    for r in &rows {
        eprintln!("{split} {:<7} n={} mrr {:.4} hits@1 {:.4} hits@3 {:.4} hits@10 {:.4}", r.positions, r.count, r.mrr, r.hits1, r.hits3, r.hits10);
    }
    Ok(())
}

fn setting_queries(q: &QueryArgs, data: &Dataset) -> CliResult<Vec<SettingQuery>> {
    let setting: Setting = q.setting.into();
    Ok(build_setting_queries(
        &data.test,
        setting,
        q.count,
        &data.train_length_counts(),
        &mut substream(q.query_seed, "settings", 0),
    )?)
}

fn setting_name(s: SettingName) -> &'static str {
    match s {
        SettingName::Scratch => "scratch",
        SettingName::Targeted => "targeted",
        SettingName::Arbitrary => "arbitrary",
    }
}

fn outcome_name(o: Outcome) -> &'static str {
    match o {
        Outcome::ValidNovel => "valid_novel",
        Outcome::Invalid => "invalid",
        Outcome::ValidDuplicateExhausted => "valid_duplicate_exhausted",
    }
}

/// One report row; diffusion and baselines share the schema.
fn record_json(i: usize, method: &str, setting: &str, q: &SettingQuery, r: &GenRecord, vocab: &Vocab) -> Value {
    json!({
        "index": i,
        "method": method,
        "setting": setting,
        "query": query_json(&q.query, vocab),
        "source": q.source.as_ref().map(|f| fact_json(f, vocab)),
        "outcome": outcome_name(r.outcome),
        "attempts": r.attempts,
        "first_valid": r.first_valid,
        "fact": fact_json(&r.fact, vocab),
        "choices": r.choices.iter().map(|c| {
            let kind = hkgdiff::data::Kind::at_position(c.position);
            json!({ "position": c.position, "value": vocab.name(kind, c.value), "prob": c.prob, "step": c.step })
        }).collect::<Vec<_>>(),
    })
}

#[derive(Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub setting: String,
    pub queries: usize,
    pub valid_novel: usize,
    pub invalid: usize,
    pub exhausted: usize,
    pub total_attempts: usize,
    pub accuracy: f64,
    pub vn_rate: f64,
    pub e_gen: f64,
    pub first_attempt_valid: f64,
}

impl SummaryRow {
    fn new(method: &str, setting: &str, s: GenSummary) -> SummaryRow {
        SummaryRow {
            method: method.into(),
            setting: setting.into(),
            queries: s.queries,
            valid_novel: s.valid_novel,
            invalid: s.invalid,
            exhausted: s.exhausted,
            total_attempts: s.total_attempts,
            accuracy: s.accuracy,
            vn_rate: s.vn_rate,
            e_gen: s.e_gen,
            first_attempt_valid: s.first_attempt_valid,
        }
    }
}

fn write_report(out: &Path, method: &str, q: &QueryArgs, queries: &[SettingQuery], records: &[GenRecord], vocab: &Vocab) -> CliResult<()> {
    let setting = setting_name(q.setting);
    let rows: Vec<Value> = queries
        .iter()
        .zip(records)
        .enumerate()
        .map(|(i, (sq, r))| record_json(i, method, setting, sq, r, vocab))
        .collect();
    write_jsonl(&out.join(GEN_REPORT), &rows)?;
    let s = summarize(records);
    eprintln!(
        "{method} {setting}: {} queries, V&N rate {:.4}, E[Gen.] {:.3}, first-attempt valid {:.4}",
        s.queries, s.vn_rate, s.e_gen, s.first_attempt_valid
    );
    write_csv(&out.join(GEN_SUMMARY), &[SummaryRow::new(method, setting, s)])
}

struct GenInputs {
    data: Dataset,
    model: Model,
    oracle: Box<dyn Validity + Sync>,
    queries: Vec<SettingQuery>,
}

fn gen_inputs(q: &QueryArgs, m: &mut RunManifest) -> CliResult<GenInputs> {
    let data = load_data(&q.data, m)?;
    let model = load_model(&q.checkpoint, &data, m)?;
    let oracle = load_oracle(q.oracle.as_ref(), &data, m)?;
    let queries = setting_queries(q, &data)?;
    Ok(GenInputs {
        data,
        model,
        oracle,
        queries,
    })
}

fn generation_config(a: &GenerateArgs, m: &mut RunManifest) -> CliResult<GenerationConfig> {
    let mut cfg: GenerationConfig = match &a.gen_config {
        Some(p) => toml_file(p, m)?,
        None => GenerationConfig::default(),
    };
    macro_rules! set {
        ($($f:ident),+) => {
            $(if let Some(v) = a.$f {
                cfg.$f = v;
            })+
        };
    }
    set!(steps, schedule_lambda, delta_ent, delta_rel, tau_ent, tau_rel, max_attempts, seed);
    if a.no_cache {
        cfg.cache = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report_outputs(m: &mut RunManifest, out: &Path) -> CliResult<()> {
    m.output(&out.join(GEN_REPORT));
    m.output(&out.join(GEN_SUMMARY));
    m.write(out)?;
    Ok(())
}

fn generate(cmd: &Command, a: &GenerateArgs, threads: usize) -> CliResult<()> {
    let mut m = RunManifest::new(cmd, Value::Null, 0);
    let cfg = generation_config(a, &mut m)?;
    let inp = gen_inputs(&a.query, &mut m)?;
    m.config = json!({ "generation": cfg, "setting": setting_name(a.query.setting), "count": a.query.count, "query_seed": a.query.query_seed });
    m.seed = cfg.seed;
    report_outputs(&mut m, &a.query.out)?;
    let known = inp.data.train_set();
    let cache = Predictor::new(&inp.model, &graph_facts(&inp.data))?.cache().clone();
    let records = par_map(
        &inp.queries,
        threads,
        || Ok(Predictor::from_cache(&inp.model, cache.clone())),
        |pred, i, sq| {
            let mut rng = substream(cfg.seed, "generate", i as u64);
            Ok(generate_with_rejection(pred, &sq.query, &cfg, &known, inp.oracle.as_ref(), &mut rng)?)
        },
    )?;
    write_report(&a.query.out, "diffusion", &a.query, &inp.queries, &records, &inp.data.vocab)
}

fn baseline(cmd: &Command, a: &BaselineArgs, threads: usize) -> CliResult<()> {
    let mut m = RunManifest::new(cmd, Value::Null, a.seed);
    let kind = match a.kind {
        BaselineName::Iterative => BaselineKind::IterativePrediction,
        BaselineName::Gibbs => BaselineKind::GibbsSampling,
    };
    let cycle = CycleConfig {
        cycles: a.cycles,
        burn_in: a.burn_in,
        top_k: a.top_k,
        order: match a.order {
            OrderName::Canonical => CycleOrder::Canonical,
            OrderName::Random => CycleOrder::Random,
        },
    };
    cycle.validate()?;
    if a.max_attempts == 0 {
        return Err(CliError::Config("max_attempts must be at least 1".into()));
    }
    let inp = gen_inputs(&a.query, &mut m)?;
    let method = serde_json::to_value(kind)?.as_str().unwrap_or("baseline").to_string();
    m.config = json!({ "baseline": method, "cycles": cycle, "max_attempts": a.max_attempts, "setting": setting_name(a.query.setting), "count": a.query.count, "query_seed": a.query.query_seed });
    report_outputs(&mut m, &a.query.out)?;
    let known = inp.data.train_set();
    let cache = Predictor::new(&inp.model, &graph_facts(&inp.data))?.cache().clone();
    let records = par_map(
        &inp.queries,
        threads,
        || Ok(Predictor::from_cache(&inp.model, cache.clone())),
        |pred, i, sq| {
            let mut rng = substream(a.seed, "baseline", i as u64);
            Ok(baseline_with_rejection(kind, pred, &sq.query, &cycle, a.max_attempts, &known, inp.oracle.as_ref(), &mut rng)?)
        },
    )?;
    write_report(&a.query.out, &method, &a.query, &inp.queries, &records, &inp.data.vocab)
}

/// Re-judges each report row's final fact; first-attempt validity is kept as recorded.
fn eval_gen(cmd: &Command, a: &EvalGenArgs) -> CliResult<()> {
    let mut m = RunManifest::new(cmd, Value::Null, 0);
    let data = load_data(&a.data, &mut m)?;
    let oracle = load_oracle(a.oracle.as_ref(), &data, &mut m)?;
    m.input(&a.report)?;
    m.output(&a.out.join(EVAL_GEN_SUMMARY));
    m.write(&a.out)?;
    let known = data.train_set();
    let file = fs::File::open(&a.report).map_err(|e| CliError::io(&a.report, e))?;
    let mut groups: BTreeMap<(String, String), Vec<GenRecord>> = BTreeMap::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(&a.report, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Value = serde_json::from_str(&line)?;
        let field = |k: &str| row.get(k).ok_or_else(|| CliError::Data(format!("report line {}: missing `{k}`", n + 1)));
        let fact = parse_fact_line(&field("fact")?.to_string(), &data.vocab, n + 1)?;
        let attempts = field("attempts")?.as_u64().unwrap_or(0) as usize;
        let exhausted = field("outcome")?.as_str() == Some("valid_duplicate_exhausted");
        let outcome = if exhausted || known.contains(&fact) {
            Outcome::ValidDuplicateExhausted
        } else if oracle.is_valid(&fact) {
            Outcome::ValidNovel
        } else {
            Outcome::Invalid
        };
        let key = (
            field("method")?.as_str().unwrap_or("").to_string(),
            field("setting")?.as_str().unwrap_or("").to_string(),
        );
        groups.entry(key).or_default().push(GenRecord {
            outcome,
            attempts,
            fact,
            choices: Vec::new(),
            first_valid: field("first_valid")?.as_bool().unwrap_or(false),
        });
    }
    if groups.is_empty() {
        return Err(CliError::Data(format!("{} has no records", a.report.display())));
    }
    let rows: Vec<SummaryRow> = groups.iter().map(|((mth, st), recs)| SummaryRow::new(mth, st, summarize(recs))).collect();
    for r in &rows {
        eprintln!("{} {}: V&N rate {:.4} E[Gen.] {:.3}", r.method, r.setting, r.vn_rate, r.e_gen);
    }
    write_csv(&a.out.join(EVAL_GEN_SUMMARY), &rows)
}

fn gradcheck(cmd: &Command, a: &GradcheckArgs) -> CliResult<()> {
    let mut m = RunManifest::new(cmd, Value::Null, 0);
    let mut cfg: GradcheckConfig = match &a.config {
        Some(p) => toml_file(p, &mut m)?,
        None => GradcheckConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    m.config = serde_json::to_value(&cfg)?;
    m.seed = cfg.seed;
    if let Some(out) = &a.out {
        m.output(&out.join("gradcheck.json"));
        m.write(out)?;
    }
    let report = composite_gradcheck(&cfg)?;
    let text = serde_json::to_string(&json!({ "config": cfg, "report": report }))?;
    println!("{text}");
    if let Some(out) = &a.out {
        write_text(&out.join("gradcheck.json"), &(text + "\n"))?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "max relative error {:e} is not below {:e}",
            report.max_rel_error, cfg.tolerance
        )))
    }
}

fn replay(a: &ReplayArgs) -> CliResult<()> {
    let manifest = RunManifest::read(&a.manifest)?;
    let changed = manifest.changed_inputs()?;
    if !changed.is_empty() {
        return Err(CliError::Data(format!("inputs changed since the manifest was written: {}", changed.join(", "))));
    }
    let mut cmd = manifest.args.clone();
    if matches!(cmd, Command::Replay(_)) {
        return Err(CliError::Config("a manifest cannot record a replay".into()));
    }
    if let Some(out) = &a.out {
        create_dir(out)?;
        cmd.set_out_dir(out.clone());
    }
    let _ = std::io::stderr().flush();
    dispatch(&cmd, 1)
}
