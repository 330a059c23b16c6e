use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use fet_core::backend::TokenProvider;
use fet_core::eval::{evaluate, EvalResult};
use fet_core::generator::{generate_instances, predict_type_word};
use fet_core::hierarchy::{LabelHierarchy, LabelPath};
use fet_core::interpreter::{Checkpoint, CorrelationMatrix};
use fet_core::prompts::TemplateSpec;
use fet_core::trainer::{
    prepare, read_records, train, typing_distributions, write_dataset, EpochRecord, MentionExample, TrainOptions,
};
use fet_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::settings::{Command, Settings};
use crate::Failure;

type Res<T = ()> = Result<T, Failure>;

pub fn run(cmd: Command, s: &Settings) -> Res {
    match cmd {
        Command::Train => {
            let summary = train_run(s)?;
            emit(s, &summary)
        }
        Command::Predict => predict(s),
        Command::Generate => generate(s),
        Command::Eval => eval(s),
        Command::Sample => sample(s),
        Command::Sweep => sweep(s),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::data(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Res<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

/// `cli.output` if set, otherwise stdout.
fn sink(s: &Settings) -> Res<Box<dyn Write>> {
    match &s.cli.output {
        Some(p) => Ok(Box::new(create(p)?)),
        None => Ok(Box::new(BufWriter::new(std::io::stdout().lock()))),
    }
}

fn write_line<T: Serialize>(w: &mut dyn Write, value: &T) -> Res {
    let line = serde_json::to_string(value).map_err(Error::from)?;
    writeln!(w, "{line}").map_err(|e| Failure::data(format!("write: {e}")))
}

fn emit<T: Serialize>(s: &Settings, value: &T) -> Res {
    let mut w = sink(s)?;
    write_line(&mut *w, value)?;
    w.flush().map_err(|e| Failure::data(format!("write: {e}")))
}

fn open_provider(s: &Settings) -> Res<Box<dyn TokenProvider>> {
    Ok(s.run.provider.open()?)
}

fn spec_for(s: &Settings, provider: &dyn TokenProvider) -> Res<TemplateSpec> {
    Ok(s.run.template_spec()?.with_mask_token(provider.vocab().mask_token()))
}

fn load_matrix(s: &Settings, provider: &dyn TokenProvider) -> Res<CorrelationMatrix> {
    let path = s.checkpoint_path();
    if !path.exists() {
        return Err(Failure::usage(format!("no checkpoint at {}; train first or set cli.checkpoint", path.display())));
    }
    Ok(Checkpoint::load(&path, provider.vocab())?.best_matrix()?)
}

/// Examples from `cli.input`. Labels are parsed but not checked against any
/// hierarchy.
fn read_input(path: &Path) -> Res<Vec<MentionExample>> {
    read_records(path)?
        .into_iter()
        .map(|(line, r)| {
            let label =
                LabelPath::parse(&r.label).map_err(|e| Failure::data(format!("{}:{line}: {e}", path.display())))?;
            MentionExample::new(r.id, r.text, (r.start, r.end), label)
                .map_err(|e| Failure::data(format!("{}:{line}: {e}", path.display())))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// train / sweep

#[derive(Debug, Serialize)]
struct TrainSummary {
    epochs: usize,
    final_dev: Option<EvalResult>,
    best_epoch: Option<usize>,
    best_dev_acc: Option<f64>,
    test: Option<EvalResult>,
    pool_size: usize,
    checkpoint: PathBuf,
    run_log: PathBuf,
}

/// Header line plus the records of epochs already completed.
fn start_log(path: &Path, s: &Settings, keep: usize) -> Res<BufWriter<File>> {
    let mut kept = Vec::new();
    if keep > 0 {
        let f = File::open(path).map_err(|e| io_err(path, e))?;
        kept =
            BufReader::new(f).lines().skip(1).take(keep).collect::<Result<Vec<_>, _>>().map_err(|e| io_err(path, e))?;
        if kept.len() != keep {
            return Err(Failure::data(format!("{} has fewer than {keep} epoch records", path.display())));
        }
    }
    let mut w = create(path)?;
    write_line(&mut w, &json!({ "config": s.to_json() }))?;
    for line in kept {
        writeln!(w, "{line}").map_err(|e| io_err(path, e))?;
    }
    Ok(w)
}

#[derive(Serialize)]
struct PoolLine<'a> {
    source_id: &'a str,
    type_word: &'a str,
    surface: &'a str,
    score: f64,
    k: usize,
    target: &'a [f64],
}

fn train_run(s: &Settings) -> Res<TrainSummary> {
    s.run.validate()?;
    let data = prepare(&s.run)?;
    let provider = open_provider(s)?;
    let ckpt_path = s.checkpoint_path();
    let log_path = s.run.output_dir.join("run_log.jsonl");
    let mut opts = TrainOptions::from_config(&s.run)?;
    opts.checkpoint = Some(ckpt_path.clone());

    let resume = if s.cli.resume {
        let ck = Checkpoint::load(&ckpt_path, provider.vocab())?;
        log::info!("resuming after epoch {}", ck.epochs_completed);
        Some(ck)
    } else {
        None
    };
    let mut log = start_log(&log_path, s, resume.as_ref().map_or(0, |c| c.epochs_completed))?;
    let mut write_err = None;
    let mut on_epoch = |r: &EpochRecord| {
        log::info!(
            "epoch {:>3}  ce {:.4}  inc {:.4}  exc {:.4}  new {:.4}  beta {:.2}  dev {}  pool {}",
            r.epoch,
            r.ce,
            r.inc,
            r.exc,
            r.new,
            r.beta,
            r.dev_acc.map_or("-".into(), |a| format!("{a:.3}")),
            r.pool_size
        );
        let res = write_line(&mut log, r).and_then(|_| log.flush().map_err(|e| io_err(&log_path, e)));
        if let Err(e) = res {
            write_err.get_or_insert(e);
        }
    };
    let outcome = train(&*provider, &data.hierarchy, &data.train, &data.dev, &opts, resume, &mut on_epoch);
    if let Some(e) = write_err {
        return Err(e);
    }
    let outcome = outcome.map_err(|e| {
        let mut f = Failure::from(e);
        if f.code == 4 {
            f.message.push_str("; rerun with --resume");
        }
        f
    })?;

    let mut pool = create(&s.run.output_dir.join("pool.jsonl"))?;
    for a in &outcome.pool {
        let i = &a.instance;
        write_line(
            &mut pool,
            &PoolLine {
                source_id: &i.source_id,
                type_word: &i.type_word,
                surface: &i.surface,
                score: i.score,
                k: i.k,
                target: &a.target,
            },
        )?;
    }
    pool.flush().map_err(|e| Failure::data(e.to_string()))?;

    let test = if data.test.is_empty() {
        None
    } else {
        let u = outcome.selected()?;
        let spec = spec_for(s, &*provider)?;
        let preds = predict_all(&u, &*provider, &spec, &data.test)?;
        let pairs: Vec<_> = data.test.iter().zip(preds).map(|(ex, (p, _))| (ex.label.clone(), p)).collect();
        Some(evaluate(&pairs, &data.hierarchy)?)
    };
    let last = outcome.log.last();
    let final_dev = last.and_then(|r| {
        Some(EvalResult {
            strict_acc: r.dev_acc?,
            loose_micro_f1: r.dev_micro?,
            loose_macro_f1: r.dev_macro?,
            n: data.dev.len(),
        })
    });
    Ok(TrainSummary {
        epochs: outcome.log.len(),
        final_dev,
        best_epoch: outcome.checkpoint.best.as_ref().map(|b| b.epoch),
        best_dev_acc: outcome.checkpoint.best.as_ref().map(|b| b.dev_acc),
        test,
        pool_size: outcome.pool.len(),
        checkpoint: ckpt_path,
        run_log: log_path,
    })
}

fn sweep(s: &Settings) -> Res {
    let param = s.cli.param.as_deref().ok_or_else(|| Failure::usage("sweep needs --param alpha|epsilon|m"))?;
    let values =
        s.cli.values.as_deref().filter(|v| !v.is_empty()).ok_or_else(|| Failure::usage("sweep needs --values"))?;
    let mut out = sink(s)?;
    for &v in values {
        let mut cell = s.clone();
        match param {
            "alpha" => cell.run.hyperparams.alpha = v,
            "epsilon" => cell.run.hyperparams.epsilon = v,
            "m" => {
                if v.fract() != 0.0 || v < 1.0 {
                    return Err(Failure::usage(format!("m must be a positive integer, got {v}")));
                }
                cell.run.hyperparams.m = v as usize;
            }
            other => return Err(Failure::usage(format!("cannot sweep {other:?}; use alpha, epsilon or m"))),
        }
        cell.run.output_dir = s.run.output_dir.join("sweep").join(format!("{param}={v}"));
        cell.cli = Default::default();
        let summary = train_run(&cell)?;
        write_line(&mut *out, &json!({ "param": param, "value": v, "summary": summary }))?;
        out.flush().map_err(|e| Failure::data(e.to_string()))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// predict / generate

fn predict_all(
    u: &CorrelationMatrix,
    provider: &dyn TokenProvider,
    spec: &TemplateSpec,
    examples: &[MentionExample],
) -> Res<Vec<(LabelPath, f64)>> {
    let dists = typing_distributions(provider, spec, examples)?;
    Ok(dists
        .iter()
        .map(|d| {
            let y = u.predict_index(d);
            (u.labels()[y].clone(), u.map_to_labels(d)[y])
        })
        .collect())
}

/// `cli.input`, else the named split of the prepared data.
fn examples(s: &Settings, pick: fn(fet_core::trainer::Prepared) -> Vec<MentionExample>) -> Res<Vec<MentionExample>> {
    let examples = match &s.cli.input {
        Some(p) => read_input(p)?,
        None => pick(prepare(&s.run)?),
    };
    if examples.is_empty() {
        return Err(Failure::usage("no input examples; set cli.input"));
    }
    Ok(examples)
}

fn predict(s: &Settings) -> Res {
    let provider = open_provider(s)?;
    let u = load_matrix(s, &*provider)?;
    let spec = spec_for(s, &*provider)?;
    let input = examples(s, |d| if d.test.is_empty() { d.dev } else { d.test })?;
    let preds = predict_all(&u, &*provider, &spec, &input)?;
    let mut out = sink(s)?;
    for (ex, (label, prob)) in input.iter().zip(preds) {
        write_line(&mut *out, &json!({ "id": ex.id, "label": label, "prob": prob }))?;
    }
    out.flush().map_err(|e| Failure::data(e.to_string()))
}

fn generate(s: &Settings) -> Res {
    let provider = open_provider(s)?;
    let u = load_matrix(s, &*provider)?;
    let spec = spec_for(s, &*provider)?;
    let hp = &s.run.hyperparams;
    hp.validate()?;
    let input = examples(s, |d| d.train)?;
    let mut out = sink(s)?;
    let none = HashSet::new();
    for ex in &input {
        let (t, _) = predict_type_word(&*provider, &u, &spec, ex)?;
        let word = provider.vocab().token(t).to_string();
        for g in generate_instances(&*provider, &spec, ex, &word, hp.m, hp.beam_width, &none)? {
            write_line(
                &mut *out,
                &json!({ "source_id": g.source_id, "type_word": g.type_word, "surface": g.surface, "score": g.score, "k": g.k }),
            )?;
        }
    }
    out.flush().map_err(|e| Failure::data(e.to_string()))
}

// ---------------------------------------------------------------------------
// eval / sample

#[derive(Deserialize)]
struct Labeled {
    id: String,
    label: String,
}

/// `id -> label`; for repeated ids the deepest label wins.
fn read_labels(path: &Path) -> Res<BTreeMap<String, LabelPath>> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    let mut out: BTreeMap<String, LabelPath> = BTreeMap::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |e: String| Failure::data(format!("{}:{}: {e}", path.display(), n + 1));
        let rec: Labeled = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let label = LabelPath::parse(&rec.label).map_err(|e| bad(e.to_string()))?;
        match out.get(&rec.id) {
            Some(old) if old.depth() >= label.depth() => {}
            _ => {
                out.insert(rec.id, label);
            }
        }
    }
    Ok(out)
}

fn eval(s: &Settings) -> Res {
    let gold_path =
        s.cli.gold.as_ref().or(s.run.data.test.as_ref()).ok_or_else(|| Failure::usage("eval needs --gold"))?;
    let pred_path = s.cli.pred.as_ref().ok_or_else(|| Failure::usage("eval needs --pred"))?;
    let gold = read_labels(gold_path)?;
    let pred = read_labels(pred_path)?;
    let mut labels: BTreeSet<LabelPath> = gold.values().cloned().collect();
    labels.extend(pred.values().cloned());
    let h = LabelHierarchy::build(labels, &BTreeMap::new())?;
    let mut pairs = Vec::with_capacity(gold.len());
    for (id, g) in &gold {
        let p = pred.get(id).ok_or_else(|| Failure::data(format!("no prediction for id {id:?}")))?;
        pairs.push((g.clone(), p.clone()));
    }
    let extra = pred.keys().filter(|id| !gold.contains_key(*id)).count();
    if extra > 0 {
        log::warn!("{extra} predictions have no gold label and were ignored");
    }
    let r = evaluate(&pairs, &h)?;
    eprintln!("metric           value");
    eprintln!("strict_acc       {:.4}", r.strict_acc);
    eprintln!("loose_micro_f1   {:.4}", r.loose_micro_f1);
    eprintln!("loose_macro_f1   {:.4}", r.loose_macro_f1);
    eprintln!("n                {}", r.n);
    emit(s, &r)
}

fn sample(s: &Settings) -> Res {
    if s.run.data.corpus.is_none() {
        return Err(Failure::usage("sample needs data.corpus"));
    }
    let mut run = s.run.clone();
    run.data.train = None;
    run.data.dev = None;
    let data = prepare(&run)?;
    let dir = &s.run.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let (train_path, dev_path) = (dir.join("train.jsonl"), dir.join("dev.jsonl"));
    write_dataset(&train_path, &data.train)?;
    write_dataset(&dev_path, &data.dev)?;
    emit(
        s,
        &json!({ "train": train_path, "dev": dev_path, "train_n": data.train.len(), "dev_n": data.dev.len(), "seed": s.run.seed }),
    )
}
