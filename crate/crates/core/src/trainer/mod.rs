//! Few-shot training of the correlation matrix, with generated instances
//! folded in during the second half of training.

mod config;
mod data;

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use self::config::{DataConfig, Hyperparams, MScope, ProviderConfig, RunConfig, TemplateOverrides};
pub use self::data::{
    dataset_labels, load_dataset, read_records, sample_few_shot, write_dataset, ExampleRecord, MentionExample,
};

use crate::backend::{Filled, RenderedPrompt, TokenProvider};
use crate::error::{Error, ProviderError, Result};
use crate::eval::{evaluate, EvalResult};
use crate::generator::{generate_instances, instance_order, GeneratedInstance};
use crate::hierarchy::{LabelHierarchy, LabelPath};
use crate::interpreter::{
    argmax, loss_and_grad, AdamState, Batch, BestSnapshot, Checkpoint, CorrelationMatrix, LabeledExample,
    LossBreakdown, LossWeights, SoftExample,
};
use crate::prompts::TemplateSpec;

/// `1 − ε + ε/n` at `gold`, `ε/n` elsewhere.
pub fn smooth_label(gold: usize, epsilon: f64, n: usize) -> Vec<f64> {
    assert!(gold < n, "gold index {gold} out of range for {n} labels");
    let off = epsilon / n as f64;
    let mut v = vec![off; n];
    v[gold] = 1.0 - epsilon + off;
    v
}

/// Weight of the generated-instance loss at epoch `t` of `total` (1-based):
/// zero through the first half, then rising linearly to 1.
pub fn beta_schedule(t: usize, total: usize) -> f64 {
    if 2 * t <= total {
        0.0
    } else {
        (2 * t - total) as f64 / total as f64
    }
}

/// Token distribution at the typing mask of `ex`.
pub fn typing_distribution(provider: &dyn TokenProvider, spec: &TemplateSpec, ex: &MentionExample) -> Result<Vec<f64>> {
    let prompt = spec.render_typing(&ex.text, ex.mention())?;
    first_distribution(provider.mask_distributions(&prompt, &Filled::new())?)
}

fn first_distribution(dists: Vec<crate::backend::TokenDistribution>) -> Result<Vec<f64>> {
    dists
        .into_iter()
        .next()
        .map(|d| d.into_inner())
        .ok_or_else(|| ProviderError::protocol("no distribution returned").into())
}

/// Typing distributions for many examples, issued as one concurrent batch.
pub fn typing_distributions(
    provider: &dyn TokenProvider,
    spec: &TemplateSpec,
    examples: &[MentionExample],
) -> Result<Vec<Vec<f64>>> {
    let queries = examples
        .iter()
        .map(|ex| Ok((spec.render_typing(&ex.text, ex.mention())?, Filled::new())))
        .collect::<Result<Vec<(RenderedPrompt, Filled)>>>()?;
    provider.mask_distributions_many(&queries).into_iter().map(|r| first_distribution(r?)).collect()
}

/// Most probable label; ties go to the lexicographically smallest path.
pub fn predict(
    u: &CorrelationMatrix,
    provider: &dyn TokenProvider,
    spec: &TemplateSpec,
    ex: &MentionExample,
) -> Result<LabelPath> {
    let d = typing_distribution(provider, spec, ex)?;
    Ok(u.labels()[u.predict_index(&d)].clone())
}

/// Hierarchy and splits for a run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub hierarchy: LabelHierarchy,
    pub train: Vec<MentionExample>,
    pub dev: Vec<MentionExample>,
    pub test: Vec<MentionExample>,
}

/// Builds the hierarchy from every label mentioned in the data files and
/// the name file, then loads the splits. Without an explicit train file,
/// train and dev are sampled from the corpus with the run seed.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let names = match &cfg.data.hierarchy {
        Some(p) => crate::hierarchy::load_name_file(p)?,
        None => BTreeMap::new(),
    };
    let files: Vec<&PathBuf> =
        [&cfg.data.corpus, &cfg.data.train, &cfg.data.dev, &cfg.data.test].into_iter().flatten().collect();
    let mut labels = std::collections::BTreeSet::new();
    for f in &files {
        labels.extend(dataset_labels(f)?);
    }
    for key in names.keys() {
        labels.insert(LabelPath::parse(key)?);
    }
    if labels.is_empty() {
        return Err(Error::Config("no labels: give a corpus or train file".into()));
    }
    let hierarchy = LabelHierarchy::build(labels, &names)?;
    let load = |p: &Option<PathBuf>| -> Result<Vec<MentionExample>> {
        p.as_ref().map_or(Ok(Vec::new()), |p| load_dataset(p, &hierarchy))
    };
    let (train, dev) = match (&cfg.data.train, &cfg.data.corpus) {
        (Some(_), _) => (load(&cfg.data.train)?, load(&cfg.data.dev)?),
        (None, Some(corpus)) => {
            let (t, d) = sample_few_shot(&load_dataset(corpus, &hierarchy)?, cfg.hyperparams.shots, cfg.seed)?;
            if cfg.data.dev.is_some() {
                (t, load(&cfg.data.dev)?)
            } else {
                (t, d)
            }
        }
        (None, None) => return Err(Error::Config("data: train or corpus is required".into())),
    };
    let test = load(&cfg.data.test)?;
    Ok(Prepared { hierarchy, train, dev, test })
}

/// A generated instance placed back in its source context.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedExample {
    pub instance: GeneratedInstance,
    /// Source context with the generated surface as the mention.
    pub example: MentionExample,
    pub target: Vec<f64>,
}

/// Per-epoch record of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub ce: f64,
    pub inc: f64,
    pub exc: f64,
    pub new: f64,
    pub beta: f64,
    pub dev_acc: Option<f64>,
    pub dev_micro: Option<f64>,
    pub dev_macro: Option<f64>,
    pub pool_size: usize,
}

/// Everything `train` needs besides the provider and the data.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub hyperparams: Hyperparams,
    pub spec: TemplateSpec,
    pub seed: u64,
    pub m_scope: MScope,
    pub regen_every: usize,
    /// Written after every epoch and on provider failure.
    pub checkpoint: Option<PathBuf>,
}

impl TrainOptions {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        Ok(Self {
            hyperparams: cfg.hyperparams.clone(),
            spec: cfg.template_spec()?,
            seed: cfg.seed,
            m_scope: cfg.m_scope,
            regen_every: cfg.regen_every,
            checkpoint: None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub matrix: CorrelationMatrix,
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
    pub pool: Vec<AugmentedExample>,
}

impl TrainOutcome {
    /// Best-dev matrix when a dev set was given, otherwise the final one.
    pub fn selected(&self) -> Result<CorrelationMatrix> {
        self.checkpoint.best_matrix()
    }
}

struct Pool {
    examples: Vec<AugmentedExample>,
    token_probs: Vec<Vec<f64>>,
    /// Pool indices grouped by source train index.
    by_source: Vec<Vec<usize>>,
}

/// Trains the matrix for `hyperparams.epochs` epochs.
///
/// With `resume`, training continues after the checkpoint's last completed
/// epoch; given the same inputs the result equals an uninterrupted run.
/// `on_epoch` sees each record as soon as it exists.
pub fn train(
    provider: &dyn TokenProvider,
    h: &LabelHierarchy,
    train_set: &[MentionExample],
    dev_set: &[MentionExample],
    opts: &TrainOptions,
    resume: Option<Checkpoint>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let hp = &opts.hyperparams;
    hp.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let vocab = provider.vocab();
    let spec = opts.spec.clone().with_mask_token(vocab.mask_token());
    spec.validate()?;
    let gold: Vec<usize> = train_set.iter().map(|e| h.require(&e.label)).collect::<Result<_>>()?;
    let dev_gold: Vec<usize> = dev_set.iter().map(|e| h.require(&e.label)).collect::<Result<_>>()?;

    let mut ckpt = match resume {
        Some(c) => {
            if c.labels != h.labels() {
                return Err(Error::Checkpoint("label set differs from the hierarchy".into()));
            }
            c
        }
        None => Checkpoint::new(&CorrelationMatrix::init(h, provider, hp.alpha)?, vocab),
    };
    let mut u = ckpt.matrix()?;
    let batches_per_epoch = train_set.len().div_ceil(hp.batch_size);
    let total_steps = (hp.epochs * batches_per_epoch) as u64;
    let mut adam = ckpt.optimizer.take().unwrap_or_else(|| AdamState::new(u.as_slice().len(), hp.lr, total_steps));

    let interrupted = |err: Error, ckpt: &Checkpoint| -> Error {
        match (err, &opts.checkpoint) {
            (Error::Provider(source), Some(path)) => match ckpt.save(path) {
                Ok(()) => Error::Interrupted { source, checkpoint: path.clone() },
                Err(e) => e,
            },
            (other, _) => other,
        }
    };
    let snapshot = |u: &CorrelationMatrix, adam: &AdamState, ckpt: &Checkpoint, done: usize| Checkpoint {
        values: u.as_slice().to_vec(),
        optimizer: Some(adam.clone()),
        epochs_completed: done,
        ..ckpt.clone()
    };

    let train_probs = typing_distributions(provider, &spec, train_set).map_err(|e| interrupted(e, &ckpt))?;
    let dev_probs = typing_distributions(provider, &spec, dev_set).map_err(|e| interrupted(e, &ckpt))?;

    let weights_for = |beta: f64| LossWeights { lambda: hp.lambda, lambda_new: hp.lambda_new, beta };
    let mut log = Vec::new();
    let mut pool: Option<Pool> = None;
    let mut first_active = None;

    for epoch in ckpt.epochs_completed + 1..=hp.epochs {
        let beta = beta_schedule(epoch, hp.epochs);
        let augment = beta > 0.0 && hp.lambda_new > 0.0;
        if augment {
            let first = *first_active.get_or_insert(epoch);
            let since = epoch - first;
            let due = pool.is_none() || (opts.regen_every > 0 && since % opts.regen_every == 0);
            if due {
                let state = snapshot(&u, &adam, &ckpt, epoch - 1);
                pool =
                    Some(build_pool(provider, h, &spec, train_set, &gold, opts).map_err(|e| interrupted(e, &state))?);
            }
        }
        let active = pool.as_ref().filter(|_| augment);

        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(1 << 32 | epoch as u64);
        order.shuffle(&mut rng);

        let weights = weights_for(beta);
        let mut sums = LossBreakdown::default();
        for chunk in order.chunks(hp.batch_size) {
            let mut batch = Batch::default();
            for &i in chunk {
                batch.labeled.push(LabeledExample { token_probs: &train_probs[i], gold: gold[i] });
                if let Some(p) = active {
                    for &j in &p.by_source[i] {
                        batch
                            .augmented
                            .push(SoftExample { token_probs: &p.token_probs[j], target: &p.examples[j].target });
                    }
                }
            }
            let (parts, grad) = loss_and_grad(&u, &batch, h, &weights);
            adam.step(u.as_mut_slice(), &grad);
            let n = chunk.len() as f64;
            sums.ce += parts.ce * n;
            sums.new += parts.new * n;
            sums.inc += parts.inc;
            sums.exc += parts.exc;
        }
        let n = train_set.len() as f64;
        let nb = batches_per_epoch as f64;

        let dev = dev_metrics(&u, h, &dev_probs, &dev_gold)?;
        let record = EpochRecord {
            epoch,
            ce: sums.ce / n,
            inc: sums.inc / nb,
            exc: sums.exc / nb,
            new: sums.new / n,
            beta,
            dev_acc: dev.map(|d| d.strict_acc),
            dev_micro: dev.map(|d| d.loose_micro_f1),
            dev_macro: dev.map(|d| d.loose_macro_f1),
            pool_size: active.map_or(0, |p| p.examples.len()),
        };
        if let Some(d) = dev {
            if ckpt.best.as_ref().is_none_or(|b| d.strict_acc > b.dev_acc) {
                ckpt.best = Some(BestSnapshot { epoch, dev_acc: d.strict_acc, values: u.as_slice().to_vec() });
            }
        }
        ckpt = snapshot(&u, &adam, &ckpt, epoch);
        if let Some(path) = &opts.checkpoint {
            ckpt.save(path)?;
        }
        on_epoch(&record);
        log.push(record);
    }

    ckpt = snapshot(&u, &adam, &ckpt, ckpt.epochs_completed);
    Ok(TrainOutcome { matrix: u, checkpoint: ckpt, log, pool: pool.map(|p| p.examples).unwrap_or_default() })
}

fn dev_metrics(
    u: &CorrelationMatrix,
    h: &LabelHierarchy,
    probs: &[Vec<f64>],
    gold: &[usize],
) -> Result<Option<EvalResult>> {
    if probs.is_empty() {
        return Ok(None);
    }
    let p = u.column_softmax();
    let pairs: Vec<(LabelPath, LabelPath)> = probs
        .iter()
        .zip(gold)
        .map(|(d, &g)| {
            let q = crate::interpreter::map_with(&p, u.n_labels(), d);
            (h.label(g).clone(), h.label(argmax(&q)).clone())
        })
        .collect();
    evaluate(&pairs, h).map(Some)
}

/// Generates instances for every training example and types them.
fn build_pool(
    provider: &dyn TokenProvider,
    h: &LabelHierarchy,
    spec: &TemplateSpec,
    train_set: &[MentionExample],
    gold: &[usize],
    opts: &TrainOptions,
) -> Result<Pool> {
    let hp = &opts.hyperparams;
    let exclude: HashSet<String> = train_set.iter().map(|e| e.mention().trim().to_lowercase()).collect();
    let generated = generate_all(provider, spec, train_set, hp, &exclude)?;

    let mut chosen: Vec<(usize, GeneratedInstance)> = Vec::new();
    match opts.m_scope {
        MScope::Mention => {
            for (i, insts) in generated.into_iter().enumerate() {
                chosen.extend(insts.into_iter().map(|g| (i, g)));
            }
        }
        MScope::Type => {
            let mut by_type: BTreeMap<usize, Vec<(usize, GeneratedInstance)>> = BTreeMap::new();
            for (i, insts) in generated.into_iter().enumerate() {
                by_type.entry(gold[i]).or_default().extend(insts.into_iter().map(|g| (i, g)));
            }
            for (_, mut insts) in by_type {
                insts.sort_by(|a, b| instance_order(&a.1, &b.1));
                let mut seen = HashSet::new();
                insts.retain(|(_, g)| seen.insert(g.surface.to_lowercase()));
                insts.truncate(hp.m);
                chosen.extend(insts);
            }
        }
    }

    let mut examples = Vec::with_capacity(chosen.len());
    let mut by_source = vec![Vec::new(); train_set.len()];
    for (i, inst) in chosen {
        let src = &train_set[i];
        let id = format!("{}#gen{}", src.id, by_source[i].len());
        let example = src.substituted(id, &inst.surface, src.label.clone())?;
        by_source[i].push(examples.len());
        examples.push(AugmentedExample { instance: inst, example, target: smooth_label(gold[i], hp.epsilon, h.len()) });
    }
    let exs: Vec<MentionExample> = examples.iter().map(|a| a.example.clone()).collect();
    let token_probs = typing_distributions(provider, spec, &exs)?;
    Ok(Pool { examples, token_probs, by_source })
}

fn generate_one(
    provider: &dyn TokenProvider,
    spec: &TemplateSpec,
    ex: &MentionExample,
    hp: &Hyperparams,
    exclude: &HashSet<String>,
) -> Result<Vec<GeneratedInstance>> {
    let d = typing_distribution(provider, spec, ex)?;
    let vocab = provider.vocab();
    let probs = crate::backend::TokenDistribution::new(d)?.without_specials(vocab);
    let t = argmax(&probs);
    if probs[t] <= 0.0 {
        return Err(Error::Contract("typing distribution has no mass on ordinary tokens".into()));
    }
    generate_instances(provider, spec, ex, vocab.token(t), hp.m, hp.beam_width, exclude)
}

#[cfg(feature = "parallel")]
fn generate_all(
    provider: &dyn TokenProvider,
    spec: &TemplateSpec,
    train_set: &[MentionExample],
    hp: &Hyperparams,
    exclude: &HashSet<String>,
) -> Result<Vec<Vec<GeneratedInstance>>> {
    use rayon::prelude::*;
    train_set.par_iter().map(|ex| generate_one(provider, spec, ex, hp, exclude)).collect()
}

#[cfg(not(feature = "parallel"))]
fn generate_all(
    provider: &dyn TokenProvider,
    spec: &TemplateSpec,
    train_set: &[MentionExample],
    hp: &Hyperparams,
    exclude: &HashSet<String>,
) -> Result<Vec<Vec<GeneratedInstance>>> {
    train_set.iter().map(|ex| generate_one(provider, spec, ex, hp, exclude)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothing_anchors() {
        assert_eq!(smooth_label(0, 0.1, 4), vec![0.925, 0.025, 0.025, 0.025]);
        assert_eq!(smooth_label(2, 0.0, 3), vec![0.0, 0.0, 1.0]);
        let v = smooth_label(1, 0.3, 7);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(argmax(&v), 1);
    }

    #[test]
    fn beta_anchors() {
        assert_eq!(beta_schedule(15, 30), 0.0);
        assert_eq!(beta_schedule(24, 30), 0.6);
        assert_eq!(beta_schedule(30, 30), 1.0);
        assert_eq!(beta_schedule(1, 1), 1.0);
        assert_eq!(beta_schedule(2, 3), 1.0 / 3.0);
    }
}
