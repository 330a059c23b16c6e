//! Synthetic corpora and oracles for tests, demos and smoke runs.
//!
//! The typing fixture has eight labels on two levels and ten examples per
//! label. Each example's typing prompt puts most of its mass on a type word
//! unique to that example, plus a shared coarse word (the root label's
//! name). Siblings are therefore separable only through the unique words,
//! and the dev split's words never occur in the train split. Generation
//! from a train example proposes the mentions of the next five examples of
//! the same label, and typing those generated instances in the source
//! context lights up their own type words. Every dev example is reached
//! this way, so augmentation supplies the evidence the few-shot split
//! lacks.

use std::path::Path;

use crate::backend::{DistSpec, OracleBuilder, SyntheticOracle};
use crate::error::Result;
use crate::hierarchy::{LabelHierarchy, LabelPath};
use crate::prompts::TemplateSpec;
use crate::trainer::{write_dataset, Hyperparams, MentionExample, RunConfig};

pub const FIXTURE_LABELS: [&str; 8] = [
    "/location",
    "/location/city",
    "/location/country",
    "/organization",
    "/organization/company",
    "/person",
    "/person/artist",
    "/person/athlete",
];

pub const PER_LABEL: usize = 10;
/// Successors proposed by each generation prompt.
const FANOUT: usize = 5;

const SPECIALS: [&str; 3] = ["[MASK]", "[PAD]", "[UNK]"];

pub struct TypingFixture {
    pub hierarchy: LabelHierarchy,
    pub corpus: Vec<MentionExample>,
    pub oracle: SyntheticOracle,
}

fn slug(label: &LabelPath) -> String {
    label.segments().join("_")
}

fn mention(label: &LabelPath, i: usize) -> String {
    format!("{}_ent{i}", slug(label))
}

fn type_word(label: &LabelPath, i: usize) -> String {
    format!("{}_kind{i}", slug(label))
}

fn context(i: usize, m: &str) -> String {
    format!("Report {i}: {m} made the news.")
}

fn typing_peaks(label: &LabelPath, i: usize) -> DistSpec {
    let w = type_word(label, i);
    let coarse = label.segments()[0].clone();
    DistSpec::Peaks { peaks: [(w, 0.6), (coarse, 0.25)].into_iter().collect() }
}

/// Builds the fixture. Pure and deterministic.
pub fn typing_fixture() -> TypingFixture {
    let hierarchy = LabelHierarchy::from_strs(FIXTURE_LABELS).expect("fixture labels are valid");
    let spec = TemplateSpec::default();

    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    for label in hierarchy.labels() {
        tokens.push(label.last_segment().to_string());
    }
    for label in hierarchy.labels() {
        for i in 0..PER_LABEL {
            tokens.push(mention(label, i));
            tokens.push(type_word(label, i));
        }
    }
    let mut b = OracleBuilder::new(&tokens, "[MASK]", &SPECIALS).unk("[UNK]");

    let mut corpus = Vec::new();
    for label in hierarchy.labels() {
        for i in 0..PER_LABEL {
            let m = mention(label, i);
            let text = context(i, &m);
            let ex = MentionExample::locate(format!("{}-{i}", slug(label)), &text, &m, label.clone())
                .expect("mention occurs in its context");

            let typing = spec.render_typing(&text, &m).expect("fixture prompt renders");
            b.entry(&typing.text, 0, &Default::default(), typing_peaks(label, i));

            let t = type_word(label, i);
            let generation = spec.render_generation(&text, &m, &t, 1).expect("fixture prompt renders");
            let mut peaks: Vec<(String, f64)> =
                (1..=FANOUT).map(|step| (mention(label, (i + step) % PER_LABEL), 0.2 - 0.02 * step as f64)).collect();
            let successors: f64 = peaks.iter().map(|p| p.1).sum();
            peaks.push((m.clone(), 1.0 - successors));
            b.entry(&generation.text, 0, &Default::default(), DistSpec::Peaks { peaks: peaks.into_iter().collect() });

            for step in 1..=FANOUT {
                let k = (i + step) % PER_LABEL;
                let sub = ex.substituted("aug", &mention(label, k), label.clone()).expect("substitution is valid");
                let prompt = spec.render_typing(&sub.text, sub.mention()).expect("fixture prompt renders");
                b.entry(&prompt.text, 0, &Default::default(), typing_peaks(label, k));
            }
            corpus.push(ex);
        }
    }
    TypingFixture { hierarchy, corpus, oracle: b.build().expect("fixture oracle is consistent") }
}

/// Settings the shipped fixture run uses.
pub fn fixture_hyperparams() -> Hyperparams {
    Hyperparams { lr: 0.2, ..Hyperparams::default() }
}

pub fn fixture_config() -> RunConfig {
    let mut cfg = RunConfig { seed: 13, hyperparams: fixture_hyperparams(), ..RunConfig::default() };
    cfg.data.corpus = Some("corpus.jsonl".into());
    cfg.provider.oracle = Some("oracle.json".into());
    cfg.output_dir = "runs".into();
    cfg
}

/// Writes `oracle.json`, `corpus.jsonl` and `run.toml` into `dir`.
pub fn write_fixture(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
    let fx = typing_fixture();
    fx.oracle.save(&dir.join("oracle.json"))?;
    write_dataset(&dir.join("corpus.jsonl"), &fx.corpus)?;
    let path = dir.join("run.toml");
    std::fs::write(&path, fixture_config().to_toml()).map_err(|e| crate::error::Error::io(&path, e))
}

/// A small generation oracle around "New York Times" and the type word
/// "newspaper". The tables are set up so the two best new surfaces are
/// "China Daily" (k=2, score ln 0.6 + ln 0.9) and "Reuters" (k=1,
/// ln 0.5), the source mention itself ties "Reuters", and "Reuters" can
/// also be spelled `Reu ##ters` at k=2.
pub struct NewspaperFixture {
    pub oracle: SyntheticOracle,
    pub example: MentionExample,
    pub type_word: &'static str,
}

pub fn newspaper() -> NewspaperFixture {
    let tokens = [
        "[MASK]",
        "[PAD]",
        "New",
        "York",
        "Times",
        "Reuters",
        "Reu",
        "##ters",
        "China",
        "Daily",
        "the",
        "Washington",
        "Post",
        "Guardian",
        "newspaper",
        "company",
    ];
    let spec = TemplateSpec::default();
    let text = "The New York Times reported the story";
    let example = MentionExample::locate(
        "nyt",
        text,
        "New York Times",
        LabelPath::parse("/organization/company").expect("valid"),
    )
    .expect("mention occurs");
    let t = "newspaper";
    let mut b = OracleBuilder::new(tokens, "[MASK]", &["[PAD]"]);
    let typing = spec.render_typing(text, example.mention()).expect("renders");
    b.entry_with(&typing.text, 0, &[], DistSpec::peaks([("newspaper", 0.7), ("company", 0.2)]));

    let p1 = spec.render_generation(text, example.mention(), t, 1).expect("renders").text;
    b.entry_with(
        &p1,
        0,
        &[],
        DistSpec::peaks([("Reuters", 0.5), ("Guardian", 0.2), ("Times", 0.1), ("Reu", 0.1), ("the", 0.1)]),
    );

    let p2 = spec.render_generation(text, example.mention(), t, 2).expect("renders").text;
    b.entry_with(&p2, 0, &[], DistSpec::peaks([("China", 0.6), ("the", 0.3), ("Reu", 0.1)]));
    b.entry_with(&p2, 1, &[(0, "China")], DistSpec::peaks([("Daily", 0.9), ("Post", 0.1)]));
    b.entry_with(&p2, 1, &[(0, "Reu")], DistSpec::peaks([("##ters", 0.95), ("Post", 0.05)]));
    b.entry_with(&p2, 1, &[(0, "the")], DistSpec::peaks([("Guardian", 0.5), ("Post", 0.5)]));

    let p3 = spec.render_generation(text, example.mention(), t, 3).expect("renders").text;
    b.entry_with(&p3, 0, &[], DistSpec::peaks([("New", 0.5), ("the", 0.5)]));
    b.entry_with(&p3, 1, &[(0, "New")], DistSpec::peaks([("York", 1.0)]));
    b.entry_with(&p3, 2, &[(0, "New"), (1, "York")], DistSpec::peaks([("Times", 1.0)]));
    b.entry_with(&p3, 1, &[(0, "the")], DistSpec::peaks([("Washington", 0.6), ("New", 0.4)]));
    b.entry_with(&p3, 2, &[(0, "the"), (1, "Washington")], DistSpec::peaks([("Post", 1.0)]));
    b.entry_with(&p3, 2, &[(0, "the"), (1, "New")], DistSpec::peaks([("York", 1.0)]));

    NewspaperFixture { oracle: b.build().expect("newspaper oracle is consistent"), example, type_word: t }
}
