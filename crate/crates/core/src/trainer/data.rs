//! JSONL datasets and few-shot sampling.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{LabelHierarchy, LabelPath};

/// One line of a dataset file. Offsets count Unicode scalar values, not
/// bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub text: String,
    pub start: usize,
    pub end: usize,
    pub label: String,
}

/// A context, the mention span inside it, and the gold label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MentionExample {
    pub id: String,
    pub text: String,
    /// Character offsets `[start, end)` into `text`.
    pub span: (usize, usize),
    pub label: LabelPath,
    mention: String,
}

impl MentionExample {
    pub fn new(id: impl Into<String>, text: impl Into<String>, span: (usize, usize), label: LabelPath) -> Result<Self> {
        let text = text.into();
        let (start, end) = span;
        let n = text.chars().count();
        if start >= end || end > n {
            return Err(Error::Contract(format!("span {start}..{end} invalid for text of {n} characters")));
        }
        let mention: String = text.chars().skip(start).take(end - start).collect();
        if mention.trim().is_empty() {
            return Err(Error::Contract("mention span is blank".into()));
        }
        Ok(Self { id: id.into(), text, span, label, mention })
    }

    /// Builds an example whose mention is the first occurrence of `mention`
    /// in `text`.
    pub fn locate(id: impl Into<String>, text: &str, mention: &str, label: LabelPath) -> Result<Self> {
        let byte =
            text.find(mention).ok_or_else(|| Error::Contract(format!("mention {mention:?} not found in {text:?}")))?;
        let start = text[..byte].chars().count();
        let end = start + mention.chars().count();
        Self::new(id, text, (start, end), label)
    }

    pub fn mention(&self) -> &str {
        &self.mention
    }

    /// The same context with the mention replaced by `surface`.
    pub fn substituted(&self, id: impl Into<String>, surface: &str, label: LabelPath) -> Result<Self> {
        let (start, end) = self.span;
        let before: String = self.text.chars().take(start).collect();
        let after: String = self.text.chars().skip(end).collect();
        let text = format!("{before}{surface}{after}");
        let new_end = start + surface.chars().count();
        Self::new(id, text, (start, new_end), label)
    }

    pub fn record(&self) -> ExampleRecord {
        ExampleRecord {
            id: self.id.clone(),
            text: self.text.clone(),
            start: self.span.0,
            end: self.span.1,
            label: self.label.to_string(),
        }
    }
}

/// Reads raw records without label validation. Used to discover the label
/// set before the hierarchy exists.
pub fn read_records(path: &Path) -> Result<Vec<(usize, ExampleRecord)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExampleRecord = serde_json::from_str(&line).map_err(|e| Error::Data {
            path: path.display().to_string(),
            line: n + 1,
            reason: e.to_string(),
        })?;
        out.push((n + 1, rec));
    }
    Ok(out)
}

/// Labels appearing in a dataset file.
pub fn dataset_labels(path: &Path) -> Result<BTreeSet<LabelPath>> {
    read_records(path)?
        .into_iter()
        .map(|(line, r)| {
            LabelPath::parse(&r.label).map_err(|e| Error::Data {
                path: path.display().to_string(),
                line,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Loads and validates a JSONL dataset against the hierarchy.
///
/// A mention annotated with several paths appears as several lines sharing
/// an id; only the deepest path is kept (ties: the first seen).
pub fn load_dataset(path: &Path, h: &LabelHierarchy) -> Result<Vec<MentionExample>> {
    let display = path.display().to_string();
    let data_err = |line: usize, reason: String| Error::Data { path: display.clone(), line, reason };
    let mut out: Vec<MentionExample> = Vec::new();
    let mut by_id: BTreeMap<String, usize> = BTreeMap::new();
    for (line, rec) in read_records(path)? {
        let label = LabelPath::parse(&rec.label).map_err(|e| data_err(line, e.to_string()))?;
        if !h.contains(&label) {
            return Err(data_err(line, format!("label {label} is not in the hierarchy")));
        }
        let ex = MentionExample::new(rec.id.clone(), rec.text, (rec.start, rec.end), label)
            .map_err(|e| data_err(line, e.to_string()))?;
        match by_id.get(&rec.id) {
            Some(&i) => {
                log::warn!("{display}:{line}: id {} has several labels; keeping the deepest", rec.id);
                if ex.label.depth() > out[i].label.depth() {
                    out[i] = ex;
                }
            }
            None => {
                by_id.insert(rec.id, out.len());
                out.push(ex);
            }
        }
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, examples: &[MentionExample]) -> Result<()> {
    let mut buf = Vec::new();
    for ex in examples {
        serde_json::to_writer(&mut buf, &ex.record())?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// `K` train and `K` dev examples per label, disjoint and reproducible for
/// a given seed. Labels are visited in sorted order; each label's examples
/// are shuffled by its own RNG stream.
pub fn sample_few_shot(
    data: &[MentionExample],
    shots: usize,
    seed: u64,
) -> Result<(Vec<MentionExample>, Vec<MentionExample>)> {
    if shots == 0 {
        return Err(Error::Config("shots must be at least 1".into()));
    }
    let mut by_label: BTreeMap<&LabelPath, Vec<&MentionExample>> = BTreeMap::new();
    for ex in data {
        by_label.entry(&ex.label).or_default().push(ex);
    }
    let mut train = Vec::new();
    let mut dev = Vec::new();
    for (stream, (label, mut exs)) in by_label.into_iter().enumerate() {
        if exs.len() < 2 * shots {
            return Err(Error::InsufficientExamples { label: label.to_string(), have: exs.len(), need: 2 * shots });
        }
        exs.sort_by(|a, b| a.id.cmp(&b.id));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream as u64 + 1);
        exs.shuffle(&mut rng);
        train.extend(exs[..shots].iter().map(|e| (*e).clone()));
        dev.extend(exs[shots..2 * shots].iter().map(|e| (*e).clone()));
    }
    Ok((train, dev))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(s: &str) -> LabelPath {
        LabelPath::parse(s).unwrap()
    }

    fn write(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    fn hier() -> LabelHierarchy {
        LabelHierarchy::from_strs(["/org", "/org/company", "/person"]).unwrap()
    }

    #[test]
    fn loads_valid_file() {
        let f = write(&[
            r#"{"id":"1","text":"Acme hired Bob.","start":0,"end":4,"label":"/org/company"}"#,
            r#"{"id":"2","text":"Acme hired Bob.","start":11,"end":14,"label":"/person"}"#,
            r#"{"id":"3","text":"Zürich is big.","start":0,"end":6,"label":"/org"}"#,
        ]);
        let data = load_dataset(f.path(), &hier()).unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!(data[0].mention(), "Acme");
        assert_eq!(data[1].mention(), "Bob");
        assert_eq!(data[2].mention(), "Zürich");
    }

    #[test]
    fn rejects_out_of_bounds_span_with_line_number() {
        let f = write(&[
            r#"{"id":"1","text":"Acme","start":0,"end":4,"label":"/org"}"#,
            r#"{"id":"2","text":"Acme","start":0,"end":9,"label":"/org"}"#,
        ]);
        match load_dataset(f.path(), &hier()) {
            Err(Error::Data { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_label_and_bad_json() {
        let f = write(&[r#"{"id":"1","text":"Acme","start":0,"end":4,"label":"/x/y"}"#]);
        let err = load_dataset(f.path(), &hier()).unwrap_err();
        assert!(err.to_string().contains("/x/y"), "{err}");
        let f = write(&["{not json"]);
        assert!(matches!(load_dataset(f.path(), &hier()), Err(Error::Data { line: 1, .. })));
    }

    #[test]
    fn multi_label_mentions_keep_deepest_path() {
        let f = write(&[
            r#"{"id":"1","text":"Acme","start":0,"end":4,"label":"/org"}"#,
            r#"{"id":"1","text":"Acme","start":0,"end":4,"label":"/org/company"}"#,
        ]);
        let data = load_dataset(f.path(), &hier()).unwrap();
        assert_eq!(data.len(), 1);
        assert_eq!(data[0].label, lp("/org/company"));
    }

    #[test]
    fn substitution_moves_the_span() {
        let ex = MentionExample::locate("a", "Visit Kauai today.", "Kauai", lp("/org")).unwrap();
        let sub = ex.substituted("b", "Hawaii Island", lp("/org")).unwrap();
        assert_eq!(sub.text, "Visit Hawaii Island today.");
        assert_eq!(sub.mention(), "Hawaii Island");
    }

    fn corpus(labels: usize, per_label: usize) -> Vec<MentionExample> {
        let mut out = Vec::new();
        for l in 0..labels {
            for i in 0..per_label {
                let label = lp(&format!("/l{l:02}"));
                out.push(MentionExample::new(format!("{l}-{i}"), "m", (0, 1), label).unwrap());
            }
        }
        out
    }

    #[test]
    fn sampling_counts_and_determinism() {
        let data = corpus(21, 12);
        let (train, dev) = sample_few_shot(&data, 5, 7).unwrap();
        assert_eq!((train.len(), dev.len()), (105, 105));
        let train_ids: BTreeSet<_> = train.iter().map(|e| &e.id).collect();
        assert!(dev.iter().all(|e| !train_ids.contains(&e.id)));
        assert_eq!(sample_few_shot(&data, 5, 7).unwrap(), (train.clone(), dev));
        let (other, _) = sample_few_shot(&data, 5, 8).unwrap();
        assert_ne!(other, train);
    }

    #[test]
    fn sampling_is_independent_of_input_order() {
        let data = corpus(3, 10);
        let mut reversed = data.clone();
        reversed.reverse();
        let (a, _) = sample_few_shot(&data, 4, 1).unwrap();
        let (b, _) = sample_few_shot(&reversed, 4, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_needs_two_k_per_label() {
        let mut data = corpus(2, 10);
        data.truncate(19);
        match sample_few_shot(&data, 5, 0) {
            Err(Error::InsufficientExamples { label, have: 9, need: 10 }) => assert_eq!(label, "/l01"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
