//! Type-label tree built from slash-separated label paths.
//!
//! The tree is derived from the paths alone: `/organization/company` is a
//! child of `/organization` when both are present. Labels whose prefix is
//! missing from the label set are root-level. Root-level labels hang off an
//! implicit root and are therefore siblings of one another.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A label such as `/organization/company`, stored lowercase.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct LabelPath {
    segments: Vec<String>,
    canonical: String,
}

impl LabelPath {
    pub fn parse(s: &str) -> Result<Self> {
        let malformed = |reason: String| Error::LabelPath { path: s.to_string(), reason };
        let rest = s.strip_prefix('/').ok_or_else(|| malformed("must start with '/'".into()))?;
        let mut segments = Vec::new();
        for (i, seg) in rest.split('/').enumerate() {
            if seg.trim().is_empty() {
                return Err(malformed(format!("segment {} is empty", i + 1)));
            }
            segments.push(seg.to_lowercase());
        }
        Ok(Self::from_segments(segments))
    }

    fn from_segments(segments: Vec<String>) -> Self {
        let canonical = format!("/{}", segments.join("/"));
        Self { segments, canonical }
    }

    pub fn segments(&self) -> &[String] {
        &self.segments
    }

    pub fn as_str(&self) -> &str {
        &self.canonical
    }

    pub fn depth(&self) -> usize {
        self.segments.len()
    }

    pub fn last_segment(&self) -> &str {
        self.segments.last().expect("label path is never empty")
    }

    /// The path with its last segment removed, if any.
    pub fn prefix(&self) -> Option<LabelPath> {
        (self.segments.len() > 1).then(|| Self::from_segments(self.segments[..self.segments.len() - 1].to_vec()))
    }
}

impl Ord for LabelPath {
    fn cmp(&self, other: &Self) -> Ordering {
        self.canonical.cmp(&other.canonical)
    }
}

impl PartialOrd for LabelPath {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for LabelPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical)
    }
}

impl fmt::Debug for LabelPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LabelPath({})", self.canonical)
    }
}

impl FromStr for LabelPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl Serialize for LabelPath {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.canonical)
    }
}

impl<'de> Deserialize<'de> for LabelPath {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        LabelPath::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Splits the final path segment into name words: `sports_team` gives
/// `["sports", "team"]`.
pub fn default_names(label: &LabelPath) -> Vec<String> {
    label.last_segment().split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_string).collect()
}

/// Immutable label tree. Label indices follow the sorted order of the paths,
/// which is also the row order of the correlation matrix.
#[derive(Debug, Clone)]
pub struct LabelHierarchy {
    labels: Vec<LabelPath>,
    index: BTreeMap<LabelPath, usize>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    roots: Vec<usize>,
    names: Vec<Vec<String>>,
}

impl LabelHierarchy {
    /// Builds the tree. `extra_names` maps a canonical label path to
    /// additional surface names appended after the defaults.
    pub fn build(
        paths: impl IntoIterator<Item = LabelPath>,
        extra_names: &BTreeMap<String, Vec<String>>,
    ) -> Result<Self> {
        let mut set = BTreeSet::new();
        for p in paths {
            if !set.insert(p.clone()) {
                return Err(Error::DuplicateLabel(p.to_string()));
            }
        }
        if set.is_empty() {
            return Err(Error::Config("label set is empty".into()));
        }

        let labels: Vec<LabelPath> = set.into_iter().collect();
        let index: BTreeMap<LabelPath, usize> = labels.iter().cloned().enumerate().map(|(i, l)| (l, i)).collect();

        let parent: Vec<Option<usize>> =
            labels.iter().map(|l| l.prefix().and_then(|p| index.get(&p).copied())).collect();
        let mut children = vec![Vec::new(); labels.len()];
        let mut roots = Vec::new();
        for (i, p) in parent.iter().enumerate() {
            match p {
                Some(p) => children[*p].push(i),
                None => roots.push(i),
            }
        }

        let mut names: Vec<Vec<String>> = labels.iter().map(default_names).collect();
        for (key, extra) in extra_names {
            let label = LabelPath::parse(key)?;
            let i = *index.get(&label).ok_or_else(|| Error::UnknownLabel(label.to_string()))?;
            for name in extra {
                let name = name.trim().to_string();
                if !name.is_empty() && !names[i].contains(&name) {
                    names[i].push(name);
                }
            }
        }
        for (i, n) in names.iter_mut().enumerate() {
            if n.is_empty() {
                // Segments made only of punctuation; fall back to the raw segment.
                n.push(labels[i].last_segment().to_string());
            }
        }

        Ok(Self { labels, index, parent, children, roots, names })
    }

    /// Convenience for tests and fixtures: parse every string, no extra names.
    pub fn from_strs<'a>(paths: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let parsed = paths.into_iter().map(LabelPath::parse).collect::<Result<Vec<_>>>()?;
        Self::build(parsed, &BTreeMap::new())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[LabelPath] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &LabelPath {
        &self.labels[i]
    }

    pub fn index_of(&self, label: &LabelPath) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn require(&self, label: &LabelPath) -> Result<usize> {
        self.index_of(label).ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn contains(&self, label: &LabelPath) -> bool {
        self.index.contains_key(label)
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    pub fn parent_of(&self, label: &LabelPath) -> Result<Option<&LabelPath>> {
        let i = self.require(label)?;
        Ok(self.parent[i].map(|p| &self.labels[p]))
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    /// Labels sharing `i`'s parent, excluding `i`. Root-level labels share
    /// the implicit root.
    pub fn siblings(&self, i: usize) -> Vec<usize> {
        let group = match self.parent[i] {
            Some(p) => &self.children[p],
            None => &self.roots,
        };
        group.iter().copied().filter(|&j| j != i).collect()
    }

    pub fn siblings_of(&self, label: &LabelPath) -> Result<BTreeSet<LabelPath>> {
        let i = self.require(label)?;
        Ok(self.siblings(i).into_iter().map(|j| self.labels[j].clone()).collect())
    }

    /// Every unordered sibling pair `(a, b)` with `a < b`, each listed once.
    pub fn sibling_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        let groups = std::iter::once(&self.roots).chain(self.children.iter());
        for group in groups {
            for (n, &a) in group.iter().enumerate() {
                for &b in &group[n + 1..] {
                    pairs.push((a.min(b), a.max(b)));
                }
            }
        }
        pairs.sort_unstable();
        pairs
    }

    /// `(child, parent)` for every label that has a parent.
    pub fn parent_edges(&self) -> Vec<(usize, usize)> {
        self.parent.iter().enumerate().filter_map(|(i, p)| p.map(|p| (i, p))).collect()
    }

    /// Index form of [`Self::ancestor_closure`], ordered root first.
    pub fn closure_indices(&self, i: usize) -> Vec<usize> {
        let mut out = vec![i];
        let mut cur = i;
        while let Some(p) = self.parent[cur] {
            out.push(p);
            cur = p;
        }
        out.reverse();
        out
    }

    /// The label together with all of its transitive parents.
    pub fn ancestor_closure(&self, label: &LabelPath) -> Result<BTreeSet<LabelPath>> {
        let i = self.require(label)?;
        Ok(self.closure_indices(i).into_iter().map(|j| self.labels[j].clone()).collect())
    }

    pub fn names(&self, i: usize) -> &[String] {
        &self.names[i]
    }
}

/// Reads the optional hierarchy file: a JSON object from label path to an
/// array of extra names.
pub fn load_name_file(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: BTreeMap<String, Vec<String>> = serde_json::from_str(&text)?;
    let mut out = BTreeMap::new();
    for (k, v) in raw {
        out.insert(LabelPath::parse(&k)?.to_string(), v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lp(s: &str) -> LabelPath {
        LabelPath::parse(s).unwrap()
    }

    #[test]
    fn parses_paths() {
        assert_eq!(lp("/organization/company").segments(), ["organization", "company"]);
        assert_eq!(lp("/person").segments(), ["person"]);
        assert_eq!(lp("/Org/Sports_Team").as_str(), "/org/sports_team");
    }

    #[test]
    fn rejects_malformed_paths() {
        for bad in ["//company", "organization", "", "/", "/a//b", "/a/"] {
            let err = LabelPath::parse(bad).unwrap_err();
            assert!(matches!(err, Error::LabelPath { .. }), "{bad}: {err}");
        }
        let msg = LabelPath::parse("/a//b").unwrap_err().to_string();
        assert!(msg.contains("segment 2"), "{msg}");
    }

    #[test]
    fn parent_and_siblings() {
        let h = LabelHierarchy::from_strs(["/org", "/org/company", "/org/media"]).unwrap();
        assert_eq!(h.parent_of(&lp("/org/company")).unwrap(), Some(&lp("/org")));
        assert_eq!(h.siblings_of(&lp("/org/company")).unwrap(), BTreeSet::from([lp("/org/media")]));
        assert_eq!(h.sibling_pairs().len(), 1);
        assert_eq!(h.parent_edges().len(), 2);
    }

    #[test]
    fn singleton_has_no_parent_or_siblings() {
        let h = LabelHierarchy::from_strs(["/person"]).unwrap();
        assert_eq!(h.parent_of(&lp("/person")).unwrap(), None);
        assert!(h.siblings_of(&lp("/person")).unwrap().is_empty());
    }

    #[test]
    fn missing_prefix_makes_root_level() {
        let h = LabelHierarchy::from_strs(["/a/b"]).unwrap();
        assert_eq!(h.parent_of(&lp("/a/b")).unwrap(), None);
        assert_eq!(h.roots(), &[0]);
    }

    #[test]
    fn root_level_labels_are_siblings() {
        let h = LabelHierarchy::from_strs(["/person", "/location", "/location/city"]).unwrap();
        assert_eq!(h.siblings_of(&lp("/person")).unwrap(), BTreeSet::from([lp("/location")]));
    }

    #[test]
    fn duplicates_rejected() {
        let err = LabelHierarchy::build([lp("/a"), lp("/A")], &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, Error::DuplicateLabel(_)));
    }

    #[test]
    fn ancestor_closures() {
        let h = LabelHierarchy::from_strs(["/org", "/org/company", "/person", "/a", "/a/b", "/a/b/c"]).unwrap();
        assert_eq!(h.ancestor_closure(&lp("/org/company")).unwrap(), BTreeSet::from([lp("/org"), lp("/org/company")]));
        assert_eq!(h.ancestor_closure(&lp("/person")).unwrap(), BTreeSet::from([lp("/person")]));
        assert_eq!(h.ancestor_closure(&lp("/a/b/c")).unwrap().len(), 3);
        assert!(matches!(h.ancestor_closure(&lp("/zzz")), Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn names_default_and_extend() {
        let extra = BTreeMap::from([("/org/sports_team".to_string(), vec!["club".to_string()])]);
        let h = LabelHierarchy::build([lp("/org"), lp("/org/sports_team")], &extra).unwrap();
        let i = h.index_of(&lp("/org/sports_team")).unwrap();
        assert_eq!(h.names(i), ["sports", "team", "club"]);
        let unknown = BTreeMap::from([("/nope".to_string(), vec!["x".to_string()])]);
        assert!(LabelHierarchy::build([lp("/org")], &unknown).is_err());
    }

    fn arb_paths() -> impl Strategy<Value = Vec<String>> {
        prop::collection::btree_set(prop::collection::vec(prop::sample::select(vec!["a", "b", "c"]), 1..4), 1..15)
            .prop_map(|set| set.into_iter().map(|segs| format!("/{}", segs.join("/"))).collect())
    }

    proptest! {
        #[test]
        fn roundtrip_serialization(segs in prop::collection::vec("[A-Za-z0-9_]{1,6}", 1..5)) {
            let s = format!("/{}", segs.join("/"));
            prop_assert_eq!(LabelPath::parse(&s).unwrap().to_string(), s.to_lowercase());
        }

        #[test]
        fn sibling_and_closure_laws(paths in arb_paths(), seed in any::<u64>()) {
            let h = LabelHierarchy::from_strs(paths.iter().map(String::as_str)).unwrap();
            for i in 0..h.len() {
                let sibs = h.siblings(i);
                prop_assert!(!sibs.contains(&i));
                for s in sibs {
                    prop_assert_eq!(h.parent(s), h.parent(i));
                    prop_assert!(h.siblings(s).contains(&i));
                }
                let closure = h.ancestor_closure(h.label(i)).unwrap();
                for a in &closure {
                    prop_assert!(h.ancestor_closure(a).unwrap().is_subset(&closure));
                }
            }

            // Construction does not depend on input order.
            let mut shuffled = paths.clone();
            let n = shuffled.len();
            shuffled.rotate_left((seed as usize) % n);
            shuffled.reverse();
            let h2 = LabelHierarchy::from_strs(shuffled.iter().map(String::as_str)).unwrap();
            prop_assert_eq!(h.labels(), h2.labels());
            prop_assert_eq!(h.sibling_pairs(), h2.sibling_pairs());
            prop_assert_eq!(h.parent_edges(), h2.parent_edges());
        }
    }
}
