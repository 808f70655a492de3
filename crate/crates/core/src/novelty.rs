//! Structural novelty via MinHash estimates of shingle-set Jaccard similarity.
//!
//! A source file is normalized, cut into overlapping 10-character shingles and
//! compressed into 256 per-permutation minima. The novelty of a candidate is
//! one minus its highest estimated similarity to anything already in the
//! corpus.

use std::collections::{BTreeSet, HashSet};
use std::io::{self, BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, ExecMode};
use crate::hashing::hash_bytes;

pub const SHINGLE_LEN: usize = 10;
pub const NUM_PERMUTATIONS: usize = 256;
pub const DEFAULT_TAU_NOV: f64 = 0.90;

/// 2^61 - 1.
const PRIME: u64 = (1 << 61) - 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NoveltyError {
    #[error("normalized text has {len} characters, fewer than the shingle length {n}")]
    TooShort { len: usize, n: usize },
    #[error("cannot sign an empty shingle set")]
    EmptySet,
    #[error("signatures come from different permutation families ({left:#x} vs {right:#x})")]
    FamilyMismatch { left: u64, right: u64 },
    #[error("Jaccard similarity of two empty sets is undefined")]
    BothEmpty,
    #[error("signature has {0} values, expected {NUM_PERMUTATIONS}")]
    BadLength(usize),
    #[error("corpus already contains an entry with id {0:?}")]
    DuplicateEntry(String),
}

#[derive(Debug, Error)]
pub enum CorpusLoadError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: {source}")]
    Invalid { line: usize, source: NoveltyError },
}

/// Trims every line, collapses whitespace runs to one space and drops lines
/// that end up empty. Lines are rejoined with `\n`.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        let mut words = line.split_whitespace();
        let Some(first) = words.next() else { continue };
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(first);
        for w in words {
            out.push(' ');
            out.push_str(w);
        }
    }
    out
}

/// Set of distinct character n-grams. Every member has exactly `n` chars.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ShingleSet {
    pub n: usize,
    pub shingles: BTreeSet<String>,
}

impl ShingleSet {
    pub fn len(&self) -> usize {
        self.shingles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shingles.is_empty()
    }

    /// Builds a set from explicit members, dropping any of the wrong length.
    pub fn from_members<I, S>(n: usize, members: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let shingles = members
            .into_iter()
            .map(Into::into)
            .filter(|s: &String| s.chars().count() == n)
            .collect();
        ShingleSet { n, shingles }
    }
}

/// Overlapping character `n`-grams of `text` taken as is.
pub fn shingle_raw(text: &str, n: usize) -> Result<ShingleSet, NoveltyError> {
    let bounds: Vec<usize> = text
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(text.len()))
        .collect();
    let chars = bounds.len() - 1;
    if n == 0 || chars < n {
        return Err(NoveltyError::TooShort { len: chars, n });
    }
    let shingles = (0..=chars - n)
        .map(|i| text[bounds[i]..bounds[i + n]].to_string())
        .collect();
    Ok(ShingleSet { n, shingles })
}

/// Overlapping character `n`-grams of the normalized text.
pub fn shingle(text: &str, n: usize) -> Result<ShingleSet, NoveltyError> {
    shingle_raw(&normalize(text), n)
}

/// `|a ∩ b| / |a ∪ b|`.
pub fn exact_jaccard(a: &ShingleSet, b: &ShingleSet) -> Result<f64, NoveltyError> {
    if a.is_empty() && b.is_empty() {
        return Err(NoveltyError::BothEmpty);
    }
    let inter = a.shingles.intersection(&b.shingles).count();
    let union = a.len() + b.len() - inter;
    Ok(inter as f64 / union as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinHashSignature {
    /// Seed of the permutation family the values were drawn with.
    pub seed: u64,
    /// Exactly [`NUM_PERMUTATIONS`] minima.
    pub values: Vec<u64>,
}

impl MinHashSignature {
    pub fn validate(&self) -> Result<(), NoveltyError> {
        if self.values.len() != NUM_PERMUTATIONS {
            return Err(NoveltyError::BadLength(self.values.len()));
        }
        Ok(())
    }
}

/// Fraction of positions at which the two signatures agree.
pub fn jaccard_estimate(a: &MinHashSignature, b: &MinHashSignature) -> Result<f64, NoveltyError> {
    if a.seed != b.seed {
        return Err(NoveltyError::FamilyMismatch {
            left: a.seed,
            right: b.seed,
        });
    }
    a.validate()?;
    b.validate()?;
    let matches = a.values.iter().zip(&b.values).filter(|(x, y)| x == y).count();
    Ok(matches as f64 / NUM_PERMUTATIONS as f64)
}

/// A seeded family of [`NUM_PERMUTATIONS`] hash functions
/// `x ↦ (a·x + b) mod (2^61 − 1)` over a 64-bit base hash of each shingle.
#[derive(Debug, Clone)]
pub struct MinHasher {
    seed: u64,
    coeffs: Vec<(u64, u64)>,
}

impl MinHasher {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = (0..NUM_PERMUTATIONS)
            .map(|_| (rng.gen_range(1..PRIME), rng.gen_range(0..PRIME)))
            .collect();
        MinHasher { seed, coeffs }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn signature(&self, set: &ShingleSet) -> Result<MinHashSignature, NoveltyError> {
        if set.is_empty() {
            return Err(NoveltyError::EmptySet);
        }
        let base: Vec<u128> = set
            .shingles
            .iter()
            .map(|s| u128::from(hash_bytes(s.as_bytes()) % PRIME))
            .collect();
        let values = self
            .coeffs
            .iter()
            .map(|&(a, b)| {
                let (a, b) = (u128::from(a), u128::from(b));
                base.iter()
                    .map(|&x| ((a * x + b) % u128::from(PRIME)) as u64)
                    .min()
                    .expect("non-empty set")
            })
            .collect();
        Ok(MinHashSignature {
            seed: self.seed,
            values,
        })
    }

    pub fn signatures(
        &self,
        mode: ExecMode,
        sets: &[ShingleSet],
    ) -> Vec<Result<MinHashSignature, NoveltyError>> {
        exec::map(mode, sets, |s| self.signature(s))
    }
}

/// Text-to-signature pipeline: optional normalization, shingling, MinHash.
#[derive(Debug, Clone)]
pub struct Fingerprinter {
    pub hasher: MinHasher,
    pub shingle_len: usize,
    pub normalize: bool,
}

impl Fingerprinter {
    pub fn new(seed: u64, normalize: bool) -> Self {
        Fingerprinter {
            hasher: MinHasher::new(seed),
            shingle_len: SHINGLE_LEN,
            normalize,
        }
    }

    pub fn shingles(&self, text: &str) -> Result<ShingleSet, NoveltyError> {
        if self.normalize {
            shingle(text, self.shingle_len)
        } else {
            shingle_raw(text, self.shingle_len)
        }
    }

    pub fn fingerprint(&self, text: &str) -> Result<MinHashSignature, NoveltyError> {
        self.hasher.signature(&self.shingles(text)?)
    }

    pub fn fingerprint_all<S: AsRef<str> + Sync>(
        &self,
        mode: ExecMode,
        texts: &[S],
    ) -> Vec<Result<MinHashSignature, NoveltyError>> {
        exec::map(mode, texts, |t| self.fingerprint(t.as_ref()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub entry_id: String,
    pub signature: MinHashSignature,
}

#[derive(Serialize, Deserialize)]
struct CorpusLine {
    entry_id: String,
    permutation_seed: u64,
    values: Vec<u64>,
}

/// Signatures of the admitted corpus, all from one permutation family.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusIndex {
    permutation_seed: u64,
    entries: Vec<CorpusEntry>,
    ids: HashSet<String>,
}

impl CorpusIndex {
    pub fn new(permutation_seed: u64) -> Self {
        CorpusIndex {
            permutation_seed,
            entries: Vec::new(),
            ids: HashSet::new(),
        }
    }

    pub fn permutation_seed(&self) -> u64 {
        self.permutation_seed
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn contains(&self, entry_id: &str) -> bool {
        self.ids.contains(entry_id)
    }

    pub fn add(
        &mut self,
        entry_id: impl Into<String>,
        signature: MinHashSignature,
    ) -> Result<(), NoveltyError> {
        let entry_id = entry_id.into();
        if signature.seed != self.permutation_seed {
            return Err(NoveltyError::FamilyMismatch {
                left: self.permutation_seed,
                right: signature.seed,
            });
        }
        signature.validate()?;
        if !self.ids.insert(entry_id.clone()) {
            return Err(NoveltyError::DuplicateEntry(entry_id));
        }
        self.entries.push(CorpusEntry {
            entry_id,
            signature,
        });
        Ok(())
    }

    /// Highest estimated similarity to any entry, `None` for an empty corpus.
    pub fn max_similarity(
        &self,
        candidate: &MinHashSignature,
        mode: ExecMode,
    ) -> Result<Option<f64>, NoveltyError> {
        if candidate.seed != self.permutation_seed {
            return Err(NoveltyError::FamilyMismatch {
                left: self.permutation_seed,
                right: candidate.seed,
            });
        }
        candidate.validate()?;
        Ok(exec::max_by_f64(mode, &self.entries, |e| {
            jaccard_estimate(candidate, &e.signature).unwrap_or(f64::NAN)
        }))
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in &self.entries {
            let line = CorpusLine {
                entry_id: e.entry_id.clone(),
                permutation_seed: e.signature.seed,
                values: e.signature.values.clone(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    /// Loads entries written by [`CorpusIndex::write_jsonl`]. Blank lines are
    /// skipped; every entry must carry `permutation_seed`.
    pub fn read_jsonl<R: BufRead>(input: R, permutation_seed: u64) -> Result<Self, CorpusLoadError> {
        let mut index = CorpusIndex::new(permutation_seed);
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CorpusLine = serde_json::from_str(&line)
                .map_err(|source| CorpusLoadError::Json { line: i + 1, source })?;
            let sig = MinHashSignature {
                seed: rec.permutation_seed,
                values: rec.values,
            };
            index
                .add(rec.entry_id, sig)
                .map_err(|source| CorpusLoadError::Invalid { line: i + 1, source })?;
        }
        Ok(index)
    }
}

/// `1 − max similarity` against the corpus; 1.0 when the corpus is empty.
pub fn novelty_score(
    candidate: &MinHashSignature,
    corpus: &CorpusIndex,
    mode: ExecMode,
) -> Result<f64, NoveltyError> {
    Ok(corpus
        .max_similarity(candidate, mode)?
        .map_or(1.0, |m| 1.0 - m))
}

pub fn admit_novel(score: f64, tau_nov: f64) -> bool {
    score >= tau_nov
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(members: impl IntoIterator<Item = String>) -> ShingleSet {
        ShingleSet::from_members(SHINGLE_LEN, members)
    }

    fn tokens(prefix: &str, range: std::ops::Range<usize>) -> Vec<String> {
        range.map(|i| format!("{prefix}{i:09}")).collect()
    }

    #[test]
    fn shingle_examples() {
        let s = shingle("abcdefghijk", 10).unwrap();
        let expected: BTreeSet<String> = ["abcdefghij", "bcdefghijk"].map(String::from).into();
        assert_eq!(s.shingles, expected);
        assert_eq!(shingle("aaaaaaaaaa", 10).unwrap().len(), 1);
        assert_eq!(
            shingle("  short \n\n", 10),
            Err(NoveltyError::TooShort { len: 5, n: 10 })
        );
        assert!(shingle("", 10).is_err());
    }

    #[test]
    fn shingles_count_characters_not_bytes() {
        let s = shingle_raw("ααααααααααβ", 10).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.shingles.iter().all(|x| x.chars().count() == 10));
    }

    #[test]
    fn normalization_ignores_formatting() {
        let a = "def f(x):\n    return   x+1\n";
        let b = "def f(x):\n\n\treturn x+1   \n";
        assert_eq!(normalize(a), "def f(x):\nreturn x+1");
        assert_eq!(normalize(a), normalize(b));
        assert_ne!(shingle_raw(a, 10), shingle_raw(b, 10));
        assert_eq!(shingle(a, 10), shingle(b, 10));
    }

    #[test]
    fn exact_jaccard_examples() {
        let a = set(tokens("s", 0..10));
        let b = set(tokens("s", 5..15));
        assert!((exact_jaccard(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(exact_jaccard(&a, &a).unwrap(), 1.0);
        assert_eq!(exact_jaccard(&a, &set(tokens("t", 0..3))).unwrap(), 0.0);
        assert_eq!(
            exact_jaccard(&ShingleSet::default(), &ShingleSet::default()),
            Err(NoveltyError::BothEmpty)
        );
    }

    #[test]
    fn signature_shape_and_errors() {
        let h = MinHasher::new(7);
        let sig = h.signature(&set(tokens("s", 0..3))).unwrap();
        assert_eq!(sig.values.len(), NUM_PERMUTATIONS);
        assert_eq!(h.signature(&ShingleSet::default()), Err(NoveltyError::EmptySet));
        let other = MinHasher::new(8).signature(&set(tokens("s", 0..3))).unwrap();
        assert_eq!(
            jaccard_estimate(&sig, &other),
            Err(NoveltyError::FamilyMismatch { left: 7, right: 8 })
        );
    }

    #[test]
    fn disjoint_sets_estimate_zero() {
        let h = MinHasher::new(42);
        let a = h.signature(&set(tokens("a", 0..256))).unwrap();
        let b = h.signature(&set(tokens("b", 0..256))).unwrap();
        assert_eq!(jaccard_estimate(&a, &b).unwrap(), 0.0);
        assert_eq!(jaccard_estimate(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn one_third_overlap_within_three_sigma() {
        // 100 shared + 100 + 100 exclusive: exact Jaccard 1/3
        let h = MinHasher::new(42);
        let a = set(tokens("s", 0..200));
        let b = set(tokens("s", 100..300));
        assert!((exact_jaccard(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let est = jaccard_estimate(&h.signature(&a).unwrap(), &h.signature(&b).unwrap()).unwrap();
        assert!((est - 1.0 / 3.0).abs() <= 0.09, "estimate {est}");
    }

    #[test]
    fn novelty_examples() {
        let h = MinHasher::new(1);
        let mut corpus = CorpusIndex::new(1);
        let cand = h.signature(&set(tokens("c", 0..50))).unwrap();
        assert_eq!(novelty_score(&cand, &corpus, ExecMode::Sequential).unwrap(), 1.0);

        // entries agreeing with the candidate in 13 and 77 of 256 positions
        let with_matches = |k: usize| MinHashSignature {
            seed: 1,
            values: cand
                .values
                .iter()
                .enumerate()
                .map(|(i, &v)| if i < k { v } else { v ^ 1 })
                .collect(),
        };
        corpus.add("low", with_matches(13)).unwrap();
        corpus.add("high", with_matches(77)).unwrap();
        let nov = novelty_score(&cand, &corpus, ExecMode::Parallel).unwrap();
        assert!((nov - 0.70).abs() < 0.5 / 256.0, "{nov}");

        corpus.add("same", cand.clone()).unwrap();
        assert_eq!(novelty_score(&cand, &corpus, ExecMode::Sequential).unwrap(), 0.0);
    }

    #[test]
    fn admit_novel_is_inclusive() {
        assert!(admit_novel(0.95, DEFAULT_TAU_NOV));
        assert!(admit_novel(0.90, DEFAULT_TAU_NOV));
        assert!(!admit_novel(0.10, DEFAULT_TAU_NOV));
    }

    #[test]
    fn corpus_rejects_duplicates_and_foreign_signatures() {
        let h = MinHasher::new(3);
        let sig = h.signature(&set(tokens("x", 0..4))).unwrap();
        let mut c = CorpusIndex::new(3);
        c.add("e1", sig.clone()).unwrap();
        assert_eq!(
            c.add("e1", sig.clone()),
            Err(NoveltyError::DuplicateEntry("e1".into()))
        );
        let foreign = MinHasher::new(4).signature(&set(tokens("x", 0..4))).unwrap();
        assert!(matches!(
            c.add("e2", foreign),
            Err(NoveltyError::FamilyMismatch { .. })
        ));
        let short = MinHashSignature {
            seed: 3,
            values: vec![1, 2],
        };
        assert_eq!(c.add("e3", short), Err(NoveltyError::BadLength(2)));
    }

    #[test]
    fn corpus_jsonl_round_trip() {
        let fp = Fingerprinter::new(9, true);
        let mut c = CorpusIndex::new(9);
        for (i, text) in ["import torch\nclass A: pass", "x = [i * i for i in range(10)]"]
            .iter()
            .enumerate()
        {
            c.add(format!("e{i}"), fp.fingerprint(text).unwrap()).unwrap();
        }
        let mut buf = Vec::new();
        c.write_jsonl(&mut buf).unwrap();
        let first: serde_json::Value =
            serde_json::from_str(std::str::from_utf8(&buf).unwrap().lines().next().unwrap())
                .unwrap();
        assert_eq!(first["entry_id"], "e0");
        assert_eq!(first["permutation_seed"], 9);
        assert_eq!(first["values"].as_array().unwrap().len(), 256);
        let back = CorpusIndex::read_jsonl(&buf[..], 9).unwrap();
        assert_eq!(back, c);
        assert!(matches!(
            CorpusIndex::read_jsonl(&buf[..], 10),
            Err(CorpusLoadError::Invalid { line: 1, .. })
        ));
    }

    #[test]
    fn batch_modes_agree() {
        let fp = Fingerprinter::new(5, true);
        let texts: Vec<String> = (0..40).map(|i| format!("layer_{i} = nn.Linear({i}, {})", i * 2)).collect();
        let seq = fp.fingerprint_all(ExecMode::Sequential, &texts);
        let par = fp.fingerprint_all(ExecMode::Parallel, &texts);
        assert_eq!(seq, par);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn members() -> impl Strategy<Value = Vec<String>> {
            proptest::collection::vec("[a-z]{10}", 1..60)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn signature_is_deterministic(text in "[ -~\n]{10,300}", seed: u64) {
                let a = Fingerprinter::new(seed, true).fingerprint(&text);
                let b = Fingerprinter::new(seed, true).fingerprint(&text);
                prop_assert_eq!(a, b);
            }

            #[test]
            fn union_signature_is_componentwise_min(a in members(), b in members(), seed: u64) {
                let h = MinHasher::new(seed);
                let sa = h.signature(&set(a.clone())).unwrap();
                let sb = h.signature(&set(b.clone())).unwrap();
                let su = h.signature(&set(a.into_iter().chain(b))).unwrap();
                for i in 0..NUM_PERMUTATIONS {
                    prop_assert_eq!(su.values[i], sa.values[i].min(sb.values[i]));
                }
            }

            #[test]
            fn novelty_never_increases_as_corpus_grows(
                cand in members(),
                corpus in proptest::collection::vec(members(), 1..8),
            ) {
                let h = MinHasher::new(11);
                let c = h.signature(&set(cand)).unwrap();
                let mut index = CorpusIndex::new(11);
                let mut prev = novelty_score(&c, &index, ExecMode::Sequential).unwrap();
                prop_assert_eq!(prev, 1.0);
                for (i, m) in corpus.into_iter().enumerate() {
                    index.add(i.to_string(), h.signature(&set(m)).unwrap()).unwrap();
                    let now = novelty_score(&c, &index, ExecMode::Sequential).unwrap();
                    prop_assert!(now <= prev);
                    prop_assert!((0.0..=1.0).contains(&now));
                    prev = now;
                }
            }

            #[test]
            fn admit_matches_similarity_phrasing(matches in 0usize..=256) {
                let score = 1.0 - matches as f64 / 256.0;
                let sim = 1.0 - score;
                prop_assert_eq!(admit_novel(score, DEFAULT_TAU_NOV), sim <= 0.10 + 1e-12);
            }
        }
    }
}
