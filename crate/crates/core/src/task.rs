//! Joint recall task generation: vocabularies, association tables, sequence
//! encoding, scoring, and dataset files.
//!
//! A task instance presents a w-level table of context-specific key/value
//! associations as a token sequence (the information component), then repeats
//! the context/key structure under a permutation with the values withheld
//! (the inquiry component). Each last-level context token in the inquiry
//! component is a query whose target is the table value in force there.
//! w = 1 recovers plain associative recall, w = 2 the two-level joint recall
//! task.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Token id space partitioned into one contiguous range per context level
/// plus a trailing range for values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub level_sizes: Vec<usize>,
    pub value_size: usize,
}

/// Role of a token id: a context token at some level, or a value token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenRole {
    Context { level: usize, index: usize },
    Value { index: usize },
}

impl Vocabulary {
    pub fn levels(&self) -> usize {
        self.level_sizes.len()
    }

    pub fn total_ids(&self) -> usize {
        self.level_sizes.iter().sum::<usize>() + self.value_size
    }

    fn level_start(&self, level: usize) -> usize {
        self.level_sizes[..level].iter().sum()
    }

    pub fn value_start(&self) -> usize {
        self.level_sizes.iter().sum()
    }

    pub fn context_token(&self, level: usize, index: usize) -> usize {
        debug_assert!(index < self.level_sizes[level]);
        self.level_start(level) + index
    }

    pub fn value_token(&self, index: usize) -> usize {
        debug_assert!(index < self.value_size);
        self.value_start() + index
    }

    pub fn role_of(&self, token: usize) -> Result<TokenRole> {
        let mut start = 0;
        for (level, &size) in self.level_sizes.iter().enumerate() {
            if token < start + size {
                return Ok(TokenRole::Context { level, index: token - start });
            }
            start += size;
        }
        if token < start + self.value_size {
            return Ok(TokenRole::Value { index: token - start });
        }
        Err(Error::InvalidInput(format!("token id {token} out of vocabulary")))
    }
}

/// `make_vocab([2,2], 2)` assigns ids 0..2 to level 1, 2..4 to level 2 and
/// 4..6 to values.
pub fn make_vocab(level_sizes: &[usize], value_size: usize) -> Result<Vocabulary> {
    if level_sizes.is_empty() {
        return Err(Error::InvalidConfig("need at least one context level".into()));
    }
    if level_sizes.contains(&0) || value_size == 0 {
        return Err(Error::InvalidConfig("vocabulary ranges must be non-empty".into()));
    }
    Ok(Vocabulary { level_sizes: level_sizes.to_vec(), value_size })
}

/// Total mapping from context-index tuples to value indices, stored row-major
/// over the tuple space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssociationTable {
    pub shape: Vec<usize>,
    pub entries: Vec<usize>,
}

impl AssociationTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn flat_index(&self, tuple: &[usize]) -> usize {
        debug_assert_eq!(tuple.len(), self.shape.len());
        let mut idx = 0;
        for (t, s) in tuple.iter().zip(&self.shape) {
            debug_assert!(t < s);
            idx = idx * s + t;
        }
        idx
    }

    pub fn get(&self, tuple: &[usize]) -> usize {
        self.entries[self.flat_index(tuple)]
    }
}

/// Every entry drawn independently and uniformly over the value range.
pub fn sample_table(vocab: &Vocabulary, rng: &mut ChaCha8Rng) -> AssociationTable {
    sample_table_shaped(vocab, &vocab.level_sizes.clone(), rng)
}

/// As [`sample_table`] but over a sub-shape of the vocabulary: level i uses
/// the first `shape[i]` context tokens of its range. Lets instances of
/// different sizes share one fixed vocabulary.
pub fn sample_table_shaped(
    vocab: &Vocabulary,
    shape: &[usize],
    rng: &mut ChaCha8Rng,
) -> AssociationTable {
    debug_assert_eq!(shape.len(), vocab.levels());
    debug_assert!(shape.iter().zip(&vocab.level_sizes).all(|(s, v)| s <= v));
    let n: usize = shape.iter().product();
    let entries = (0..n).map(|_| rng.gen_range(0..vocab.value_size)).collect();
    AssociationTable { shape: shape.to_vec(), entries }
}

/// One encoded sample: tokens, query positions with targets, and provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointRecallInstance {
    pub tokens: Vec<usize>,
    pub info_len: usize,
    pub queries: Vec<(usize, usize)>,
    #[serde(rename = "shape")]
    pub table_shape: Vec<usize>,
    pub perm: Vec<Vec<usize>>,
    #[serde(skip)]
    pub table: Option<AssociationTable>,
}

impl JointRecallInstance {
    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }
}

/// Closed-form token count: one token per block at every level, one value per
/// table entry, and the inquiry repeats the block structure without values.
pub fn expected_token_count(shape: &[usize]) -> usize {
    let mut blocks = 0;
    let mut prod = 1;
    for &s in shape {
        prod *= s;
        blocks += prod;
    }
    let n = prod;
    // info: blocks + n values; inquiry: blocks.
    blocks + n + blocks
}

pub fn expected_info_len(shape: &[usize]) -> usize {
    let mut blocks = 0;
    let mut prod = 1;
    for &s in shape {
        prod *= s;
        blocks += prod;
    }
    blocks + prod
}

/// Lays out the information component in canonical order and the inquiry
/// component under `permutation` (one permutation per level, shared across
/// blocks of that level).
pub fn encode_instance(
    table: &AssociationTable,
    vocab: &Vocabulary,
    permutation: &[Vec<usize>],
) -> Result<JointRecallInstance> {
    let w = vocab.levels();
    if table.shape.len() != w
        || table.shape.iter().zip(&vocab.level_sizes).any(|(s, v)| s > v)
    {
        return Err(Error::InvalidConfig("table shape does not fit vocabulary".into()));
    }
    if permutation.len() != w {
        return Err(Error::InvalidConfig(format!(
            "expected {w} level permutations, got {}",
            permutation.len()
        )));
    }
    for (level, p) in permutation.iter().enumerate() {
        let mut seen = vec![false; table.shape[level]];
        if p.len() != table.shape[level] {
            return Err(Error::InvalidConfig(format!("permutation arity mismatch at level {level}")));
        }
        for &i in p {
            if i >= seen.len() || seen[i] {
                return Err(Error::InvalidConfig(format!("not a permutation at level {level}")));
            }
            seen[i] = true;
        }
    }

    let mut tokens = Vec::with_capacity(expected_token_count(&table.shape));

    // Information component, canonical order.
    fn emit_info(
        tokens: &mut Vec<usize>,
        table: &AssociationTable,
        vocab: &Vocabulary,
        level: usize,
        tuple: &mut Vec<usize>,
    ) {
        for c in 0..table.shape[level] {
            tokens.push(vocab.context_token(level, c));
            tuple.push(c);
            if level + 1 == table.shape.len() {
                tokens.push(vocab.value_token(table.get(tuple)));
            } else {
                emit_info(tokens, table, vocab, level + 1, tuple);
            }
            tuple.pop();
        }
    }
    let mut tuple = Vec::with_capacity(w);
    emit_info(&mut tokens, table, vocab, 0, &mut tuple);
    let info_len = tokens.len();

    // Inquiry component, permuted order, values withheld.
    let mut queries = Vec::with_capacity(table.len());
    #[allow(clippy::too_many_arguments)]
    fn emit_inquiry(
        tokens: &mut Vec<usize>,
        queries: &mut Vec<(usize, usize)>,
        table: &AssociationTable,
        vocab: &Vocabulary,
        permutation: &[Vec<usize>],
        level: usize,
        tuple: &mut Vec<usize>,
    ) {
        for &c in &permutation[level] {
            tokens.push(vocab.context_token(level, c));
            tuple.push(c);
            if level + 1 == table.shape.len() {
                let target = vocab.value_token(table.get(tuple));
                queries.push((tokens.len() - 1, target));
            } else {
                emit_inquiry(tokens, queries, table, vocab, permutation, level + 1, tuple);
            }
            tuple.pop();
        }
    }
    emit_inquiry(&mut tokens, &mut queries, table, vocab, permutation, 0, &mut tuple);

    Ok(JointRecallInstance {
        tokens,
        info_len,
        queries,
        table_shape: table.shape.clone(),
        perm: permutation.to_vec(),
        table: Some(table.clone()),
    })
}

/// Replays the information component through a sequential interpreter and
/// rebuilds the association table. Inverse of the encoder's first stage.
pub fn decode_instance(
    tokens: &[usize],
    info_len: usize,
    vocab: &Vocabulary,
    shape: &[usize],
) -> Result<AssociationTable> {
    let w = vocab.levels();
    if shape.len() != w {
        return Err(Error::InvalidInput("shape arity mismatch".into()));
    }
    let n: usize = shape.iter().product();
    let mut entries = vec![None; n];
    let mut current: Vec<Option<usize>> = vec![None; w];
    let table = AssociationTable { shape: shape.to_vec(), entries: vec![0; n] };
    for &tok in &tokens[..info_len] {
        match vocab.role_of(tok)? {
            TokenRole::Context { level, index } => {
                if index >= shape[level] {
                    return Err(Error::InvalidInput("context index outside table shape".into()));
                }
                current[level] = Some(index);
                for slot in current.iter_mut().skip(level + 1) {
                    *slot = None;
                }
            }
            TokenRole::Value { index } => {
                let tuple: Option<Vec<usize>> = current.iter().copied().collect();
                let tuple = tuple
                    .ok_or_else(|| Error::InvalidInput("value token before full context".into()))?;
                entries[table.flat_index(&tuple)] = Some(index);
            }
        }
    }
    let entries: Option<Vec<usize>> = entries.into_iter().collect();
    let entries = entries.ok_or_else(|| Error::InvalidInput("information component incomplete".into()))?;
    Ok(AssociationTable { shape: shape.to_vec(), entries })
}

/// Per-instance accuracy: fraction of queries answered with the exact target
/// token.
pub fn score_predictions(predictions: &[usize], instance: &JointRecallInstance) -> Result<f64> {
    if predictions.len() != instance.queries.len() {
        return Err(Error::InvalidInput(format!(
            "expected {} predictions, got {}",
            instance.queries.len(),
            predictions.len()
        )));
    }
    if instance.queries.is_empty() {
        return Ok(1.0);
    }
    let correct = predictions
        .iter()
        .zip(&instance.queries)
        .filter(|(p, (_, target))| **p == *target)
        .count();
    Ok(correct as f64 / instance.queries.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Number of context levels w.
    pub levels: usize,
    /// Inclusive range from which every level size is drawn.
    pub size_low: usize,
    pub size_high: usize,
    pub value_size: usize,
    pub count: usize,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.size_low == 0 || self.size_high < self.size_low {
            return Err(Error::InvalidConfig("bad level size range".into()));
        }
        if self.value_size == 0 || self.count == 0 {
            return Err(Error::InvalidConfig("value_size and count must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: DatasetConfig,
    pub count: usize,
    pub checksum: String,
}

pub fn random_permutations(shape: &[usize], rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    shape
        .iter()
        .map(|&s| {
            let mut p: Vec<usize> = (0..s).collect();
            p.shuffle(rng);
            p
        })
        .collect()
}

/// Draws one instance under `config` conventions: per-level sizes uniform in
/// the configured range, a fresh uniform table, fresh permutations. All
/// instances are encoded against the shared maximal vocabulary so token ids
/// mean the same thing across the dataset.
pub fn sample_instance(config: &DatasetConfig, rng: &mut ChaCha8Rng) -> Result<JointRecallInstance> {
    let vocab = max_vocab(config)?;
    let shape: Vec<usize> = (0..config.levels)
        .map(|_| rng.gen_range(config.size_low..=config.size_high))
        .collect();
    let table = sample_table_shaped(&vocab, &shape, rng);
    let perms = random_permutations(&shape, rng);
    encode_instance(&table, &vocab, &perms)
}

/// Writes `count` instances as JSON Lines plus a sidecar manifest
/// (`<path>.manifest.json`) carrying the config echo and a SHA-256 checksum
/// of the data file.
pub fn generate_dataset(config: &DatasetConfig, path: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    let mut hasher = Sha256::new();
    for _ in 0..config.count {
        let instance = sample_instance(config, &mut rng)?;
        let mut line = serde_json::to_string(&instance)?;
        line.push('\n');
        hasher.update(line.as_bytes());
        out.write_all(line.as_bytes())?;
    }
    out.flush()?;
    let checksum = format!("{:x}", hasher.finalize());
    let manifest = DatasetManifest { config: config.clone(), count: config.count, checksum };
    let manifest_path = manifest_path_for(path);
    let mut mf = BufWriter::new(File::create(manifest_path)?);
    serde_json::to_writer_pretty(&mut mf, &manifest)?;
    mf.flush()?;
    Ok(manifest)
}

pub fn manifest_path_for(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    std::path::PathBuf::from(s)
}

pub fn load_dataset(path: &Path) -> Result<Vec<JointRecallInstance>> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

use rand::SeedableRng;

/// Vocabulary that covers every instance a config can draw: each level sized
/// at the top of the range. Instances with smaller per-level sizes use a
/// prefix of each range, so ids stay consistent only when all instances share
/// one vocabulary; datasets therefore encode against the maximal vocabulary.
pub fn max_vocab(config: &DatasetConfig) -> Result<Vocabulary> {
    make_vocab(&vec![config.size_high; config.levels], config.value_size)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn vocab_ranges() {
        let v = make_vocab(&[2, 2], 2).unwrap();
        assert_eq!(v.total_ids(), 6);
        assert_eq!(v.context_token(0, 1), 1);
        assert_eq!(v.context_token(1, 0), 2);
        assert_eq!(v.value_token(1), 5);
        assert_eq!(v.role_of(3).unwrap(), TokenRole::Context { level: 1, index: 1 });
        assert_eq!(v.role_of(4).unwrap(), TokenRole::Value { index: 0 });
        assert!(v.role_of(6).is_err());

        assert_eq!(make_vocab(&[1], 1).unwrap().total_ids(), 2);
        assert_eq!(make_vocab(&[5, 16], 16).unwrap().total_ids(), 37);
        assert!(make_vocab(&[0], 1).is_err());
        assert!(make_vocab(&[1], 0).is_err());
        assert!(make_vocab(&[], 1).is_err());
    }

    #[test]
    fn sample_table_deterministic_and_uniform() {
        let v = make_vocab(&[2, 2], 16).unwrap();
        let a = sample_table(&v, &mut rng(3));
        let b = sample_table(&v, &mut rng(3));
        assert_eq!(a, b);

        let v1 = make_vocab(&[1], 1).unwrap();
        assert_eq!(sample_table(&v1, &mut rng(0)).entries, vec![0]);

        // Frequency check against the uniform oracle.
        let v4 = make_vocab(&[1], 4).unwrap();
        let mut counts = [0usize; 4];
        let mut r = rng(11);
        let draws = 100_000;
        for _ in 0..draws {
            counts[sample_table(&v4, &mut r).entries[0]] += 1;
        }
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.25).abs() < 0.02, "freq {freq}");
        }
    }

    #[test]
    fn encode_two_level_example() {
        // contexts {A,B} -> ids 0,1; keys {a,b} -> ids 2,3; values 0,1 -> ids 4,5
        let v = make_vocab(&[2, 2], 2).unwrap();
        let table = AssociationTable { shape: vec![2, 2], entries: vec![0, 1, 1, 0] };
        let inst = encode_instance(&table, &v, &[vec![0, 1], vec![0, 1]]).unwrap();
        // "A a 0 b 1 B a 1 b 0 | A a b B a b"
        assert_eq!(inst.tokens, vec![0, 2, 4, 3, 5, 1, 2, 5, 3, 4, 0, 2, 3, 1, 2, 3]);
        assert_eq!(inst.info_len, 10);
        assert_eq!(
            inst.queries,
            vec![(11, 4), (12, 5), (14, 5), (15, 4)],
        );
    }

    #[test]
    fn encode_one_level_associative_recall() {
        let v = make_vocab(&[2], 2).unwrap();
        let table = AssociationTable { shape: vec![2], entries: vec![0, 1] };
        let inst = encode_instance(&table, &v, &[vec![0, 1]]).unwrap();
        // "a 0 b 1 | a b", values at ids 2,3
        assert_eq!(inst.tokens, vec![0, 2, 1, 3, 0, 1]);
        assert_eq!(inst.info_len, 4);
        assert_eq!(inst.queries, vec![(4, 2), (5, 3)]);
    }

    #[test]
    fn encode_rejects_bad_permutation() {
        let v = make_vocab(&[2, 2], 2).unwrap();
        let table = AssociationTable { shape: vec![2, 2], entries: vec![0, 1, 1, 0] };
        assert!(encode_instance(&table, &v, &[vec![0, 1]]).is_err());
        assert!(encode_instance(&table, &v, &[vec![0, 1], vec![0, 0]]).is_err());
    }

    #[test]
    fn decode_round_trip_random() {
        let mut r = rng(99);
        for _ in 0..1000 {
            let w = r.gen_range(1..=3usize);
            let sizes: Vec<usize> = (0..w).map(|_| r.gen_range(1..=4)).collect();
            let vs = r.gen_range(1..=8);
            let v = make_vocab(&sizes, vs).unwrap();
            let table = sample_table(&v, &mut r);
            let perms = random_permutations(&table.shape, &mut r);
            let inst = encode_instance(&table, &v, &perms).unwrap();
            let decoded = decode_instance(&inst.tokens, inst.info_len, &v, &table.shape).unwrap();
            assert_eq!(decoded, table);
            assert_eq!(inst.tokens.len(), expected_token_count(&table.shape));
            assert_eq!(inst.info_len, expected_info_len(&table.shape));
        }
    }

    #[test]
    fn query_targets_match_reference_interpreter() {
        // Replay the full sequence tracking the contexts in force; each query's
        // recorded target must equal the decoded table lookup at its tuple.
        let mut r = rng(7);
        for _ in 0..200 {
            let w = r.gen_range(1..=3usize);
            let sizes: Vec<usize> = (0..w).map(|_| r.gen_range(1..=4)).collect();
            let v = make_vocab(&sizes, 5).unwrap();
            let table = sample_table(&v, &mut r);
            let perms = random_permutations(&table.shape, &mut r);
            let inst = encode_instance(&table, &v, &perms).unwrap();
            let decoded = decode_instance(&inst.tokens, inst.info_len, &v, &table.shape).unwrap();
            let mut current = vec![0usize; w];
            let mut qi = 0;
            for (pos, &tok) in inst.tokens.iter().enumerate() {
                if let TokenRole::Context { level, index } = v.role_of(tok).unwrap() {
                    current[level] = index;
                    if pos >= inst.info_len && level == w - 1 {
                        let (qpos, target) = inst.queries[qi];
                        assert_eq!(qpos, pos);
                        assert!(qpos >= inst.info_len);
                        assert_eq!(target, v.value_token(decoded.get(&current)));
                        qi += 1;
                    }
                }
            }
            assert_eq!(qi, inst.queries.len());
            assert_eq!(inst.queries.len(), table.len());
        }
    }

    #[test]
    fn permutation_invariant_answer_multiset() {
        let v = make_vocab(&[3, 2], 4).unwrap();
        let mut r = rng(21);
        let table = sample_table(&v, &mut r);
        let id_perm = vec![vec![0, 1, 2], vec![0, 1]];
        let base = encode_instance(&table, &v, &id_perm).unwrap();
        let collect = |inst: &JointRecallInstance| {
            let mut pairs: Vec<(Vec<usize>, usize)> = Vec::new();
            let mut current = vec![0usize; 2];
            let mut qi = 0;
            for (pos, &tok) in inst.tokens.iter().enumerate() {
                if let TokenRole::Context { level, index } = v.role_of(tok).unwrap() {
                    current[level] = index;
                    if pos >= inst.info_len && level == 1 {
                        pairs.push((current.clone(), inst.queries[qi].1));
                        qi += 1;
                    }
                }
            }
            pairs.sort();
            pairs
        };
        for _ in 0..20 {
            let perms = random_permutations(&table.shape, &mut r);
            let permuted = encode_instance(&table, &v, &perms).unwrap();
            assert_eq!(collect(&base), collect(&permuted));
        }
    }

    #[test]
    fn scoring() {
        let v = make_vocab(&[2, 2], 2).unwrap();
        let table = AssociationTable { shape: vec![2, 2], entries: vec![0, 1, 1, 0] };
        let inst = encode_instance(&table, &v, &[vec![0, 1], vec![0, 1]]).unwrap();
        let targets: Vec<usize> = inst.queries.iter().map(|&(_, t)| t).collect();
        assert_eq!(score_predictions(&targets, &inst).unwrap(), 1.0);
        let wrong: Vec<usize> = targets.iter().map(|&t| if t == 4 { 5 } else { 4 }).collect();
        assert_eq!(score_predictions(&wrong, &inst).unwrap(), 0.0);
        let mut three = targets.clone();
        three[0] = if three[0] == 4 { 5 } else { 4 };
        assert_eq!(score_predictions(&three, &inst).unwrap(), 0.75);
        assert!(score_predictions(&targets[..3], &inst).is_err());
    }

    #[test]
    fn dataset_determinism_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.jsonl");
        let p2 = dir.path().join("b.jsonl");
        let config = DatasetConfig {
            levels: 2,
            size_low: 2,
            size_high: 2,
            value_size: 16,
            count: 10,
            seed: 42,
        };
        let m1 = generate_dataset(&config, &p1).unwrap();
        let m2 = generate_dataset(&config, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(m1.checksum, m2.checksum);
        let loaded = load_dataset(&p1).unwrap();
        assert_eq!(loaded.len(), 10);
        // range [2,2] forces n = 4 queries per instance
        assert!(loaded.iter().all(|i| i.num_queries() == 4));
    }

    #[test]
    fn dataset_size_range_coverage() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let config = DatasetConfig {
            levels: 2,
            size_low: 5,
            size_high: 16,
            value_size: 16,
            count: 2000,
            seed: 1,
        };
        generate_dataset(&config, &p).unwrap();
        let loaded = load_dataset(&p).unwrap();
        let mut seen = std::collections::HashSet::new();
        for inst in &loaded {
            for &s in &inst.table_shape {
                assert!((5..=16).contains(&s));
                seen.insert(s);
            }
        }
        assert_eq!(seen.len(), 12, "all sizes in [5,16] observed");
    }
}
