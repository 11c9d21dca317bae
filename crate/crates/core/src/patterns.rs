//! Sparse attention patterns: context-independent generators (sliding window,
//! dilated, A-shaped), content-dependent generators (LSH binning, key
//! selection), their union, and masked sparse softmax evaluation.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, normalize, Matrix};

/// Per-query sorted lists of attendable key positions. Every row respects
/// causality (j <= i), carries no duplicates, and holds at most `budget`
/// entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsePattern {
    pub len: usize,
    pub budget: usize,
    pub rows: Vec<Vec<usize>>,
}

impl SparsePattern {
    pub fn validate(&self) -> Result<()> {
        if self.rows.len() != self.len {
            return Err(Error::InvalidInput("row count != length".into()));
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() > self.budget {
                return Err(Error::InvalidInput(format!("row {i} exceeds budget")));
            }
            for pair in row.windows(2) {
                if pair[0] >= pair[1] {
                    return Err(Error::InvalidInput(format!("row {i} unsorted or duplicated")));
                }
            }
            if let Some(&last) = row.last() {
                if last > i {
                    return Err(Error::InvalidInput(format!("row {i} breaks causality")));
                }
            }
        }
        Ok(())
    }

    /// Text grid of 0/1 per (i, j), row-major, with a JSON header line.
    pub fn dump(&self, kind: &str, seed: u64) -> String {
        let header = serde_json::json!({"kind": kind, "l": self.len, "k": self.budget, "seed": seed});
        let mut out = format!("{header}\n");
        for i in 0..self.len {
            let mut line = vec![b'0'; self.len];
            for &j in &self.rows[i] {
                line[j] = b'1';
            }
            out.push_str(std::str::from_utf8(&line).unwrap());
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CisaKind {
    SlidingWindow,
    Dilated,
    SwPlusDilated,
    AShaped,
}

/// Context-independent patterns. `stride` applies to the dilated kinds only
/// and must be >= 2 there.
pub fn cisa_pattern(kind: CisaKind, l: usize, k: usize, stride: usize) -> Result<SparsePattern> {
    if l == 0 || k == 0 {
        return Err(Error::InvalidConfig("l and k must be positive".into()));
    }
    if matches!(kind, CisaKind::Dilated | CisaKind::SwPlusDilated) && stride < 2 {
        return Err(Error::InvalidConfig("dilated kinds require stride >= 2".into()));
    }
    let window = |i: usize, size: usize| -> Vec<usize> {
        let lo = (i + 1).saturating_sub(size);
        (lo..=i).collect()
    };
    let dilated = |i: usize, size: usize| -> Vec<usize> {
        let mut row: Vec<usize> = (0..size)
            .map_while(|m| i.checked_sub(m * stride))
            .collect();
        row.reverse();
        row
    };
    let rows: Vec<Vec<usize>> = (0..l)
        .map(|i| match kind {
            CisaKind::SlidingWindow => window(i, k),
            CisaKind::Dilated => dilated(i, k),
            CisaKind::SwPlusDilated => {
                let mut row = window(i, k.div_ceil(2));
                merge_sorted(&mut row, &dilated(i, k / 2));
                row
            }
            CisaKind::AShaped => {
                let sink: Vec<usize> = (0..k / 2).filter(|&j| j <= i).collect();
                let mut row = window(i, k.div_ceil(2));
                merge_sorted(&mut row, &sink);
                row
            }
        })
        .collect();
    let p = SparsePattern { len: l, budget: k, rows };
    p.validate()?;
    Ok(p)
}

fn merge_sorted(base: &mut Vec<usize>, extra: &[usize]) {
    base.extend_from_slice(extra);
    base.sort_unstable();
    base.dedup();
}

/// Subtract the per-feature mean over all rows, then scale each row to unit
/// norm. Rows that are zero after centering stay zero.
pub fn centralize_normalize(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    if x.rows == 0 {
        return out;
    }
    let mut mean = vec![0.0; x.cols];
    for i in 0..x.rows {
        for (m, &v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= x.rows as f64;
    }
    for i in 0..out.rows {
        let row = out.row_mut(i);
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
        normalize(row);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinRule {
    Argmax,
    SignBit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LshConfig {
    /// Number of projection columns.
    pub h: usize,
    pub rule: BinRule,
    /// Per-bin sliding window size.
    pub k_bin: usize,
    pub seed: u64,
}

impl LshConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.k_bin == 0 {
            return Err(Error::InvalidConfig("h and k_bin must be positive".into()));
        }
        Ok(())
    }

    pub fn bin_count(&self) -> usize {
        match self.rule {
            BinRule::Argmax => self.h,
            BinRule::SignBit => 1 << self.h,
        }
    }
}

/// Bin id for one already-centralized row against projection matrix `h`
/// (d x h). Argmax breaks ties toward the first maximal column; sign-bit
/// treats column j (1-based) as bit 2^(h-j) and counts only strictly
/// positive projections.
pub fn hash_bin(row: &[f64], h: &Matrix, rule: BinRule) -> usize {
    let proj: Vec<f64> = (0..h.cols)
        .map(|j| (0..h.rows).map(|d| row[d] * h.at(d, j)).sum())
        .collect();
    match rule {
        BinRule::Argmax => {
            let mut best = 0;
            for (j, &v) in proj.iter().enumerate() {
                if v > proj[best] {
                    best = j;
                }
            }
            best
        }
        BinRule::SignBit => proj
            .iter()
            .enumerate()
            .map(|(j, &v)| if v > 0.0 { 1 << (h.cols - 1 - j) } else { 0 })
            .sum(),
    }
}

pub fn hash_bins(x: &Matrix, h: &Matrix, rule: BinRule) -> Vec<usize> {
    (0..x.rows).map(|i| hash_bin(x.row(i), h, rule)).collect()
}

/// All 2^h signed column sums of `h`, ordered so that the column index equals
/// the sign-bit code of the sign vector (+1 maps to bit 1).
pub fn expand_codebook(h: &Matrix, max_h: usize) -> Result<Matrix> {
    if h.cols > max_h {
        return Err(Error::InvalidConfig(format!("h = {} over limit {max_h}", h.cols)));
    }
    let n = 1usize << h.cols;
    let mut out = Matrix::zeros(h.rows, n);
    for code in 0..n {
        for d in 0..h.rows {
            let mut sum = 0.0;
            for j in 0..h.cols {
                let bit = (code >> (h.cols - 1 - j)) & 1;
                let sign = if bit == 1 { 1.0 } else { -1.0 };
                sum += sign * h.at(d, j);
            }
            *out.at_mut(d, code) = sum;
        }
    }
    Ok(out)
}

/// Fresh projection matrix for `cfg`, deterministic in the seed.
pub fn lsh_projection(d: usize, cfg: &LshConfig) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Matrix::randn(d, cfg.h, &mut rng)
}

/// LSH pattern: centralize/normalize Q and K independently, hash both with
/// the seeded projection, and let each query attend to the `k_bin` most
/// recent earlier keys in its own bin.
pub fn lsh_pattern(q: &Matrix, k: &Matrix, cfg: &LshConfig) -> Result<SparsePattern> {
    cfg.validate()?;
    if q.rows != k.rows || q.cols != k.cols {
        return Err(Error::InvalidInput("Q and K shapes differ".into()));
    }
    let h = lsh_projection(q.cols, cfg);
    lsh_pattern_with_projection(q, k, cfg, &h)
}

/// Same as [`lsh_pattern`] but with a caller-held projection matrix, so one
/// matrix can be shared across layers or frozen for evaluation.
pub fn lsh_pattern_with_projection(
    q: &Matrix,
    k: &Matrix,
    cfg: &LshConfig,
    h: &Matrix,
) -> Result<SparsePattern> {
    cfg.validate()?;
    if q.rows != k.rows || q.cols != k.cols {
        return Err(Error::InvalidInput("Q and K shapes differ".into()));
    }
    if h.rows != q.cols || h.cols != cfg.h {
        return Err(Error::InvalidInput("projection shape mismatch".into()));
    }
    let qn = centralize_normalize(q);
    let kn = centralize_normalize(k);
    let q_bins = hash_bins(&qn, h, cfg.rule);
    let k_bins = hash_bins(&kn, h, cfg.rule);
    let mut by_bin: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut rows = Vec::with_capacity(q.rows);
    for i in 0..q.rows {
        // Keys are visible to queries at the same position, so register first.
        by_bin.entry(k_bins[i]).or_default().push(i);
        let row = match by_bin.get(&q_bins[i]) {
            Some(positions) => {
                let take = positions.len().min(cfg.k_bin);
                positions[positions.len() - take..].to_vec()
            }
            None => Vec::new(),
        };
        rows.push(row);
    }
    let p = SparsePattern { len: q.rows, budget: cfg.k_bin, rows };
    p.validate()?;
    Ok(p)
}

/// Key-scorer parameters: a two-layer MLP over concat(key, normalized query
/// prefix sum), hidden width 2d, relu, scalar output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsScorer {
    pub w1: Matrix, // (2d) x (2d)
    pub b1: Vec<f64>,
    pub w2: Vec<f64>, // (2d)
    pub b2: f64,
}

impl KsScorer {
    pub fn zeros(d: usize) -> Self {
        KsScorer { w1: Matrix::zeros(2 * d, 2 * d), b1: vec![0.0; 2 * d], w2: vec![0.0; 2 * d], b2: 0.0 }
    }

    pub fn randn(d: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (2.0 * d as f64).sqrt();
        let mut w1 = Matrix::randn(2 * d, 2 * d, rng);
        for v in &mut w1.data {
            *v *= scale;
        }
        let w2: Vec<f64> = Matrix::randn(1, 2 * d, rng).data.iter().map(|v| v * scale).collect();
        KsScorer { w1, b1: vec![0.0; 2 * d], w2, b2: 0.0 }
    }

    fn score(&self, input: &[f64]) -> f64 {
        let mut acc = self.b2;
        for j in 0..self.w2.len() {
            let mut pre = self.b1[j];
            for (d, &x) in input.iter().enumerate() {
                pre += x * self.w1.at(d, j);
            }
            acc += self.w2[j] * pre.max(0.0);
        }
        acc
    }
}

/// Per-key input rows for the scorer: concat(K_i, normalize(sum_{p<=i} Q_p)).
/// Depends only on the prefix, which keeps scoring causal.
pub fn ks_inputs(k: &Matrix, q: &Matrix) -> Matrix {
    let d = k.cols;
    let mut out = Matrix::zeros(k.rows, 2 * d);
    let mut prefix = vec![0.0; d];
    for i in 0..k.rows {
        for (p, &v) in prefix.iter_mut().zip(q.row(i)) {
            *p += v;
        }
        let mut ctx = prefix.clone();
        normalize(&mut ctx);
        let row = out.row_mut(i);
        row[..d].copy_from_slice(k.row(i));
        row[d..].copy_from_slice(&ctx);
    }
    out
}

/// Importance score per key position (Key Selection phase one).
pub fn ks_scores(k: &Matrix, q: &Matrix, scorer: &KsScorer) -> Vec<f64> {
    let inputs = ks_inputs(k, q);
    (0..inputs.rows).map(|i| scorer.score(inputs.row(i))).collect()
}

/// Row i holds the positions of the k largest scores in the prefix x_0..x_i,
/// ties toward the smaller position.
pub fn ks_pattern(scores: &[f64], l: usize, k: usize) -> Result<SparsePattern> {
    if scores.len() != l {
        return Err(Error::InvalidInput("score count != length".into()));
    }
    let mut rows = Vec::with_capacity(l);
    // Maintain the running top-k as a sorted-by-position list; k is small.
    let mut selected: Vec<usize> = Vec::new();
    for i in 0..l {
        selected.push(i);
        if selected.len() > k {
            // Drop the weakest entry; on ties drop the later position.
            let mut worst = 0;
            for (si, &pos) in selected.iter().enumerate() {
                let (wp, cp) = (selected[worst], pos);
                if scores[cp] < scores[wp] || (scores[cp] == scores[wp] && cp > wp) {
                    worst = si;
                }
            }
            selected.remove(worst);
        }
        rows.push(selected.clone());
    }
    let p = SparsePattern { len: l, budget: k, rows };
    p.validate()?;
    Ok(p)
}

/// Row-wise union of two patterns (elementwise max of the binary matrices).
/// Inputs must each respect their own budget; the result's budget is the sum.
pub fn hax_combine(lsh: &SparsePattern, ks: &SparsePattern) -> Result<SparsePattern> {
    if lsh.len != ks.len {
        return Err(Error::InvalidInput("pattern lengths differ".into()));
    }
    lsh.validate().map_err(|_| Error::InvalidInput("lsh input violates budget".into()))?;
    ks.validate().map_err(|_| Error::InvalidInput("ks input violates budget".into()))?;
    let rows = lsh
        .rows
        .iter()
        .zip(&ks.rows)
        .map(|(a, b)| {
            let mut row = a.clone();
            merge_sorted(&mut row, b);
            row
        })
        .collect();
    let p = SparsePattern { len: lsh.len, budget: lsh.budget + ks.budget, rows };
    p.validate()?;
    Ok(p)
}

/// Masked sparse softmax attention. For each row, logits are Q_i.K_j / sqrt(d)
/// over the pattern positions only; excluded positions get probability
/// exactly zero; empty rows output the zero vector.
pub fn sparse_attention_forward(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    pattern: &SparsePattern,
) -> Result<Matrix> {
    if q.rows != k.rows || k.rows != v.rows || q.cols != k.cols {
        return Err(Error::InvalidInput("Q/K/V shape mismatch".into()));
    }
    if pattern.len != q.rows {
        return Err(Error::InvalidInput("pattern length != sequence length".into()));
    }
    pattern.validate()?;
    let scale = 1.0 / (q.cols as f64).sqrt();
    let mut out = Matrix::zeros(q.rows, v.cols);
    for i in 0..q.rows {
        let row = &pattern.rows[i];
        if row.is_empty() {
            continue;
        }
        let logits: Vec<f64> = row.iter().map(|&j| dot(q.row(i), k.row(j)) * scale).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let out_row = out.row_mut(i);
        for (&j, e) in row.iter().zip(&exps) {
            let p = e / sum;
            for (o, &vv) in out_row.iter_mut().zip(v.row(j)) {
                *o += p * vv;
            }
        }
    }
    Ok(out)
}
