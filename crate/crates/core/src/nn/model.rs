//! Hybrid SSM / sparse-attention model built on the autodiff tape.
//!
//! Each block computes `y = ssm(x) + gate ⊙ attention(x)` where the attention
//! pattern comes from the configured generator and the per-channel gate is
//! initialized to zero, so a freshly built hybrid is function-identical to
//! its attention-free counterpart.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::nn::tape::{Tape, Var};
use crate::patterns::{
    cisa_pattern, hax_combine, ks_pattern, ks_scores, lsh_pattern_with_projection, CisaKind,
    KsScorer, LshConfig, SparsePattern,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    None,
    SlidingWindow,
    Dilated,
    SwPlusDilated,
    AShaped,
    Lsh,
    Ks,
    Hax,
}

impl PatternKind {
    pub fn has_attention(self) -> bool {
        self != PatternKind::None
    }

    /// Kinds whose pattern depends on a learned key scorer.
    pub fn has_scorer(self) -> bool {
        matches!(self, PatternKind::Ks | PatternKind::Hax)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridModelConfig {
    pub layers: usize,
    /// Model width before widening.
    pub d: usize,
    pub vocab_size: usize,
    /// One pattern kind per layer.
    pub patterns: Vec<PatternKind>,
    /// Total attention budget k per row; HAX splits it k/2 + k/2.
    pub budget: usize,
    pub lsh: LshConfig,
    pub gate_init: f64,
    /// Width multiplier for attention-free baselines (§ widened base).
    pub widen_factor: usize,
    /// Dilation stride for the dilated kinds.
    pub stride: usize,
}

impl HybridModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.d == 0 || self.vocab_size == 0 || self.widen_factor == 0 {
            return Err(Error::InvalidConfig("layers, d, vocab, widen must be positive".into()));
        }
        if self.patterns.len() != self.layers {
            return Err(Error::InvalidConfig(format!(
                "{} pattern kinds for {} layers",
                self.patterns.len(),
                self.layers
            )));
        }
        let any_attn = self.patterns.iter().any(|p| p.has_attention());
        if any_attn && self.budget == 0 {
            return Err(Error::InvalidConfig("budget must be >= 1 with attention".into()));
        }
        if self.patterns.contains(&PatternKind::Hax) && self.budget < 2 {
            return Err(Error::InvalidConfig("hax needs budget >= 2 for its two branches".into()));
        }
        self.lsh.validate()
    }

    /// Effective model width after the baseline widening multiplier.
    pub fn width(&self) -> usize {
        self.d * self.widen_factor
    }

    /// The attention-free twin used by the gate-zero equivalence contract.
    pub fn attention_free(&self) -> HybridModelConfig {
        let mut cfg = self.clone();
        cfg.patterns = vec![PatternKind::None; cfg.layers];
        cfg
    }
}

/// Named parameter tensors in fixed construction order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: HybridModelConfig,
    pub params: Vec<(String, Matrix)>,
    pub seed: u64,
}

/// How each layer's sparse pattern is produced during a forward pass.
pub enum PatternMode {
    /// Patterns are computed from the current Q/K content; the LSH projection
    /// for layer i is seeded with `lsh_seed + i` so training can resample it
    /// per step and evaluation can freeze it.
    Dynamic { lsh_seed: u64 },
    /// Fixed per-layer patterns; used by finite-difference gradient checks so
    /// that a parameter nudge cannot flip a discrete selection.
    Frozen { patterns: Vec<Option<SparsePattern>> },
}

/// Per-layer differentiable scorer output for the ranking loss.
pub struct LayerScore {
    /// l x 1 column of predicted key scores; gradient flows to scorer
    /// parameters only (inputs are detached).
    pub scores: Var,
    /// Detached Q/K used for reference targets.
    pub q: Matrix,
    pub k: Matrix,
}

pub struct ForwardOut {
    /// l x vocab next-token logits.
    pub logits: Var,
    /// One entry per layer; Some for KS/HAX layers.
    pub layer_scores: Vec<Option<LayerScore>>,
    /// Patterns actually used, for inspection and freezing.
    pub patterns: Vec<Option<SparsePattern>>,
}

fn name_seed(global: u64, name: &str) -> u64 {
    let digest = Sha256::digest(name.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    global ^ u64::from_le_bytes(bytes)
}

impl Model {
    /// Builds parameters with per-name seeded initialization, so two configs
    /// sharing a parameter name initialize it to bit-identical values.
    pub fn new(config: HybridModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let d = config.width();
        let mut params: Vec<(String, Matrix)> = Vec::new();
        let scale = 1.0 / (d as f64).sqrt();
        let push_randn = |params: &mut Vec<(String, Matrix)>, name: String, r, c, s: f64| {
            let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, &name));
            let mut m = Matrix::randn(r, c, &mut rng);
            for v in &mut m.data {
                *v *= s;
            }
            params.push((name, m));
        };
        push_randn(&mut params, "embed".into(), config.vocab_size, d, scale);
        for (i, kind) in config.patterns.iter().enumerate() {
            for w in ["wa", "wb", "wo"] {
                push_randn(&mut params, format!("layer{i}.{w}"), d, d, scale);
            }
            if kind.has_attention() {
                for w in ["wq", "wk", "wv"] {
                    push_randn(&mut params, format!("layer{i}.{w}"), d, d, scale);
                }
                let gate = Matrix {
                    rows: 1,
                    cols: d,
                    data: vec![config.gate_init; d],
                };
                params.push((format!("layer{i}.gate"), gate));
            }
            if kind.has_scorer() {
                let s2 = 1.0 / (2.0 * d as f64).sqrt();
                push_randn(&mut params, format!("layer{i}.score_w1"), 2 * d, 2 * d, s2);
                params.push((format!("layer{i}.score_b1"), Matrix::zeros(1, 2 * d)));
                push_randn(&mut params, format!("layer{i}.score_w2"), 2 * d, 1, s2);
                params.push((format!("layer{i}.score_b2"), Matrix::zeros(1, 1)));
            }
        }
        push_randn(&mut params, "head".into(), d, config.vocab_size, scale);
        Ok(Model { config, params, seed })
    }

    pub fn param_index(&self, name: &str) -> usize {
        self.params
            .iter()
            .position(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn param(&self, name: &str) -> &Matrix {
        &self.params[self.param_index(name)].1
    }

    /// Registers every parameter as a tape leaf, in order.
    fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|(_, m)| tape.leaf(m.clone())).collect()
    }

    /// Full forward pass; also returns the leaf handles so callers can read
    /// gradients back out per parameter after `backward`.
    pub fn forward_with_leaves(
        &self,
        tape: &mut Tape,
        tokens: &[usize],
        mode: &PatternMode,
    ) -> Result<(ForwardOut, Vec<Var>)> {
        if tokens.iter().any(|&t| t >= self.config.vocab_size) {
            return Err(Error::InvalidInput("token id outside vocabulary".into()));
        }
        if let PatternMode::Frozen { patterns } = mode {
            if patterns.len() != self.config.layers {
                return Err(Error::InvalidConfig("frozen pattern count != layers".into()));
            }
        }
        let l = tokens.len();
        let leaves = self.leaves(tape);
        let p = |name: &str| leaves[self.param_index(name)];
        let mut x = tape.embed(p("embed"), tokens);
        let mut layer_scores = Vec::with_capacity(self.config.layers);
        let mut patterns_used = Vec::with_capacity(self.config.layers);
        for (i, kind) in self.config.patterns.iter().enumerate() {
            // SSM branch: h_t = a_t ⊙ h_{t-1} + (1 - a_t) ⊙ u_t, y = h W_o.
            let pre_a = tape.matmul(x, p(&format!("layer{i}.wa")));
            let a = tape.sigmoid(pre_a);
            let u = tape.matmul(x, p(&format!("layer{i}.wb")));
            let h = tape.gated_scan(a, u);
            let mut y = tape.matmul(h, p(&format!("layer{i}.wo")));
            let mut score_out = None;
            let mut pattern_out = None;
            if kind.has_attention() {
                let q = tape.matmul(x, p(&format!("layer{i}.wq")));
                let k = tape.matmul(x, p(&format!("layer{i}.wk")));
                let v = tape.matmul(x, p(&format!("layer{i}.wv")));
                let q_det = tape.value(q).clone();
                let k_det = tape.value(k).clone();
                if kind.has_scorer() {
                    score_out = Some(LayerScore {
                        scores: self.scorer_column(tape, i, &leaves, &k_det, &q_det),
                        q: q_det.clone(),
                        k: k_det.clone(),
                    });
                }
                let pattern = match mode {
                    PatternMode::Frozen { patterns } => patterns[i]
                        .clone()
                        .ok_or_else(|| Error::InvalidConfig(format!("layer {i} needs a frozen pattern")))?,
                    PatternMode::Dynamic { lsh_seed } => self.layer_pattern(
                        i,
                        *kind,
                        l,
                        &q_det,
                        &k_det,
                        *lsh_seed,
                    )?,
                };
                let attn = tape.sparse_attention(q, k, v, &pattern);
                let gated = tape.mul_row(attn, p(&format!("layer{i}.gate")));
                y = tape.add(y, gated);
                pattern_out = Some(pattern);
            }
            layer_scores.push(score_out);
            patterns_used.push(pattern_out);
            x = y;
        }
        let logits = tape.matmul(x, p("head"));
        Ok((ForwardOut { logits, layer_scores, patterns: patterns_used }, leaves))
    }

    pub fn forward(&self, tape: &mut Tape, tokens: &[usize], mode: &PatternMode) -> Result<ForwardOut> {
        Ok(self.forward_with_leaves(tape, tokens, mode)?.0)
    }

    /// Differentiable scorer column over detached inputs: gradient reaches θ
    /// (the scorer parameters) only, matching the learning-to-rank convention
    /// of detached targets and frozen features.
    fn scorer_column(
        &self,
        tape: &mut Tape,
        layer: usize,
        leaves: &[Var],
        k_det: &Matrix,
        q_det: &Matrix,
    ) -> Var {
        let inputs = crate::patterns::ks_inputs(k_det, q_det);
        let x = tape.leaf(inputs);
        let w1 = leaves[self.param_index(&format!("layer{layer}.score_w1"))];
        let b1 = leaves[self.param_index(&format!("layer{layer}.score_b1"))];
        let w2 = leaves[self.param_index(&format!("layer{layer}.score_w2"))];
        let b2 = leaves[self.param_index(&format!("layer{layer}.score_b2"))];
        let h = tape.matmul(x, w1);
        let h = tape.add_row(h, b1);
        let h = tape.relu(h);
        let out = tape.matmul(h, w2);
        tape.add_row(out, b2)
    }

    /// The scorer as a plain [`KsScorer`] over current parameter values, for
    /// the non-differentiable pattern-selection phase.
    fn scorer_snapshot(&self, layer: usize) -> KsScorer {
        let w1 = self.param(&format!("layer{layer}.score_w1")).clone();
        let b1 = self.param(&format!("layer{layer}.score_b1")).data.clone();
        let w2 = self.param(&format!("layer{layer}.score_w2")).data.clone();
        let b2 = self.param(&format!("layer{layer}.score_b2")).data[0];
        KsScorer { w1, b1, w2, b2 }
    }

    fn layer_pattern(
        &self,
        layer: usize,
        kind: PatternKind,
        l: usize,
        q_det: &Matrix,
        k_det: &Matrix,
        lsh_seed: u64,
    ) -> Result<SparsePattern> {
        let k = self.config.budget;
        let stride = self.config.stride.max(2);
        match kind {
            PatternKind::None => unreachable!("no pattern for kind none"),
            PatternKind::SlidingWindow => cisa_pattern(CisaKind::SlidingWindow, l, k, stride),
            PatternKind::Dilated => cisa_pattern(CisaKind::Dilated, l, k, stride),
            PatternKind::SwPlusDilated => cisa_pattern(CisaKind::SwPlusDilated, l, k, stride),
            PatternKind::AShaped => cisa_pattern(CisaKind::AShaped, l, k, stride),
            PatternKind::Lsh => {
                let cfg = LshConfig { k_bin: k, seed: lsh_seed + layer as u64, ..self.config.lsh };
                let h = crate::patterns::lsh_projection(q_det.cols, &cfg);
                lsh_pattern_with_projection(q_det, k_det, &cfg, &h)
            }
            PatternKind::Ks => {
                let scores = ks_scores(k_det, q_det, &self.scorer_snapshot(layer));
                ks_pattern(&scores, l, k)
            }
            PatternKind::Hax => {
                let half = k / 2;
                let cfg =
                    LshConfig { k_bin: half, seed: lsh_seed + layer as u64, ..self.config.lsh };
                let h = crate::patterns::lsh_projection(q_det.cols, &cfg);
                let lsh = lsh_pattern_with_projection(q_det, k_det, &cfg, &h)?;
                let scores = ks_scores(k_det, q_det, &self.scorer_snapshot(layer));
                let ks = ks_pattern(&scores, l, half)?;
                hax_combine(&lsh, &ks)
            }
        }
    }
}

/// Reference attention targets (linear-attention surrogate): for query row i
/// and candidate c, `y[i][c] = σ(Q_i · K_{𝓘_c})` when `𝓘_c ≤ i`, else exactly 0.
/// The result is a constant — no gradient flows back through it.
pub fn reference_weights(q: &Matrix, k: &Matrix, candidates: &[usize]) -> Result<Matrix> {
    if candidates.len() > q.rows {
        return Err(Error::InvalidConfig("more candidates than positions".into()));
    }
    if q.rows != k.rows || q.cols != k.cols {
        return Err(Error::InvalidInput("Q and K shapes differ".into()));
    }
    let mut y = Matrix::zeros(q.rows, candidates.len());
    for i in 0..q.rows {
        for (c, &j) in candidates.iter().enumerate() {
            if j <= i {
                let a = dot(q.row(i), k.row(j));
                *y.at_mut(i, c) = 1.0 / (1.0 + (-a).exp());
            }
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterns::BinRule;

    fn small_config(patterns: Vec<PatternKind>) -> HybridModelConfig {
        HybridModelConfig {
            layers: patterns.len(),
            d: 6,
            vocab_size: 11,
            patterns,
            budget: 4,
            lsh: LshConfig { h: 2, rule: BinRule::SignBit, k_bin: 4, seed: 0 },
            gate_init: 0.0,
            widen_factor: 1,
            stride: 2,
        }
    }

    #[test]
    fn gate_zero_matches_attention_free() {
        let tokens: Vec<usize> = vec![3, 1, 4, 1, 5, 9, 2, 6];
        for kind in [
            PatternKind::SlidingWindow,
            PatternKind::Dilated,
            PatternKind::SwPlusDilated,
            PatternKind::AShaped,
            PatternKind::Lsh,
            PatternKind::Ks,
            PatternKind::Hax,
        ] {
            let cfg = small_config(vec![kind, kind]);
            let hybrid = Model::new(cfg.clone(), 17).unwrap();
            let bare = Model::new(cfg.attention_free(), 17).unwrap();
            let mode = PatternMode::Dynamic { lsh_seed: 5 };
            let mut t1 = Tape::new();
            let out1 = hybrid.forward(&mut t1, &tokens, &mode).unwrap();
            let mut t2 = Tape::new();
            let out2 = bare.forward(&mut t2, &tokens, &mode).unwrap();
            let a = &t1.value(out1.logits).data;
            let b = &t2.value(out2.logits).data;
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits(), "kind {kind:?} not bit-exact at init");
            }
        }
    }

    #[test]
    fn saturated_gate_keeps_zero_state() {
        // a_t -> 1 retains h_0 = 0 forever: force wa outputs huge positive.
        let cfg = small_config(vec![PatternKind::None]);
        let mut model = Model::new(cfg, 3).unwrap();
        let idx = model.param_index("layer0.wa");
        for v in &mut model.params[idx].1.data {
            *v = 60.0;
        }
        // positive pre-activations at every position: use an all-ones embed
        let e = model.param_index("embed");
        for v in &mut model.params[e].1.data {
            *v = 1.0;
        }
        let mut tape = Tape::new();
        let tokens = vec![1, 2, 3, 4];
        // h == 0 => logits are exactly zero rows through wo and head
        let (out, leaves) = model
            .forward_with_leaves(&mut tape, &tokens, &PatternMode::Dynamic { lsh_seed: 0 })
            .unwrap();
        let _ = leaves;
        for &v in &tape.value(out.logits).data {
            assert!(v.abs() < 1e-20, "state leaked: {v}");
        }
    }

    #[test]
    fn attention_branch_gets_gradient_once_gate_nonzero() {
        let mut cfg = small_config(vec![PatternKind::Hax]);
        cfg.gate_init = 0.5;
        let model = Model::new(cfg, 9).unwrap();
        let tokens = vec![1, 2, 3, 4, 5, 6];
        let mut tape = Tape::new();
        let (out, leaves) = model
            .forward_with_leaves(&mut tape, &tokens, &PatternMode::Dynamic { lsh_seed: 1 })
            .unwrap();
        let targets: Vec<Option<usize>> = tokens.iter().skip(1).map(|&t| Some(t)).chain([None]).collect();
        let loss = tape.cross_entropy(out.logits, &targets);
        tape.backward(loss);
        for w in ["wq", "wk", "wv"] {
            let g = tape.grad(leaves[model.param_index(&format!("layer0.{w}"))]);
            assert!(g.data.iter().any(|&x| x != 0.0), "no gradient reached {w}");
        }
    }

    #[test]
    fn reference_weights_zero_query_and_mask() {
        let q = Matrix::zeros(4, 3);
        let mut k = Matrix::zeros(4, 3);
        for v in &mut k.data {
            *v = 1.0;
        }
        let y = reference_weights(&q, &k, &[0, 3]).unwrap();
        // candidate 0 visible everywhere: sigma(0) = 0.5; candidate 3 only at row 3
        for i in 0..4 {
            assert_eq!(y.at(i, 0), 0.5);
        }
        assert_eq!(y.at(0, 1), 0.0);
        assert_eq!(y.at(2, 1), 0.0);
        assert_eq!(y.at(3, 1), 0.5);
        assert!(reference_weights(&q, &k, &[0, 1, 2, 3, 0]).is_err());
    }

    #[test]
    fn widen_factor_scales_width() {
        let mut cfg = small_config(vec![PatternKind::None]);
        cfg.widen_factor = 2;
        let model = Model::new(cfg, 1).unwrap();
        assert_eq!(model.param("embed").cols, 12);
        assert_eq!(model.param("head").rows, 12);
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_config(vec![PatternKind::Hax]);
        cfg.budget = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = small_config(vec![PatternKind::None]);
        cfg.patterns = vec![];
        assert!(cfg.validate().is_err());
    }
}
