//! Training loop, AdamW, evaluation, and checkpointing for the hybrid model.

use std::io::Write as _;
use std::path::Path;

use rand::prelude::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::model::{reference_weights, Model, PatternMode};
use crate::nn::tape::{Tape, Var};
use crate::task::{score_predictions, JointRecallInstance, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Ranking-loss weight α.
    pub alpha: f64,
    pub seed: u64,
    /// Validation cadence in steps; also logs at the final step.
    pub eval_every: usize,
    /// Cap on validation instances per evaluation (0 = all).
    pub eval_instances: usize,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 32,
            lr: 1e-3,
            alpha: 0.1,
            seed: 0,
            eval_every: 200,
            eval_instances: 0,
            weight_decay: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.lr <= 0.0 || self.eval_every == 0 {
            return Err(Error::InvalidConfig("batch, lr, eval_every must be positive".into()));
        }
        if self.alpha < 0.0 {
            return Err(Error::InvalidConfig("alpha must be >= 0".into()));
        }
        Ok(())
    }
}

/// One metrics-log row, serialized as JSON Lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub loss_lm: f64,
    pub loss_score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<f64>,
}

pub struct TrainOutcome {
    pub model: Model,
    pub metrics: Vec<MetricRow>,
    pub final_accuracy: f64,
    pub diverged: bool,
}

/// AdamW with decoupled weight decay; moment slots parallel the parameter
/// list of one model.
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: usize,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64, model: &Model) -> Self {
        let shapes: Vec<Matrix> =
            model.params.iter().map(|(_, p)| Matrix::zeros(p.rows, p.cols)).collect();
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }

    /// One update over all parameters. Non-finite gradients surface as a
    /// divergence error before any parameter is touched.
    pub fn step(&mut self, model: &mut Model, grads: &[Matrix]) -> Result<()> {
        assert_eq!(grads.len(), model.params.len());
        for g in grads {
            if g.data.iter().any(|x| !x.is_finite()) {
                return Err(Error::Divergence("non-finite gradient".into()));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (idx, (_, p)) in model.params.iter_mut().enumerate() {
            let g = &grads[idx];
            for i in 0..p.data.len() {
                let m = &mut self.m[idx].data[i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g.data[i];
                let v = &mut self.v[idx].data[i];
                *v = self.beta2 * *v + (1.0 - self.beta2) * g.data[i] * g.data[i];
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                p.data[i] -=
                    self.lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * p.data[i]);
            }
        }
        Ok(())
    }
}

/// Next-token targets over all positions, overridden at query positions with
/// the withheld value token; the last position is unsupervised unless it is a
/// query.
pub fn lm_targets(instance: &JointRecallInstance) -> Vec<Option<usize>> {
    let l = instance.tokens.len();
    let mut targets: Vec<Option<usize>> = (0..l)
        .map(|t| if t + 1 < l { Some(instance.tokens[t + 1]) } else { None })
        .collect();
    for &(pos, value) in &instance.queries {
        targets[pos] = Some(value);
    }
    targets
}

/// Collapses the per-(query, candidate) reference weights to one target per
/// candidate by averaging each column over all query rows (masked entries
/// count as zero), yielding the y ∈ R^k fed to the ranking loss.
pub fn candidate_targets(y: &Matrix) -> Vec<f64> {
    (0..y.cols)
        .map(|c| (0..y.rows).map(|r| y.at(r, c)).sum::<f64>() / y.rows as f64)
        .collect()
}

/// Builds the full training loss for one instance on `tape`:
/// L = L_LM + α Σ_layers L_score, with candidate indices per scorer layer.
pub fn instance_loss(
    tape: &mut Tape,
    model: &Model,
    instance: &JointRecallInstance,
    mode: &PatternMode,
    alpha: f64,
    candidates: &[Option<Vec<usize>>],
) -> Result<(Var, Var, f64, Vec<Var>)> {
    let (out, leaves) = model.forward_with_leaves(tape, &instance.tokens, mode)?;
    let targets = lm_targets(instance);
    let loss_lm = tape.cross_entropy(out.logits, &targets);
    let mut total = loss_lm;
    let mut score_sum = 0.0;
    if alpha > 0.0 {
        for (layer, ls) in out.layer_scores.iter().enumerate() {
            let Some(ls) = ls else { continue };
            let Some(Some(idx)) = candidates.get(layer) else { continue };
            let x = tape.gather_rows(ls.scores, idx);
            let y = reference_weights(&ls.q, &ls.k, idx)?;
            let t = candidate_targets(&y);
            let l_score = tape.ranking_loss(x, &t);
            score_sum += tape.scalar_value(l_score);
            total = tape.add_scaled(total, l_score, alpha);
        }
    }
    Ok((total, loss_lm, score_sum, leaves))
}

/// Draws `count` distinct positions from 0..l (all positions when l ≤ count).
fn sample_candidates(l: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut all: Vec<usize> = (0..l).collect();
    all.shuffle(rng);
    all.truncate(count.min(l));
    all.sort_unstable();
    all
}

/// Greedy predictions at query positions: argmax restricted to value tokens.
fn predict_queries(
    model: &Model,
    instance: &JointRecallInstance,
    vocab: &Vocabulary,
    mode: &PatternMode,
) -> Result<Vec<usize>> {
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, &instance.tokens, mode)?;
    let logits = tape.value(out.logits);
    let start = vocab.value_start();
    let end = vocab.total_ids();
    let mut preds = Vec::with_capacity(instance.queries.len());
    for &(pos, _) in &instance.queries {
        let row = logits.row(pos);
        let mut best = start;
        for tok in start..end {
            if row[tok] > row[best] {
                best = tok;
            }
        }
        preds.push(best);
    }
    Ok(preds)
}

/// Mean of per-instance accuracies, greedy decoding at query positions only.
/// Deterministic: the LSH projection is frozen via `lsh_seed`.
pub fn evaluate(
    model: &Model,
    data: &[JointRecallInstance],
    vocab: &Vocabulary,
    lsh_seed: u64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidInput("empty evaluation set".into()));
    }
    let mode = PatternMode::Dynamic { lsh_seed };
    let mut sum = 0.0;
    for instance in data {
        let preds = predict_queries(model, instance, vocab, &mode)?;
        sum += score_predictions(&preds, instance)?;
    }
    Ok(sum / data.len() as f64)
}

/// Trains for `cfg.steps` steps of batched gradient accumulation. The LSH
/// projection seed is resampled every step and frozen for evaluations. On
/// divergence the partial metric log is returned with `diverged = true`.
pub fn train(
    model_config: crate::nn::model::HybridModelConfig,
    cfg: &TrainConfig,
    train_data: &[JointRecallInstance],
    val_data: &[JointRecallInstance],
    vocab: &Vocabulary,
    mut log_sink: Option<&mut dyn std::io::Write>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_data.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let mut model = Model::new(model_config, cfg.seed)?;
    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay, &model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261696e);
    let eval_lsh_seed = cfg.seed ^ 0x6c7368;
    let eval_slice = |data: &'_ [JointRecallInstance]| -> usize {
        if cfg.eval_instances == 0 {
            data.len()
        } else {
            cfg.eval_instances.min(data.len())
        }
    };
    let mut metrics: Vec<MetricRow> = Vec::new();
    let mut diverged = false;
    let mut log_row = |row: MetricRow, sink: &mut Option<&mut dyn std::io::Write>| -> Result<()> {
        if let Some(s) = sink.as_deref_mut() {
            writeln!(s, "{}", serde_json::to_string(&row)?)?;
        }
        metrics.push(row);
        Ok(())
    };

    'steps: for step in 1..=cfg.steps {
        let lsh_seed = rng.gen::<u64>();
        let mode = PatternMode::Dynamic { lsh_seed };
        let mut grads: Vec<Matrix> =
            model.params.iter().map(|(_, p)| Matrix::zeros(p.rows, p.cols)).collect();
        let mut loss_lm_sum = 0.0;
        let mut loss_score_sum = 0.0;
        for _ in 0..cfg.batch_size {
            let instance = &train_data[rng.gen_range(0..train_data.len())];
            let l = instance.tokens.len();
            let candidates: Vec<Option<Vec<usize>>> = model
                .config
                .patterns
                .iter()
                .map(|k| {
                    k.has_scorer().then(|| sample_candidates(l, model.config.budget, &mut rng))
                })
                .collect();
            let mut tape = Tape::new();
            let (total, loss_lm, score_sum, leaves) =
                instance_loss(&mut tape, &model, instance, &mode, cfg.alpha, &candidates)?;
            let loss_value = tape.scalar_value(total);
            if !loss_value.is_finite() {
                diverged = true;
                break 'steps;
            }
            loss_lm_sum += tape.scalar_value(loss_lm);
            loss_score_sum += score_sum;
            tape.backward(total);
            let inv = 1.0 / cfg.batch_size as f64;
            for (g, leaf) in grads.iter_mut().zip(&leaves) {
                for (a, b) in g.data.iter_mut().zip(&tape.grad(*leaf).data) {
                    *a += b * inv;
                }
            }
        }
        if diverged {
            break;
        }
        if let Err(Error::Divergence(_)) = opt.step(&mut model, &grads) {
            diverged = true;
            break;
        }
        if step % cfg.eval_every == 0 || step == cfg.steps {
            let n = eval_slice(val_data);
            let acc = if n > 0 {
                Some(evaluate(&model, &val_data[..n], vocab, eval_lsh_seed)?)
            } else {
                None
            };
            log_row(
                MetricRow {
                    step,
                    loss_lm: loss_lm_sum / cfg.batch_size as f64,
                    loss_score: loss_score_sum / cfg.batch_size as f64,
                    val_accuracy: acc,
                },
                &mut log_sink,
            )?;
        }
    }
    let final_accuracy = if diverged || val_data.is_empty() {
        0.0
    } else {
        let n = eval_slice(val_data);
        evaluate(&model, &val_data[..n], vocab, eval_lsh_seed)?
    };
    Ok(TrainOutcome { model, metrics, final_accuracy, diverged })
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    seed: u64,
    config: crate::nn::model::HybridModelConfig,
    params: Vec<(String, Matrix)>,
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let ckpt = Checkpoint {
        version: 1,
        seed: model.seed,
        config: model.config.clone(),
        params: model.params.clone(),
    };
    let mut file = std::fs::File::create(path)?;
    serde_json::to_writer(&mut file, &ckpt)?;
    file.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let file = std::fs::File::open(path)?;
    let ckpt: Checkpoint = serde_json::from_reader(file)?;
    if ckpt.version != 1 {
        return Err(Error::InvalidInput(format!("unknown checkpoint version {}", ckpt.version)));
    }
    let model = Model { config: ckpt.config, params: ckpt.params, seed: ckpt.seed };
    model.config.validate()?;
    Ok(model)
}
