use std::collections::BTreeSet;
use std::fmt::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Group, Model, ModelError, Params, Prepared};
use crate::losses::{
    ce_loss, info_nce, mae_loss, mmtg_combined, plain_combined, LossError, DEFAULT_MMTG_LAMBDA,
    DEFAULT_PLAIN_LAMBDA, DEFAULT_TEMPERATURE,
};
use crate::metrics::{retrieval_top1, similarity_matrix};
use crate::synth::hash64;

/// Probe size for the per-epoch retrieval metric.
const PROBE_SIZE: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    Mmtg,
    Plain,
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mmtg" => Ok(Self::Mmtg),
            "plain" => Ok(Self::Plain),
            _ => Err(format!("unknown loss `{s}` (expected mmtg or plain)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub temperature: f64,
    pub mmtg_lambda: f64,
    pub plain_lambda: f64,
    /// Weight of the alignment term in stage 2.
    pub beta: f64,
    /// Probability of replacing the geometric embedding in stage 2.
    pub modality_dropout: f64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.2,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            temperature: DEFAULT_TEMPERATURE,
            mmtg_lambda: DEFAULT_MMTG_LAMBDA,
            plain_lambda: DEFAULT_PLAIN_LAMBDA,
            beta: 0.5,
            modality_dropout: 0.3,
            loss: LossKind::Mmtg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("stage must be 1, 2 or 3, got {0}")]
    BadStage(u8),
    #[error("invalid training configuration: {0}")]
    BadConfig(String),
    #[error("non-finite loss in stage {stage}, epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        stage: u8,
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_mae: f64,
    pub l_ce: f64,
    pub combined: f64,
    pub retrieval_top1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    pub stage: u8,
    pub records: Vec<EpochRecord>,
    /// Tokens of the training strings that mapped to `<unk>`.
    pub unk_tokens: usize,
}

impl TrainingLog {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,L_MAE,L_CE,combined,retrieval_top1\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{:.10e},{:.10e},{:.10e},{:.6}",
                r.epoch, r.l_mae, r.l_ce, r.combined, r.retrieval_top1
            );
        }
        out
    }
}

fn trainable(stage: u8) -> &'static [Group] {
    match stage {
        1 => &[Group::Geo],
        2 => &Group::ALL,
        _ => &[Group::Text, Group::Trunk, Group::Heads, Group::Missing],
    }
}

struct BatchOutcome {
    objective: f64,
    l_mae: f64,
    l_ce: f64,
    grad: Params,
}

/// Objective of one batch and its gradient with respect to the groups in
/// `groups`. `geo_present[i] = false` routes sample `i` through the
/// missing-modality vector.
fn batch_objective(
    model: &Model,
    batch: &[&Prepared],
    stage: u8,
    geo_present: &[bool],
    cfg: &TrainConfig,
    groups: &[Group],
) -> Result<BatchOutcome, LossError> {
    let b = batch.len();
    let d = model.config.embed_dim;
    let wants = |g: Group| groups.contains(&g);
    let need_align = stage != 3;
    let geo: Vec<Option<_>> = batch
        .iter()
        .zip(geo_present)
        .map(|(p, &present)| (present || need_align).then(|| model.geo_forward(&p.atoms)))
        .collect();
    let text: Vec<_> = batch.iter().map(|p| model.text_forward(&p.tokens)).collect();
    let heads: Vec<_> = (0..b)
        .map(|i| {
            let g = if geo_present[i] { geo[i].as_ref().map(|c| &c.out) } else { None };
            model.head_forward(g, &text[i].out)
        })
        .collect();

    let preds: Vec<f64> = heads.iter().map(|h| h.e_reg).collect();
    let targets: Vec<f64> = batch.iter().map(|p| p.energy).collect();
    let mae = mae_loss(&preds, &targets)?;
    let mut l_ce = 0.0;
    let mut d_logits = Vec::with_capacity(b);
    for (h, p) in heads.iter().zip(batch) {
        let ce = ce_loss(h.logits.as_slice(), p.bin)?;
        l_ce += ce.value / b as f64;
        d_logits.push(DVector::from_vec(ce.grad) / b as f64);
    }

    let mut objective = 0.0;
    let mut d_geo = vec![DVector::zeros(d); b];
    let mut d_text = vec![DVector::zeros(d); b];
    let mut grad = model.params.zeros_like();

    if need_align {
        let gm = DMatrix::from_fn(b, d, |i, k| geo[i].as_ref().expect("computed for alignment").out[k]);
        let tm = DMatrix::from_fn(b, d, |i, k| text[i].out[k]);
        let nce = info_nce(&gm, &tm, cfg.temperature)?;
        let w = if stage == 1 { 1.0 } else { cfg.beta };
        objective += w * nce.value;
        for i in 0..b {
            d_geo[i] += nce.grad.geo.row(i).transpose() * w;
            d_text[i] += nce.grad.text.row(i).transpose() * w;
        }
    }

    if stage != 1 {
        let comb = match cfg.loss {
            LossKind::Mmtg => mmtg_combined(mae.value, l_ce, cfg.mmtg_lambda),
            LossKind::Plain => plain_combined(mae.value, l_ce, cfg.plain_lambda),
        };
        objective += comb.value;
        let (g_mae, g_ce) = (comb.grad[0], comb.grad[1]);
        if !groups.is_empty() {
            for i in 0..b {
                let dx = model.head_backward(&heads[i], g_mae * mae.grad[i], &(&d_logits[i] * g_ce), &mut grad);
                if geo_present[i] {
                    d_geo[i] += dx.rows(0, d);
                } else {
                    grad.missing += dx.rows(0, d);
                }
                d_text[i] += dx.rows(d, d);
            }
        }
    }

    if wants(Group::Text) {
        for i in 0..b {
            model.text_backward(&batch[i].tokens, &text[i], &d_text[i], &mut grad);
        }
    }
    if wants(Group::Geo) {
        for i in 0..b {
            if let Some(c) = &geo[i] {
                model.geo_backward(&batch[i].atoms, c, &d_geo[i], &mut grad);
            }
        }
    }

    Ok(BatchOutcome {
        objective,
        l_mae: mae.value,
        l_ce,
        grad,
    })
}

fn sgd_step(params: &mut Params, grad: &Params, groups: &[Group], lr: f64) {
    let g = grad.blocks();
    for ((_, group, p), (_, _, dp)) in params.blocks_mut().into_iter().zip(g) {
        if groups.contains(&group) {
            for (x, dx) in p.iter_mut().zip(dp) {
                *x -= lr * dx;
            }
        }
    }
}

/// Up to [`PROBE_SIZE`] samples with pairwise distinct token sequences, in
/// dataset order.
pub(crate) fn alignment_probe(data: &[Prepared]) -> Vec<&Prepared> {
    let mut seen = BTreeSet::new();
    data.iter()
        .filter(|p| seen.insert(p.tokens.clone()))
        .take(PROBE_SIZE)
        .collect()
}

/// Top-1 cross-modal retrieval (geo rows against text columns), percent.
pub fn retrieval_on(model: &Model, data: &[&Prepared]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let d = model.config.embed_dim;
    let mut g = DMatrix::zeros(data.len(), d);
    let mut t = DMatrix::zeros(data.len(), d);
    for (i, p) in data.iter().enumerate() {
        g.row_mut(i).copy_from(&model.geo_forward(&p.atoms).out.transpose());
        t.row_mut(i).copy_from(&model.text_forward(&p.tokens).out.transpose());
    }
    similarity_matrix(&g, &t).map(|s| retrieval_top1(&s)).unwrap_or(0.0)
}

/// Runs one training stage in place.
///
/// Stage 1 trains the geometric encoder on the alignment loss alone. Stage 2
/// trains everything on the combined regression/classification loss plus
/// `beta` times the alignment loss, dropping the geometric embedding with
/// probability `modality_dropout`. Stage 3 freezes the geometric encoder and
/// alternates batches without and with the geometric embedding.
pub fn train_stage(
    model: &mut Model,
    stage: u8,
    data: &[Prepared],
    cfg: &TrainConfig,
) -> Result<TrainingLog, TrainError> {
    if !(1..=3).contains(&stage) {
        return Err(TrainError::BadStage(stage));
    }
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) || !(0.0..=1.0).contains(&cfg.modality_dropout) {
        return Err(TrainError::BadConfig(
            "batch_size and learning_rate must be positive, dropout in [0, 1]".into(),
        ));
    }
    let groups = trainable(stage);
    let seed = hash64(&[b"train", &cfg.seed.to_le_bytes(), &[stage]]);
    let mut order_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let probe = alignment_probe(data);
    let unk_tokens = data.iter().map(|p| p.unk).sum();

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let (mut s_mae, mut s_ce, mut s_obj) = (0.0, 0.0, 0.0);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &data[i]).collect();
            let present: Vec<bool> = match stage {
                1 => vec![true; batch.len()],
                2 => (0..batch.len()).map(|_| !drop_rng.random_bool(cfg.modality_dropout)).collect(),
                _ => vec![bi % 2 == 1; batch.len()],
            };
            // shapes are fixed by construction, so a loss error here means
            // the embeddings degenerated numerically
            let out = batch_objective(model, &batch, stage, &present, cfg, groups).map_err(|e| {
                TrainError::NonFiniteLoss {
                    stage,
                    epoch,
                    batch: bi,
                    detail: e.to_string(),
                }
            })?;
            if !(out.objective.is_finite() && out.l_mae.is_finite() && out.l_ce.is_finite()) {
                return Err(TrainError::NonFiniteLoss {
                    stage,
                    epoch,
                    batch: bi,
                    detail: format!("objective={} L_MAE={} L_CE={}", out.objective, out.l_mae, out.l_ce),
                });
            }
            sgd_step(&mut model.params, &out.grad, groups, cfg.learning_rate);
            if !model.params.all_finite() {
                return Err(TrainError::NonFiniteLoss {
                    stage,
                    epoch,
                    batch: bi,
                    detail: format!("parameters became non-finite after the update (objective={})", out.objective),
                });
            }
            let w = batch.len() as f64;
            s_mae += out.l_mae * w;
            s_ce += out.l_ce * w;
            s_obj += out.objective * w;
        }
        let n = data.len() as f64;
        records.push(EpochRecord {
            epoch,
            l_mae: s_mae / n,
            l_ce: s_ce / n,
            combined: s_obj / n,
            retrieval_top1: retrieval_on(model, &probe),
        });
    }
    Ok(TrainingLog {
        stage,
        records,
        unk_tokens,
    })
}

/// Stage-2 objective value only; used by the finite-difference check.
fn stage2_value(model: &Model, batch: &[&Prepared], present: &[bool], cfg: &TrainConfig) -> f64 {
    batch_objective(model, batch, 2, present, cfg, &[])
        .map(|o| o.objective)
        .unwrap_or(f64::NAN)
}

/// Largest relative error between analytic and central-difference gradients
/// of the stage-2 objective over `samples` randomly chosen parameters.
/// Every third sample uses the missing-modality vector.
pub fn gradient_check(
    model: &Model,
    batch: &[Prepared],
    cfg: &TrainConfig,
    eps: f64,
    samples: usize,
    seed: u64,
) -> Result<f64, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let refs: Vec<&Prepared> = batch.iter().collect();
    let present: Vec<bool> = (0..batch.len()).map(|i| i % 3 != 2).collect();
    let analytic = batch_objective(model, &refs, 2, &present, cfg, &Group::ALL)?.grad;
    let n = model.params.count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let k = rng.random_range(0..n);
        let x = model.params.get(k);
        probe.params.set(k, x + eps);
        let up = stage2_value(&probe, &refs, &present, cfg);
        probe.params.set(k, x - eps);
        let down = stage2_value(&probe, &refs, &present, cfg);
        probe.params.set(k, x);
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.get(k);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}
