//! Dataset handling, training and evaluation loops, synthetic generation,
//! corpus analysis, metrics, and checkpoints.

pub mod analyze;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod metrics;
pub mod model;
pub mod split;
pub mod synth;

use std::collections::BTreeMap;

use crate::encoder::{EmbeddingMatrix, Encoder, EncoderConfig, UserDocument};
use crate::error::{Error, Result};
use crate::heads::compute_pe;
use crate::num::store::ParameterStore;
use crate::num::tape::Tape;
use crate::num::Rng;
use crate::{Mode, Real};

pub use analyze::{analyze_corpus, CorpusAnalysis};
pub use checkpoint::Checkpoint;
pub use config::{parse_config_file, TrainConfig};
pub use dataset::{leakage_filter, load_jsonl_dataset, preprocess, save_jsonl_dataset};
pub use metrics::MetricsReport;
pub use model::Model;
pub use split::{stratified_split, DatasetSplit};
pub use synth::{generate_synthetic, GeneratorConfig};

type EmbeddingCache = BTreeMap<String, EmbeddingMatrix<Real>>;

/// Build the encoder named by the config, loading the precomputed embedding
/// file when that provider is selected.
pub fn build_encoder(cfg: &TrainConfig) -> Result<Encoder<Real>> {
    let enc_cfg = EncoderConfig {
        provider: cfg.provider,
        d: cfg.d,
        pooling: cfg.effective_pooling(),
        max_tokens_per_user: cfg.max_tokens_per_user,
    };
    enc_cfg.validate()?;
    match cfg.provider {
        crate::encoder::ProviderKind::HashedNgram => Ok(Encoder::new(enc_cfg)),
        crate::encoder::ProviderKind::PrecomputedFile => {
            let path = cfg.embeddings.as_ref().ok_or_else(|| {
                Error::invalid("the precomputed-file provider needs an embeddings path")
            })?;
            let map = crate::encoder::load_precomputed_embeddings(path)?;
            if let Some((user, rows)) = map.iter().find(|(_, rows)| rows.cols() != cfg.d) {
                return Err(Error::Data(format!(
                    "embedding file width {} (user `{user}`) does not match configured d = {}",
                    rows.cols(),
                    cfg.d
                )));
            }
            Ok(Encoder::with_precomputed(enc_cfg, map))
        }
    }
}

fn index_docs(docs: &[UserDocument]) -> BTreeMap<&str, &UserDocument> {
    docs.iter().map(|d| (d.user_id.as_str(), d)).collect()
}

/// Evaluation over a list of user ids: eval mode, argmax routing, pe = 0,
/// no dropout, exactly one specialist per user.
fn evaluate_with(
    model: &Model,
    store: &ParameterStore<Real>,
    ids: &[String],
    by_id: &BTreeMap<&str, &UserDocument>,
    embeddings: &EmbeddingCache,
) -> Result<MetricsReport> {
    if ids.is_empty() {
        return Err(Error::Data("evaluation split is empty".to_string()));
    }
    // Only random routing consumes randomness at eval time; give it its own
    // fixed stream so evaluation never perturbs training.
    let mut eval_rng = Rng::new(model.cfg.seed ^ 0x45564143);
    let mut dim_labels = Vec::with_capacity(ids.len());
    let mut dim_preds = Vec::with_capacity(ids.len());
    let mut type_labels = Vec::with_capacity(ids.len());
    let mut type_preds = Vec::with_capacity(ids.len());
    let mut implied = Vec::with_capacity(ids.len());
    let mut histogram = vec![0usize; model.cfg.k];
    for id in ids {
        let doc = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Data(format!("split references unknown user `{id}`")))?;
        let labels = doc
            .labels
            .ok_or_else(|| Error::Data(format!("user `{id}` has no labels to evaluate")))?;
        let h = embeddings
            .get(id)
            .ok_or_else(|| Error::Data(format!("no embeddings for user `{id}`")))?;
        let mut tape = Tape::new();
        let fwd = model.forward_user(
            &mut tape,
            store,
            h,
            Some(labels),
            Mode::Eval,
            0.0,
            0,
            &mut eval_rng,
        )?;
        dim_labels.push(labels.bits());
        dim_preds.push(fwd.bundle.binary_preds);
        type_labels.push(labels.type_index());
        type_preds.push(fwd.bundle.type_pred);
        let p = fwd.bundle.binary_preds;
        implied.push(
            crate::encoder::Labels::new(p[0], p[1], p[2], p[3])
                .expect("bits")
                .type_index(),
        );
        histogram[fwd.decision.winner] += 1;
    }
    MetricsReport::from_outcomes(
        &dim_labels,
        &dim_preds,
        &type_labels,
        &type_preds,
        &implied,
        histogram,
    )
}

/// Outcome of a training run: the best-validation checkpoint plus the test
/// report (with the per-epoch loss curve attached).
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub report: MetricsReport,
    pub split: DatasetSplit,
    pub best_epoch: usize,
    pub best_validation_macro_f1: f64,
}

/// End-to-end training: leakage filtering, stratified splitting, the batched
/// epoch loop with delayed-PE feedback, best-validation checkpoint selection,
/// and a final test evaluation. Fully deterministic in (seed, config, data).
pub fn train(cfg: &TrainConfig, raw_docs: &[UserDocument]) -> Result<TrainOutcome> {
    cfg.validate()?;
    let docs = preprocess(raw_docs);
    for d in &docs {
        if d.labels.is_none() {
            return Err(Error::Data(format!(
                "user `{}` has no labels; training needs labeled data",
                d.user_id
            )));
        }
    }
    let split = stratified_split(&docs, cfg.split_seed)?;
    if split.train.is_empty() {
        return Err(Error::Data("training split is empty".to_string()));
    }
    let by_id = index_docs(&docs);
    let encoder = build_encoder(cfg)?;
    let embeddings = model::encode_all(&encoder, &docs)?;

    let mut master = Rng::new(cfg.seed);
    let mut init_rng = master.split();
    let mut train_rng = master.split();
    let mut store = ParameterStore::new();
    let model = Model::init(cfg, &mut store, &mut init_rng)?;

    // Delayed prediction error: the modulation at batch b uses the mean
    // normalized PE of batch b-1; the very first batch sees zero.
    let mut pe_scalar = 0.0f64;
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, ParameterStore<Real>, usize)> = None;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<String> = split.train.clone();
        train_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut tape = Tape::new();
            let mut loss_vars = Vec::with_capacity(chunk.len());
            let mut losses = Vec::with_capacity(chunk.len());
            for id in chunk {
                let doc = by_id[id.as_str()];
                let h = &embeddings[id];
                let fwd = model.forward_user(
                    &mut tape,
                    &store,
                    h,
                    doc.labels,
                    Mode::Train,
                    pe_scalar,
                    epoch,
                    &mut train_rng,
                )?;
                let lv = fwd.loss.expect("labels present");
                loss_vars.push(lv.total);
                losses.push(fwd.bundle.loss_total);
            }
            let mut total = loss_vars[0];
            for lv in &loss_vars[1..] {
                total = tape.add(total, *lv)?;
            }
            let batch_loss = tape.scale(total, 1.0 / chunk.len() as f64);
            let loss_val = tape.value(batch_loss).as_scalar()?;
            if !loss_val.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_idx,
                });
            }
            tape.backward(batch_loss, &mut store)?;
            store.adam_step(cfg.learning_rate);

            let pes = compute_pe(&losses);
            pe_scalar = pes.iter().sum::<f64>() / pes.len() as f64;
            epoch_loss += loss_val;
            batches += 1;
        }
        loss_curve.push(epoch_loss / batches as f64);

        let val = evaluate_with(&model, &store, &split.validation, &by_id, &embeddings)?;
        match &best {
            Some((score, _, _)) if val.macro_f1_avg <= *score => {}
            _ => best = Some((val.macro_f1_avg, store.clone(), epoch)),
        }
    }

    let (best_score, best_store, best_epoch) = best.expect("epochs >= 1");
    let checkpoint =
        Checkpoint::from_store(cfg.clone(), best_epoch, train_rng.state(), &best_store);
    let mut report = evaluate_with(&model, &best_store, &split.test, &by_id, &embeddings)?;
    report.loss_curve = loss_curve;
    Ok(TrainOutcome {
        checkpoint,
        report,
        split,
        best_epoch,
        best_validation_macro_f1: best_score,
    })
}

/// Evaluate a checkpoint over the given user ids (or every labeled user when
/// `ids` is `None`).
pub fn evaluate(
    ckpt: &Checkpoint,
    ids: Option<&[String]>,
    raw_docs: &[UserDocument],
) -> Result<MetricsReport> {
    let docs = preprocess(raw_docs);
    let store = ckpt.to_store()?;
    let model = Model::attach(&ckpt.config, &store)?;
    let by_id = index_docs(&docs);
    let encoder = build_encoder(&ckpt.config)?;
    let embeddings = model::encode_all(&encoder, &docs)?;
    let all_ids: Vec<String>;
    let ids = match ids {
        Some(ids) => ids,
        None => {
            all_ids = docs.iter().map(|d| d.user_id.clone()).collect();
            &all_ids
        }
    };
    evaluate_with(&model, &store, ids, &by_id, &embeddings)
}

/// Per-user inference output.
#[derive(Clone, Debug, serde::Serialize)]
pub struct Prediction {
    pub user_id: String,
    pub bundle: crate::heads::PredictionBundle,
    pub decision: crate::routing::RoutingDecision,
}

/// Run eval-mode inference over the given user ids (all users when `None`).
/// Labels are not required; loss fields are zero when they are absent.
pub fn predict(
    ckpt: &Checkpoint,
    ids: Option<&[String]>,
    raw_docs: &[UserDocument],
) -> Result<Vec<Prediction>> {
    let docs = preprocess(raw_docs);
    let store = ckpt.to_store()?;
    let model = Model::attach(&ckpt.config, &store)?;
    let by_id = index_docs(&docs);
    let encoder = build_encoder(&ckpt.config)?;
    let embeddings = model::encode_all(&encoder, &docs)?;
    let all_ids: Vec<String>;
    let ids = match ids {
        Some(ids) => ids,
        None => {
            all_ids = docs.iter().map(|d| d.user_id.clone()).collect();
            &all_ids
        }
    };
    let mut eval_rng = Rng::new(model.cfg.seed ^ 0x45564143);
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let doc = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Data(format!("unknown user `{id}`")))?;
        let h = embeddings
            .get(id)
            .ok_or_else(|| Error::Data(format!("no embeddings for user `{id}`")))?;
        let mut tape = Tape::new();
        let fwd = model.forward_user(
            &mut tape,
            &store,
            h,
            doc.labels,
            Mode::Eval,
            0.0,
            0,
            &mut eval_rng,
        )?;
        out.push(Prediction {
            user_id: id.clone(),
            bundle: fwd.bundle,
            decision: fwd.decision,
        });
    }
    Ok(out)
}
