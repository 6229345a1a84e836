use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::{auc, config_hash, EpochTrace, Evaluation, LabelSource, MetricsReport, PretrainReport};
use super::{TrainConfig, TrainError};
use crate::autodiff::{AdamState, Tape, Var};
use crate::data::{in_batch_negatives, make_batches, Batch, InteractionRecord, Schema};
use crate::estimators::{
    ce_delta, imputation_training_loss, mmd2, mmd2_tape, steady_state_residual, EstimatorBatch, EstimatorKind,
    PROPENSITY_FLOOR,
};
use crate::lab::{Observations, SyntheticWorld};
use crate::model::{EgeanModel, Task};

const EVAL_CHUNK: usize = 2048;

/// Records plus, for synthetic data, conversion labels on every row.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainData {
    pub schema: Schema,
    pub records: Vec<InteractionRecord>,
    pub oracle_conversions: Option<Vec<bool>>,
}

impl TrainData {
    pub fn new(schema: Schema, records: Vec<InteractionRecord>, oracle: Option<Vec<bool>>) -> Result<Self, TrainError> {
        if records.is_empty() {
            return Err(TrainError::InvalidConfig("dataset is empty".into()));
        }
        if let Some(o) = &oracle {
            let consistent = o.len() == records.len()
                && records.iter().zip(o).all(|(r, &full)| !r.click || r.conversion == full);
            if !consistent {
                return Err(TrainError::InvalidConfig(
                    "oracle labels must cover every row and agree with observed conversions".into(),
                ));
            }
        }
        Ok(Self {
            schema,
            records,
            oracle_conversions: oracle,
        })
    }

    /// Records for a sampled world: conversions are recorded only on clicks.
    pub fn from_world(world: &SyntheticWorld, obs: &Observations) -> Self {
        let records = (0..world.len())
            .map(|i| InteractionRecord {
                codes: world.codes(i),
                click: obs.clicks[i],
                conversion: obs.clicks[i] && obs.conversions[i],
            })
            .collect();
        Self {
            schema: world.schema(),
            records,
            oracle_conversions: Some(obs.conversions.clone()),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn codes(&self) -> Vec<u32> {
        self.records.iter().flat_map(|r| r.codes.iter().copied()).collect()
    }

    pub fn codes_of(&self, rows: &[usize]) -> Vec<u32> {
        rows.iter().flat_map(|&r| self.records[r].codes.iter().copied()).collect()
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Independent stream per (purpose, index) under the run seed.
fn stream(seed: u64, tag: &str, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(tag));
    rng.set_stream(k);
    rng
}

fn shuffle_seed(seed: u64, tag: &str, epoch: usize) -> u64 {
    use rand::Rng;
    stream(seed, tag, epoch as u64).random()
}

fn bool_f64(v: &[bool]) -> Vec<f64> {
    v.iter().map(|&b| f64::from(u8::from(b))).collect()
}

fn check_finite(value: f64, stage: &'static str, epoch: usize, batch: usize, diag: impl Fn() -> String) -> Result<f64, TrainError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(TrainError::NonFinite {
            stage,
            epoch,
            batch,
            diagnostics: diag(),
        })
    }
}

/// Exposure-task pretraining of the shared table with in-batch negatives.
/// The table is frozen afterwards. A no-op without the exposure network.
pub fn pretrain_exposure(model: &mut EgeanModel, data: &TrainData, cfg: &TrainConfig) -> Result<PretrainReport, TrainError> {
    cfg.validate()?;
    if !model.config().ablation.exposure_network_on {
        model.begin_finetuning();
        return Ok(PretrainReport {
            skipped: true,
            epoch_losses: vec![],
            negatives: 0,
            skipped_negatives: 0,
        });
    }
    model.begin_pretraining();
    let group = model.exposure_group();
    let mut adam = AdamState::new(cfg.adam());
    let mut report = PretrainReport {
        skipped: false,
        epoch_losses: Vec::with_capacity(cfg.pretrain_epochs),
        negatives: 0,
        skipped_negatives: 0,
    };
    for epoch in 1..=cfg.pretrain_epochs {
        let batches = make_batches(&data.records, cfg.batch_size, shuffle_seed(cfg.seed, "pretrain", epoch))?;
        let mut neg_rng = stream(cfg.seed, "negatives", epoch as u64);
        let mut total = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            let eb = in_batch_negatives(batch, &data.schema, &mut neg_rng);
            report.negatives += eb.negatives;
            report.skipped_negatives += eb.skipped;
            let mut tape = Tape::new();
            let p = model.exposure_forward(&mut tape, &eb.codes, eb.len())?;
            let ce = tape.cross_entropy(p, bool_f64(&eb.labels))?;
            let loss = tape.mean(ce);
            let v = check_finite(tape.scalar(loss), "pretrain", epoch, bi, || {
                format!("rows {}, negatives {}, skipped {}", eb.len(), eb.negatives, eb.skipped)
            })?;
            total += v;
            tape.backward(loss, model.store_mut())?;
            adam.step(model.store_mut(), &group)?;
        }
        report.epoch_losses.push(total / batches.len() as f64);
    }
    model.begin_finetuning();
    Ok(report)
}

/// Per-minibatch constants shared by the three update steps.
struct BatchCtx {
    codes: Vec<u32>,
    n: usize,
    clicked: Vec<usize>,
    click_labels: Vec<f64>,
    conv_clicked: Vec<f64>,
}

impl BatchCtx {
    fn new(b: &Batch) -> Self {
        let clicked: Vec<usize> = (0..b.len()).filter(|&i| b.clicks[i]).collect();
        Self {
            codes: b.codes.clone(),
            n: b.len(),
            conv_clicked: clicked.iter().map(|&i| f64::from(u8::from(b.conversions[i]))).collect(),
            click_labels: bool_f64(&b.clicks),
            clicked,
        }
    }
}

fn floored(p: &[f64], clamps: &mut usize) -> Vec<f64> {
    p.iter()
        .map(|&v| {
            if v < PROPENSITY_FLOOR || v.is_nan() {
                *clamps += 1;
                PROPENSITY_FLOOR
            } else {
                v
            }
        })
        .collect()
}

/// One training session over a fixed dataset.
struct Finetuner<'a> {
    data: &'a TrainData,
    cfg: &'a TrainConfig,
    alpha: f64,
    lambda: f64,
    adam_ctr: AdamState<f64>,
    adam_imp: AdamState<f64>,
    adam_cvr: AdamState<f64>,
    clamp_events: usize,
    eval_clicked: Vec<usize>,
    eval_all: Vec<usize>,
}

impl<'a> Finetuner<'a> {
    fn new(model: &EgeanModel, data: &'a TrainData, cfg: &'a TrainConfig) -> Self {
        let alpha = if model.config().ablation.metric_learning_on { cfg.alpha_mmd } else { 0.0 };
        let mut rng = stream(cfg.seed, "mmd-eval", 0);
        let mut clicked: Vec<usize> = (0..data.len()).filter(|&i| data.records[i].click).collect();
        clicked.shuffle(&mut rng);
        clicked.truncate(cfg.mmd_eval_sample);
        let mut all: Vec<usize> = (0..data.len()).collect();
        all.shuffle(&mut rng);
        all.truncate(cfg.mmd_eval_sample);
        Self {
            data,
            cfg,
            alpha,
            lambda: cfg.lambda.get(),
            adam_ctr: AdamState::new(cfg.adam()),
            adam_imp: AdamState::new(cfg.adam()),
            adam_cvr: AdamState::new(cfg.adam()),
            clamp_events: 0,
            eval_clicked: clicked,
            eval_all: all,
        }
    }

    /// `λ + (1-λ) A - B` as a tape node, with `A` from `inv_p` (either a
    /// node or constants) and `B` from imputed errors.
    fn residual_node(&self, tape: &mut Tape<f64>, a: Var, b: Var) -> Result<Var, TrainError> {
        let a = tape.scale(a, 1.0 - self.lambda);
        let r = tape.sub(a, b)?;
        Ok(tape.add_scalar(r, self.lambda))
    }

    fn step_ctr(&mut self, model: &mut EgeanModel, ctx: &BatchCtx) -> Result<f64, TrainError> {
        let cfg = self.cfg;
        let mut tape = Tape::new();
        let fp = model.forward(&mut tape, &ctx.codes, ctx.n)?;
        self.clamp_events += tape.value(fp.ctr).iter().filter(|&&v| v < PROPENSITY_FLOOR).count();
        let ce = tape.cross_entropy(fp.ctr, ctx.click_labels.clone())?;
        let ctr_loss = tape.mean(ce);
        let mut loss = tape.scale(ctr_loss, cfg.w_ctr);
        if cfg.gamma_steady > 0.0 && !ctx.clicked.is_empty() {
            let imputed = tape.value(fp.imputed).to_vec();
            let mass: f64 = imputed.iter().sum();
            let p = tape.floor(fp.ctr, PROPENSITY_FLOOR);
            let pc = tape.gather_rows(p, &ctx.clicked)?;
            let ones = tape.column(vec![1.0; ctx.clicked.len()])?;
            let inv = tape.div(ones, pc)?;
            let a = tape.sum(inv);
            let a = tape.scale(a, 1.0 / ctx.n as f64);
            let ec = tape.column(ctx.clicked.iter().map(|&i| imputed[i]).collect())?;
            let w = tape.mul(inv, ec)?;
            let b = tape.sum(w);
            let b = tape.scale(b, 1.0 / mass);
            let r = self.residual_node(&mut tape, a, b)?;
            let r2 = tape.mul(r, r)?;
            let pen = tape.scale(r2, cfg.gamma_steady);
            loss = tape.add(loss, pen)?;
        }
        let v = tape.scalar(loss);
        tape.backward(loss, model.store_mut())?;
        let group = model.task_group(Task::Ctr);
        self.adam_ctr.step(model.store_mut(), &group)?;
        Ok(v)
    }

    fn step_imputation(&mut self, model: &mut EgeanModel, ctx: &BatchCtx) -> Result<f64, TrainError> {
        if ctx.clicked.is_empty() {
            return Ok(0.0);
        }
        let cfg = self.cfg;
        let mut tape = Tape::new();
        let fp = model.forward(&mut tape, &ctx.codes, ctx.n)?;
        let mut clamps = 0;
        let p = floored(tape.value(fp.ctr), &mut clamps);
        let cvr = tape.value(fp.cvr).to_vec();
        let inv: Vec<f64> = ctx.clicked.iter().map(|&i| 1.0 / p[i]).collect();
        let e: Vec<f64> = ctx
            .clicked
            .iter()
            .zip(&ctx.conv_clicked)
            .map(|(&i, &y)| ce_delta(y > 0.5, cvr[i]))
            .collect();
        let ec = tape.gather_rows(fp.imputed, &ctx.clicked)?;
        let target = tape.column(e)?;
        let diff = tape.sub(ec, target)?;
        let sq = tape.mul(diff, diff)?;
        let invc = tape.column(inv.clone())?;
        let weighted = tape.mul(sq, invc)?;
        let imp = tape.sum(weighted);
        let imp = tape.scale(imp, 1.0 / ctx.n as f64);
        let mut loss = tape.scale(imp, cfg.w_imp);
        if cfg.gamma_steady > 0.0 {
            let a_val = inv.iter().sum::<f64>() / ctx.n as f64;
            let a = tape.constant(1, 1, vec![a_val])?;
            let num = tape.mul(ec, invc)?;
            let num = tape.sum(num);
            let den = tape.sum(fp.imputed);
            let b = tape.div(num, den)?;
            let r = self.residual_node(&mut tape, a, b)?;
            let r2 = tape.mul(r, r)?;
            let pen = tape.scale(r2, cfg.gamma_steady);
            loss = tape.add(loss, pen)?;
        }
        let v = tape.scalar(loss);
        tape.backward(loss, model.store_mut())?;
        let group = model.imputation_group();
        self.adam_imp.step(model.store_mut(), &group)?;
        Ok(v)
    }

    fn step_cvr(&mut self, model: &mut EgeanModel, ctx: &BatchCtx) -> Result<f64, TrainError> {
        if ctx.clicked.is_empty() {
            return Ok(0.0);
        }
        let cfg = self.cfg;
        let mut tape = Tape::new();
        let fp = model.forward(&mut tape, &ctx.codes, ctx.n)?;
        let mut clamps = 0;
        let p = floored(tape.value(fp.ctr), &mut clamps);
        let inv: Vec<f64> = ctx.clicked.iter().map(|&i| 1.0 / p[i]).collect();
        let cc = tape.gather_rows(fp.cvr, &ctx.clicked)?;
        let e = tape.cross_entropy(cc, ctx.conv_clicked.clone())?;
        let n = ctx.n as f64;
        let est = match cfg.estimator {
            EstimatorKind::Naive => tape.mean(e),
            EstimatorKind::Pvdr => {
                let denom = self.lambda * n + (1.0 - self.lambda) * inv.iter().sum::<f64>();
                let w = tape.column(inv)?;
                let we = tape.mul(e, w)?;
                let s = tape.sum(we);
                tape.scale(s, 1.0 / denom)
            }
            EstimatorKind::Dr => {
                let imputed = tape.value(fp.imputed).to_vec();
                let offset = imputed.iter().sum::<f64>()
                    - ctx.clicked.iter().zip(&inv).map(|(&i, w)| imputed[i] * w).sum::<f64>();
                let w = tape.column(inv)?;
                let we = tape.mul(e, w)?;
                let s = tape.sum(we);
                let s = tape.add_scalar(s, offset);
                tape.scale(s, 1.0 / n)
            }
        };
        let mut loss = tape.scale(est, cfg.w_cvr);
        if self.alpha > 0.0 {
            let k = ctx.clicked.len().min(cfg.mmd_sample);
            let x = tape.gather_rows(fp.cvr_embedding, &ctx.clicked[..k])?;
            let all: Vec<usize> = (0..ctx.n.min(cfg.mmd_sample)).collect();
            let y = tape.gather_rows(fp.shared, &all)?;
            let m = mmd2_tape(&mut tape, x, y, &cfg.kernel)?;
            let m = tape.scale(m, self.alpha);
            loss = tape.add(loss, m)?;
        }
        let v = tape.scalar(loss);
        tape.backward(loss, model.store_mut())?;
        let group = model.task_group(Task::Cvr);
        self.adam_cvr.step(model.store_mut(), &group)?;
        Ok(v)
    }

    /// Full-data objective and diagnostics at the current parameters.
    fn trace(&self, model: &EgeanModel, epoch: usize, train_loss: Option<f64>) -> Result<EpochTrace, TrainError> {
        let cfg = self.cfg;
        let data = self.data;
        let preds = model.predict(&data.codes(), data.len(), EVAL_CHUNK)?;
        let n = data.len() as f64;
        let ctr_loss = data
            .records
            .iter()
            .zip(&preds.ctr)
            .map(|(r, &p)| ce_delta(r.click, p))
            .sum::<f64>()
            / n;
        let observed: Vec<bool> = data.records.iter().map(|r| r.click).collect();
        let errors = data
            .records
            .iter()
            .zip(&preds.cvr)
            .map(|(r, &q)| r.click.then(|| ce_delta(r.conversion, q)))
            .collect();
        let batch = EstimatorBatch::new(observed, preds.ctr.clone(), errors, Some(preds.imputed.clone()))?;
        let cvr_loss = cfg.estimator.evaluate(&batch, cfg.lambda)?;
        let imputation_loss = imputation_training_loss(&batch)?;
        let residual = steady_state_residual(&batch, cfg.lambda)?;
        let mmd = self.eval_mmd(model)?;
        let total_loss = cfg.w_ctr * ctr_loss
            + cfg.w_cvr * cvr_loss
            + self.alpha * mmd
            + cfg.w_imp * imputation_loss
            + cfg.gamma_steady * residual * residual;
        Ok(EpochTrace {
            epoch,
            train_loss,
            total_loss,
            ctr_loss,
            cvr_loss,
            imputation_loss,
            steady_state_residual: residual,
            mmd2: mmd,
            clamp_events: batch.clamp_events(),
        })
    }

    /// MMD² between CVR embeddings of a fixed clicked subset and shared
    /// embeddings of a fixed exposed subset.
    fn eval_mmd(&self, model: &EgeanModel) -> Result<f64, TrainError> {
        if self.eval_clicked.is_empty() {
            return Ok(0.0);
        }
        let width = model.embedding_width();
        let (_, x) = model.embeddings(&self.data.codes_of(&self.eval_clicked), self.eval_clicked.len(), EVAL_CHUNK)?;
        let (y, _) = model.embeddings(&self.data.codes_of(&self.eval_all), self.eval_all.len(), EVAL_CHUNK)?;
        Ok(mmd2(&x, &y, width, &self.cfg.kernel)?)
    }
}

/// Multi-task finetuning with the cyclic CTR → imputation → CVR update
/// order per minibatch. Returns one trace per epoch, starting at epoch 0.
pub fn finetune_multitask(model: &mut EgeanModel, data: &TrainData, cfg: &TrainConfig) -> Result<(Vec<EpochTrace>, usize), TrainError> {
    cfg.validate()?;
    model.begin_finetuning();
    let mut ft = Finetuner::new(model, data, cfg);
    let mut traces = vec![ft.trace(model, 0, None)?];
    for epoch in 1..=cfg.epochs {
        let batches = make_batches(&data.records, cfg.batch_size, shuffle_seed(cfg.seed, "finetune", epoch))?;
        let mut total = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            let ctx = BatchCtx::new(batch);
            let diag = |step: &str, v: f64, clamps: usize| {
                format!(
                    "{step} loss {v}; rows {}, clicks {}, conversions {}, clamp events so far {clamps}",
                    ctx.n,
                    ctx.clicked.len(),
                    ctx.conv_clicked.iter().filter(|&&c| c > 0.5).count(),
                )
            };
            let l1 = ft.step_ctr(model, &ctx)?;
            check_finite(l1, "finetune/ctr", epoch, bi, || diag("ctr", l1, ft.clamp_events))?;
            let l2 = ft.step_imputation(model, &ctx)?;
            check_finite(l2, "finetune/imputation", epoch, bi, || diag("imputation", l2, ft.clamp_events))?;
            let l3 = ft.step_cvr(model, &ctx)?;
            check_finite(l3, "finetune/cvr", epoch, bi, || diag("cvr", l3, ft.clamp_events))?;
            total += l1 + l2 + l3;
        }
        let mean = total / batches.len() as f64;
        let t = ft.trace(model, epoch, Some(mean))?;
        check_finite(t.total_loss, "finetune/trace", epoch, batches.len(), || format!("{t:?}"))?;
        traces.push(t);
    }
    Ok((traces, ft.clamp_events))
}

/// Full-space AUCs. CVR AUC uses oracle labels when available and the
/// click space otherwise.
pub fn evaluate(model: &EgeanModel, data: &TrainData) -> Result<Evaluation, TrainError> {
    let preds = model.predict(&data.codes(), data.len(), EVAL_CHUNK)?;
    let (cvr_auc, source, rows) = match &data.oracle_conversions {
        Some(labels) => (auc(&preds.cvr, labels)?, LabelSource::Oracle, labels.len()),
        None => {
            let rows: Vec<usize> = (0..data.len()).filter(|&i| data.records[i].click).collect();
            let s: Vec<f64> = rows.iter().map(|&i| preds.cvr[i]).collect();
            let l: Vec<bool> = rows.iter().map(|&i| data.records[i].conversion).collect();
            (auc(&s, &l)?, LabelSource::ClickSpace, rows.len())
        }
    };
    let ctcvr_labels: Vec<bool> = data.records.iter().map(|r| r.click && r.conversion).collect();
    let clicks: Vec<bool> = data.records.iter().map(|r| r.click).collect();
    Ok(Evaluation {
        cvr_auc,
        cvr_auc_labels: source,
        cvr_auc_rows: rows,
        ctcvr_auc: auc(&preds.ctcvr, &ctcvr_labels)?,
        ctr_auc: auc(&preds.ctr, &clicks).ok(),
    })
}

/// Pretraining (when enabled), finetuning and evaluation in one call.
pub fn fit(model: &mut EgeanModel, data: &TrainData, cfg: &TrainConfig) -> Result<MetricsReport, TrainError> {
    let pretrain = pretrain_exposure(model, data, cfg)?;
    finetune_and_evaluate(model, data, cfg, Some(pretrain))
}

/// Stage 2 plus evaluation for a model whose table is already pretrained
/// (or left at initialisation).
pub fn finetune_and_evaluate(
    model: &mut EgeanModel,
    data: &TrainData,
    cfg: &TrainConfig,
    pretrain: Option<PretrainReport>,
) -> Result<MetricsReport, TrainError> {
    let w = model.embedding_id();
    let before = model.store().get(w).checksum();
    let (epochs, clamp_events) = finetune_multitask(model, data, cfg)?;
    let after = model.store().get(w).checksum();
    let evaluation = evaluate(model, data)?;
    Ok(MetricsReport {
        seed: cfg.seed,
        config_hash: config_hash(&(model.config(), cfg)),
        estimator: cfg.estimator.name().to_string(),
        lambda: cfg.lambda.get(),
        evaluation,
        pretrain,
        epochs,
        clamp_events,
        trainable_parameters: model.trainable_names(),
        embedding_checksum_before: before,
        embedding_checksum_after: after,
    })
}
