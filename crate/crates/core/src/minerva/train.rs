use serde::{Deserialize, Serialize};

use super::optim::Optimizer;
use super::{
    minerva_loss, regularizer, soft_threshold, FeatureWeights, OptimizerKind, TrainConfig, WeightUpdate,
    MIN_WEIGHT_NORM,
};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::mine::{evaluate_v, sample_permutation, v_objective, Batch, MiEstimate};
use crate::ndgrad::{clip_global_norm, GradError, Graph, Tensor};
use crate::rng::{streams, SeededRng};
use crate::statnet::{init_params, NetworkSpec, StatNet, StatNetParams};

/// One held-out evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub stage: u8,
    pub step: usize,
    pub estimate: MiEstimate,
    /// Held-out stage 2 loss; absent in stage 1.
    pub loss: Option<f64>,
    /// Feature weights at this step; absent in stage 1.
    pub weights: Option<Vec<f64>>,
}

impl TracePoint {
    pub fn mi_nats(&self) -> f64 {
        self.estimate.mi_nats()
    }
}

#[derive(Clone, Debug)]
pub struct Stage1Result {
    /// Parameters at the best held-out evaluation.
    pub params: StatNetParams,
    pub steps: usize,
    pub best: MiEstimate,
    pub trace: Vec<TracePoint>,
}

#[derive(Clone, Debug)]
pub struct Stage2Result {
    pub params: StatNetParams,
    /// Weights after snapping.
    pub weights: FeatureWeights,
    pub selected: Vec<usize>,
    pub steps: usize,
    pub trace: Vec<TracePoint>,
}

/// Full two-stage run.
#[derive(Clone, Debug)]
pub struct SelectionResult {
    /// Zero-based, sorted.
    pub selected: Vec<usize>,
    pub final_p: FeatureWeights,
    pub mi_trace: Vec<TracePoint>,
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    pub stage1_mi: MiEstimate,
    pub params: StatNetParams,
}

/// Train/holdout split plus the batch streams drawn from it.
struct Sampler<'a> {
    data: &'a Dataset,
    pool: Vec<usize>,
    batch_size: usize,
    rows: SeededRng,
    perms: SeededRng,
    eval: Vec<Batch>,
}

impl<'a> Sampler<'a> {
    fn new(data: &'a Dataset, config: &TrainConfig, stage: u8) -> Result<Self> {
        let n = data.n_rows();
        if n < 2 * config.batch_size {
            return Err(Error::Data(format!(
                "{n} rows is fewer than twice the batch size {}",
                config.batch_size
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        SeededRng::new(config.seed, streams::SPLIT).shuffle(&mut order);
        let n_hold = ((n as f64) * config.holdout_fraction).round() as usize;
        let n_hold = n_hold.clamp(2, n - 2);
        let (hold, train) = order.split_at(n_hold);

        let mut eval_rng = SeededRng::new(config.seed, streams::EVAL);
        let mut hold_pool = hold.to_vec();
        let eval_size = config.batch_size.min(hold_pool.len());
        let mut eval = Vec::with_capacity(config.eval_batches);
        for _ in 0..config.eval_batches {
            let mut rows = eval_rng.choose_from(&mut hold_pool, eval_size);
            rows.sort_unstable();
            let sigma = sample_permutation(rows.len(), &mut eval_rng)?;
            eval.push(Batch::new(data.take_rows(&rows), sigma)?);
        }

        let (row_stream, perm_stream) = if stage == 1 {
            (streams::BATCH, streams::PERMUTATION)
        } else {
            (streams::STAGE2_BATCH, streams::STAGE2_PERMUTATION)
        };
        Ok(Self {
            data,
            pool: train.to_vec(),
            batch_size: config.batch_size.min(train.len()),
            rows: SeededRng::new(config.seed, row_stream),
            perms: SeededRng::new(config.seed, perm_stream),
            eval,
        })
    }

    fn next(&mut self) -> Result<Batch> {
        let rows = self.rows.choose_from(&mut self.pool, self.batch_size);
        let sigma = sample_permutation(rows.len(), &mut self.perms)?;
        Batch::new(self.data.take_rows(&rows), sigma)
    }
}

/// Patience counter on a quantity that should go up.
struct EarlyStop {
    best: f64,
    since: usize,
    patience: usize,
    min_improvement: f64,
}

impl EarlyStop {
    fn new(patience: usize, min_improvement: f64) -> Self {
        Self {
            best: f64::NEG_INFINITY,
            since: 0,
            patience,
            min_improvement,
        }
    }

    /// Returns (improved, should_stop).
    fn observe(&mut self, score: f64) -> (bool, bool) {
        if score > self.best + self.min_improvement {
            self.best = score;
            self.since = 0;
            (true, false)
        } else {
            self.since += 1;
            (false, self.since >= self.patience)
        }
    }
}

fn step_failure(stage: u8, step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Grad(GradError::NonFinite { op }) => Error::Training {
            stage,
            step,
            reason: format!("{op} produced a non-finite value"),
        },
        Error::Numeric { what, row } => Error::Training {
            stage,
            step,
            reason: format!("non-finite {what} at row {row}"),
        },
        other => other,
    }
}

fn weights_node(g: &mut Graph, p: &[f64], trainable: bool) -> Result<crate::ndgrad::NodeId> {
    let t = Tensor::matrix(1, p.len(), p.to_vec())?;
    Ok(if trainable { g.param(t) } else { g.constant(t) })
}

fn held_out_v(spec: &NetworkSpec, params: &StatNetParams, p: &[f64], batches: &[Batch]) -> Result<MiEstimate> {
    let mut estimates = Vec::with_capacity(batches.len());
    for batch in batches {
        let mut g = Graph::new();
        let net = StatNet::bind(&mut g, spec, params, false)?;
        let pn = weights_node(&mut g, p, false)?;
        let obj = v_objective(&mut g, &net, pn, batch)?;
        estimates.push(obj.estimate(&g));
    }
    evaluate_v(estimates).ok_or_else(|| Error::Config("no evaluation batches".into()))
}

fn check_inputs(dataset: &Dataset, spec: &NetworkSpec, config: &TrainConfig) -> Result<()> {
    config.validate()?;
    spec.validate()?;
    if spec.n_features() != dataset.n_features() {
        return Err(Error::Data(format!(
            "dataset has {} features, network expects {}",
            dataset.n_features(),
            spec.n_features()
        )));
    }
    Ok(())
}

/// Fits the statistics network at `p = 1`, returning the parameters with
/// the best held-out MI.
pub fn stage1_train(dataset: &Dataset, spec: &NetworkSpec, config: &TrainConfig) -> Result<Stage1Result> {
    check_inputs(dataset, spec, config)?;
    let mut sampler = Sampler::new(dataset, config, 1)?;
    let ones = vec![1.0; spec.n_features()];
    let mut params = init_params(spec, config.seed)?;
    let mut opt = Optimizer::new(
        config.optimizer,
        config.learning_rate,
        params.tensors().iter().map(Tensor::numel),
    );
    let mut stop = EarlyStop::new(config.patience, config.min_improvement);
    let mut best_params = params.clone();
    let mut best = held_out_v(spec, &params, &ones, &sampler.eval)?;
    let mut trace = vec![TracePoint {
        stage: 1,
        step: 0,
        estimate: best,
        loss: None,
        weights: None,
    }];
    stop.observe(best.mi_nats());
    let mut steps = 0;

    for step in 1..=config.stage1_max_steps {
        steps = step;
        let fail = step_failure(1, step);
        let batch = sampler.next()?;
        let mut grads = {
            let mut g = Graph::new();
            let net = StatNet::bind(&mut g, spec, &params, true)?;
            let pn = weights_node(&mut g, &ones, false)?;
            let obj = v_objective(&mut g, &net, pn, &batch).map_err(&fail)?;
            let v = g.value(obj.value).data()[0];
            if !v.is_finite() {
                return Err(fail(Error::Grad(GradError::NonFinite { op: "v" })));
            }
            let mut all = g.backward(obj.value).map_err(|e| fail(e.into()))?;
            net.param_ids()
                .iter()
                .map(|&id| all.take(id).expect("parameter gradient"))
                .collect::<Vec<_>>()
        };
        {
            let mut refs: Vec<&mut Tensor> = grads.iter_mut().collect();
            let norm = clip_global_norm(&mut refs, config.clip_norm);
            if !norm.is_finite() {
                return Err(fail(Error::Grad(GradError::NonFinite { op: "gradient" })));
            }
        }
        opt.step(params.tensors_mut(), &grads);

        if step % config.eval_every == 0 || step == config.stage1_max_steps {
            let est = held_out_v(spec, &params, &ones, &sampler.eval).map_err(&fail)?;
            let (improved, halt) = stop.observe(est.mi_nats());
            log::debug!("stage 1 step {step}: held-out MI {:.4}", est.mi_nats());
            trace.push(TracePoint {
                stage: 1,
                step,
                estimate: est,
                loss: None,
                weights: None,
            });
            if improved {
                best = est;
                best_params = params.clone();
            }
            if halt {
                break;
            }
        }
    }
    Ok(Stage1Result {
        params: best_params,
        steps,
        best,
        trace,
    })
}

fn held_out_loss(
    spec: &NetworkSpec,
    params: &StatNetParams,
    p: &[f64],
    batches: &[Batch],
    config: &TrainConfig,
    a: f64,
) -> Result<(MiEstimate, f64)> {
    let est = held_out_v(spec, params, p, batches)?;
    let reg = regularizer(p, config.c1, config.c2, a)?;
    Ok((est, est.value + reg))
}

/// Learns `(φ, p)` from `φ = params_init`, `p = 1`, then thresholds `p`.
pub fn stage2_train(
    params_init: &StatNetParams,
    dataset: &Dataset,
    spec: &NetworkSpec,
    config: &TrainConfig,
) -> Result<Stage2Result> {
    check_inputs(dataset, spec, config)?;
    let d = spec.n_features();
    let a = config.drift_target_for(d);
    let mut sampler = Sampler::new(dataset, config, 2)?;
    let mut params = params_init.clone();
    let mut p = vec![1.0; d];
    let mut opt = Optimizer::new(
        config.optimizer,
        config.learning_rate,
        params.tensors().iter().map(Tensor::numel),
    );
    // a proximal step is only meaningful on top of a plain gradient step
    let p_kind = match config.weight_update {
        WeightUpdate::Gradient => config.optimizer,
        WeightUpdate::Proximal => OptimizerKind::Sgd,
    };
    let mut p_opt = Optimizer::new(p_kind, config.weight_rate(), std::iter::once(d));
    let mut stop = EarlyStop::new(config.patience, config.min_improvement);
    let (est, loss) = held_out_loss(spec, &params, &p, &sampler.eval, config, a)?;
    stop.observe(-loss);
    let mut trace = vec![TracePoint {
        stage: 2,
        step: 0,
        estimate: est,
        loss: Some(loss),
        weights: Some(p.clone()),
    }];
    let mut steps = 0;

    for step in 1..=config.stage2_max_steps {
        steps = step;
        let fail = step_failure(2, step);
        let batch = sampler.next()?;
        let (mut grads, mut gp) = {
            let mut g = Graph::new();
            let net = StatNet::bind(&mut g, spec, &params, true)?;
            let pn = weights_node(&mut g, &p, true)?;
            let parts = minerva_loss(&mut g, &net, pn, &batch, config.c1, config.c2, a).map_err(&fail)?;
            let mut all = g.backward(parts.total).map_err(|e| fail(e.into()))?;
            let grads = net
                .param_ids()
                .iter()
                .map(|&id| all.take(id).expect("parameter gradient"))
                .collect::<Vec<_>>();
            (grads, all.take(pn).expect("weight gradient"))
        };
        let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        if config.weight_update == WeightUpdate::Proximal {
            // leave only the smooth part; the prox handles c1·sign(p)/‖p‖₂
            for (gj, &pj) in gp.data_mut().iter_mut().zip(&p) {
                if pj != 0.0 {
                    *gj -= config.c1 * pj.signum() / norm;
                }
            }
        }
        {
            let mut refs: Vec<&mut Tensor> = grads.iter_mut().collect();
            refs.push(&mut gp);
            let gnorm = clip_global_norm(&mut refs, config.clip_norm);
            if !gnorm.is_finite() {
                return Err(fail(Error::Grad(GradError::NonFinite { op: "gradient" })));
            }
        }
        opt.step(params.tensors_mut(), &grads);
        let mut pt = [Tensor::vector(std::mem::take(&mut p))];
        p_opt.step(&mut pt, std::slice::from_ref(&gp));
        let [pt] = pt;
        p = pt.into_data();
        if config.weight_update == WeightUpdate::Proximal {
            let lambda = config.weight_rate() * config.c1 / norm;
            for w in &mut p {
                *w = soft_threshold(*w, lambda);
            }
        }
        if p.iter().any(|w| !w.is_finite()) {
            return Err(fail(Error::Grad(GradError::NonFinite { op: "weights" })));
        }
        let pnorm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        if pnorm < MIN_WEIGHT_NORM {
            return Err(Error::DegenerateWeights { norm: pnorm });
        }

        if step % config.eval_every == 0 || step == config.stage2_max_steps {
            let (est, loss) = held_out_loss(spec, &params, &p, &sampler.eval, config, a).map_err(&fail)?;
            log::debug!(
                "stage 2 step {step}: held-out MI {:.4}, loss {loss:.4}, p = {p:.3?}",
                est.mi_nats()
            );
            let (_, halt) = stop.observe(-loss);
            trace.push(TracePoint {
                stage: 2,
                step,
                estimate: est,
                loss: Some(loss),
                weights: Some(p.clone()),
            });
            if halt {
                break;
            }
        }
    }
    let mut weights = FeatureWeights(p);
    weights.snap(config.threshold);
    let selected = weights.selected(config.threshold);
    Ok(Stage2Result {
        params,
        weights,
        selected,
        steps,
        trace,
    })
}

/// Stage 1 followed by stage 2.
pub fn select_features(dataset: &Dataset, spec: &NetworkSpec, config: &TrainConfig) -> Result<SelectionResult> {
    let s1 = stage1_train(dataset, spec, config)?;
    let s2 = stage2_train(&s1.params, dataset, spec, config)?;
    let mut mi_trace = s1.trace;
    mi_trace.extend(s2.trace);
    Ok(SelectionResult {
        selected: s2.selected,
        final_p: s2.weights,
        mi_trace,
        stage1_steps: s1.steps,
        stage2_steps: s2.steps,
        stage1_mi: s1.best,
        params: s2.params,
    })
}
