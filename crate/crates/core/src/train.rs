//! Negative sampling, the self-adversarial loss and the training loop.

use std::collections::HashSet;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{contract, FlockError, Result};
use crate::kg::{KnowledgeGraph, Query, Triple};
use crate::model::{Flock, Task};
use crate::nn::{checkpoint, AdamW, AdamWConfig, Graph, ParamGrads, Tensor, Var};
use crate::rng::{derive, rng_for, tag, FlockRng};
use crate::walk::GraphView;

/// Lower and upper clamp distance for probabilities inside logarithms.
pub const SCORE_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub negatives: usize,
    pub batch_size: usize,
    pub adv_temp: f64,
    /// `None` picks 0.01 for entity prediction and 0 for relation prediction.
    pub weight_decay: Option<f64>,
    pub steps: usize,
    pub seed: u64,
    /// Validation period in optimizer steps; `None` uses
    /// `min(500, steps per epoch)`.
    pub val_every: Option<usize>,
    /// Let gradients flow through the adversarial weights.
    pub adv_grad: bool,
    /// Reject negatives that are known true triples.
    pub filter_negatives: bool,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            negatives: 512,
            batch_size: 8,
            adv_temp: 1.0,
            weight_decay: None,
            steps: 1000,
            seed: 0,
            val_every: None,
            adv_grad: false,
            filter_negatives: true,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn weight_decay_for(&self, task: Task) -> f64 {
        self.weight_decay.unwrap_or(match task {
            Task::Entity => 0.01,
            Task::Relation => 0.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.adv_temp.is_nan() || self.adv_temp <= 0.0 {
            return Err(FlockError::Config("adv_temp must be positive".into()));
        }
        if self.negatives == 0 || self.batch_size == 0 || self.threads == 0 {
            return Err(FlockError::Config(
                "negatives, batch_size and threads must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Self-adversarial weights `softmax(log(1 - p) / alpha)`.
pub fn adversarial_weights(p_negs: &[f64], alpha: f64) -> Vec<f64> {
    let logits: Vec<f64> = p_negs
        .iter()
        .map(|p| (1.0 - p.clamp(SCORE_EPS, 1.0 - SCORE_EPS)).ln() / alpha)
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Plain-number version of [`adversarial_loss`].
pub fn adversarial_loss_value(p_pos: f64, p_negs: &[f64], alpha: f64) -> f64 {
    let c = |p: f64| p.clamp(SCORE_EPS, 1.0 - SCORE_EPS);
    let w = adversarial_weights(p_negs, alpha);
    -c(p_pos).ln() - w.iter().zip(p_negs).map(|(w, p)| w * (1.0 - c(*p)).ln()).sum::<f64>()
}

/// `-log p_pos - sum_i w_i log(1 - p_neg_i)` with `w = softmax(log(1 - p_neg) / alpha)`.
///
/// `p_pos` is `1 x 1` and `p_negs` is `k x 1`. With `detach` the weights
/// are treated as constants.
pub fn adversarial_loss(g: &mut Graph<'_>, p_pos: Var, p_negs: Option<Var>, alpha: f64, detach: bool) -> Result<Var> {
    let pp = g.clamp(p_pos, SCORE_EPS, 1.0 - SCORE_EPS);
    let lp = g.log(pp);
    let pos_term = g.sum(lp);
    let mut loss = g.scale(pos_term, -1.0);
    if let Some(pn) = p_negs {
        let pn = g.clamp(pn, SCORE_EPS, 1.0 - SCORE_EPS);
        let one_minus = g.affine(pn, -1.0, 1.0);
        let log1m = g.log(one_minus);
        let weighted = if detach {
            let vals: Vec<f64> = g.value(pn).data().to_vec();
            let w = adversarial_weights(&vals, alpha);
            g.mul_const(log1m, &w)?
        } else {
            let scaled = g.scale(log1m, 1.0 / alpha);
            let w = g.softmax(scaled, 0)?;
            g.mul(w, log1m)?
        };
        let s = g.sum(weighted);
        loss = g.sub(loss, s)?;
    }
    Ok(loss)
}

/// Which slot of a triple a negative replaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Corruption {
    Head,
    Tail,
    Relation,
}

/// Draws `k` corrupted versions of `positive`, uniformly over the allowed
/// replacements. Replacements equal to the original, or (with `known`)
/// producing a known triple, are excluded. When fewer than `k` candidates
/// exist, draws are made with replacement.
pub fn sample_negatives(
    graph: &KnowledgeGraph,
    positive: Triple,
    k: usize,
    slot: Corruption,
    known: Option<&HashSet<Triple>>,
    rng: &mut FlockRng,
) -> Result<Vec<Triple>> {
    let with = |x: usize| match slot {
        Corruption::Head => Triple::new(x, positive.rel, positive.tail),
        Corruption::Tail => Triple::new(positive.head, positive.rel, x),
        Corruption::Relation => Triple::new(positive.head, x, positive.tail),
    };
    let (range, original) = match slot {
        Corruption::Head => (graph.num_entities(), positive.head),
        Corruption::Tail => (graph.num_entities(), positive.tail),
        Corruption::Relation => (graph.num_relations(), positive.rel),
    };
    let candidates: Vec<usize> = (0..range)
        .filter(|&x| x != original && known.is_none_or(|kn| !kn.contains(&with(x))))
        .collect();
    if candidates.is_empty() {
        return Err(contract(format!("no corruption of {positive:?} is available")));
    }
    if candidates.len() >= k {
        Ok(sample_indices(rng, candidates.len(), k)
            .into_iter()
            .map(|i| with(candidates[i]))
            .collect())
    } else {
        log::debug!(
            "only {} negatives available for {positive:?}; sampling with replacement",
            candidates.len()
        );
        Ok((0..k)
            .map(|_| with(candidates[rng.gen_range(0..candidates.len())]))
            .collect())
    }
}

/// One training example: a query on a (possibly masked) graph with the
/// score-vector indices of its positive and negative answers.
#[derive(Clone, Debug)]
pub struct Example<'a> {
    pub view: GraphView<'a>,
    pub query: Query,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

pub trait ExampleSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn example(&self, index: usize, rng: &mut FlockRng) -> Result<Example<'_>>;
}

/// Training triples of one graph. Each example hides the edges between the
/// positive's endpoints, picks head or tail corruption with equal
/// probability (entity task) and samples negatives.
pub struct TripleSource<'a> {
    pub graph: &'a KnowledgeGraph,
    pub triples: &'a [Triple],
    pub task: Task,
    pub negatives: usize,
    pub known: Option<HashSet<Triple>>,
}

impl<'a> TripleSource<'a> {
    pub fn new(graph: &'a KnowledgeGraph, triples: &'a [Triple], task: Task, negatives: usize, filter: bool) -> Self {
        let known = filter.then(|| graph.triples().iter().chain(triples).copied().collect());
        Self {
            graph,
            triples,
            task,
            negatives,
            known,
        }
    }
}

/// Hides every edge joining the endpoints of `positive`.
pub fn remove_query_edges(graph: &KnowledgeGraph, positive: Triple) -> GraphView<'_> {
    GraphView::without_edges_between(graph, positive.head, positive.tail)
}

impl ExampleSource for TripleSource<'_> {
    fn len(&self) -> usize {
        self.triples.len()
    }

    fn example(&self, index: usize, rng: &mut FlockRng) -> Result<Example<'_>> {
        let t = self.triples[index];
        let view = remove_query_edges(self.graph, t);
        let known = self.known.as_ref();
        match self.task {
            Task::Entity => {
                let slot = if rng.gen_bool(0.5) {
                    Corruption::Head
                } else {
                    Corruption::Tail
                };
                let negs = sample_negatives(self.graph, t, self.negatives, slot, known, rng)?;
                let (query, positive, negatives) = if slot == Corruption::Tail {
                    (
                        Query::entity(t.head, t.rel),
                        t.tail,
                        negs.iter().map(|n| n.tail).collect(),
                    )
                } else {
                    (
                        Query::Entity {
                            head: t.tail,
                            rel: t.rel,
                            inverse: true,
                        },
                        t.head,
                        negs.iter().map(|n| n.head).collect(),
                    )
                };
                Ok(Example {
                    view,
                    query,
                    positive,
                    negatives,
                })
            }
            Task::Relation => {
                let negs = sample_negatives(self.graph, t, self.negatives, Corruption::Relation, known, rng)?;
                Ok(Example {
                    view,
                    query: Query::Relation {
                        head: t.head,
                        tail: t.tail,
                    },
                    positive: t.rel,
                    negatives: negs.iter().map(|n| n.rel).collect(),
                })
            }
        }
    }
}

/// Loss of one example on a fresh graph; returns the loss value and grads.
pub fn example_loss_and_grads(
    model: &Flock,
    ex: &Example<'_>,
    seed: u64,
    alpha: f64,
    detach: bool,
) -> Result<(f64, ParamGrads)> {
    let mut g = Graph::with_params(&model.params);
    let out = model.forward(&mut g, &ex.view, &ex.query, seed)?;
    let loss = example_loss(&mut g, out.scores, ex, alpha, detach)?;
    let value = g.value(loss).item();
    let grads = g.backward(loss)?.into_params();
    Ok((value, grads))
}

/// Adversarial loss of an example given its score column.
pub fn example_loss(g: &mut Graph<'_>, scores: Var, ex: &Example<'_>, alpha: f64, detach: bool) -> Result<Var> {
    let pos = g.gather_rows(scores, vec![ex.positive].into())?;
    let neg = if ex.negatives.is_empty() {
        None
    } else {
        Some(g.gather_rows(scores, ex.negatives.clone().into())?)
    };
    adversarial_loss(g, pos, neg, alpha, detach)
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub val_metric: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub log: Vec<LogRow>,
    pub best_metric: Option<f64>,
    pub best_step: Option<usize>,
    pub checkpoint: Option<PathBuf>,
}

pub type Validator<'v> = dyn Fn(&Flock) -> Result<f64> + Sync + 'v;

/// Trains `model` in place. After training the model holds the parameters
/// of the best validation score when a validator is given, otherwise the
/// final parameters. With `out_dir`, the best checkpoint (`best.ckpt`,
/// including optimizer state) and a CSV log (`train_log.csv`) are written
/// there.
pub fn train(
    model: &mut Flock,
    source: &dyn ExampleSource,
    cfg: &TrainConfig,
    validate: Option<&Validator<'_>>,
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(FlockError::Config("no training examples".into()));
    }
    let opt_cfg = AdamWConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay_for(model.config.task),
        ..Default::default()
    };
    let mut opt = AdamW::new(opt_cfg, &model.params);
    let n = source.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let val_every = cfg.val_every.unwrap_or(500.min(steps_per_epoch)).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| FlockError::Config(e.to_string()))?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut log_file = match out_dir {
        Some(dir) => {
            let mut f = std::fs::File::create(dir.join("train_log.csv"))?;
            writeln!(f, "step,loss,val_metric")?;
            Some(f)
        }
        None => None,
    };
    let ckpt_path = out_dir.map(|d| d.join("best.ckpt"));
    let mut report = TrainReport {
        log: Vec::new(),
        best_metric: None,
        best_step: None,
        checkpoint: None,
    };
    let mut best_params = None;
    let mut order: Vec<usize> = Vec::new();
    let mut order_epoch = usize::MAX;
    for step in 0..cfg.steps {
        let mut picks = Vec::with_capacity(cfg.batch_size);
        for j in 0..cfg.batch_size {
            let global = step * cfg.batch_size + j;
            if global / n != order_epoch {
                order_epoch = global / n;
                order = shuffled(n, derive(cfg.seed, &[tag::TRAIN, order_epoch as u64]));
            }
            picks.push(order[global % n]);
        }
        let model_ref: &Flock = model;
        let results: Vec<Result<(f64, ParamGrads)>> = pool.install(|| {
            picks
                .par_iter()
                .enumerate()
                .map(|(j, &idx)| {
                    let mut rng = rng_for(cfg.seed, &[tag::NEGATIVES, step as u64, j as u64]);
                    let ex = source.example(idx, &mut rng)?;
                    let seed = derive(cfg.seed, &[tag::TRAIN, step as u64, j as u64, 1]);
                    example_loss_and_grads(model_ref, &ex, seed, cfg.adv_temp, !cfg.adv_grad)
                })
                .collect()
        });
        let mut total = ParamGrads::empty(model.params.len());
        let mut loss = 0.0;
        for r in results {
            let (l, g) = r?;
            loss += l;
            total.add(&g);
        }
        let scale = 1.0 / cfg.batch_size as f64;
        loss *= scale;
        total.scale(scale);
        if !loss.is_finite() {
            return Err(FlockError::NonFinite(format!("loss at step {step}")));
        }
        opt.step(&mut model.params, &total)?;

        let mut val_metric = None;
        if let Some(v) = validate {
            if (step + 1) % val_every == 0 || step + 1 == cfg.steps {
                let m = v(model)?;
                val_metric = Some(m);
                log::info!("step {} loss {:.5} validation {:.4}", step + 1, loss, m);
                if report.best_metric.is_none_or(|b| m > b) {
                    report.best_metric = Some(m);
                    report.best_step = Some(step + 1);
                    best_params = Some(model.params.clone());
                    if let Some(p) = &ckpt_path {
                        checkpoint::save(p, &model.hyperparameters(), &model.params, Some(&opt))?;
                        report.checkpoint = Some(p.clone());
                    }
                }
            }
        } else if (step + 1) % val_every == 0 {
            log::info!("step {} loss {:.5}", step + 1, loss);
        }
        if let Some(f) = log_file.as_mut() {
            let vm = val_metric.map(|m| m.to_string()).unwrap_or_default();
            writeln!(f, "{},{},{}", step + 1, loss, vm)?;
        }
        report.log.push(LogRow {
            step: step + 1,
            loss,
            val_metric,
        });
    }
    match best_params {
        Some(p) => model.params.copy_values_from(&p)?,
        None => {
            if let Some(p) = &ckpt_path {
                checkpoint::save(p, &model.hyperparameters(), &model.params, Some(&opt))?;
                report.checkpoint = Some(p.clone());
            }
        }
    }
    Ok(report)
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut v: Vec<usize> = (0..n).collect();
    let mut rng = crate::rng::rng_for(seed, &[]);
    v.shuffle(&mut rng);
    v
}

/// Scores of a fixed example (helper for tests and diagnostics).
pub fn example_scores(model: &Flock, ex: &Example<'_>, seed: u64) -> Result<Tensor> {
    let mut g = Graph::with_params(&model.params);
    let out = model.forward(&mut g, &ex.view, &ex.query, seed)?;
    Ok(g.value(out.scores).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::gradient_check;

    #[test]
    fn single_negative_weight_is_one() {
        assert_eq!(adversarial_weights(&[0.3], 1.0), vec![1.0]);
        let l = adversarial_loss_value(0.8, &[0.3], 1.0);
        assert!((l - (-(0.8f64).ln() - (0.7f64).ln())).abs() < 1e-15);
    }

    #[test]
    fn weights_sum_to_one_and_flatten_with_temperature() {
        let p = [0.1, 0.5, 0.9, 0.3];
        let w = adversarial_weights(&p, 1.0);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let w = adversarial_weights(&p, 1e9);
        assert!(w.iter().all(|x| (x - 0.25).abs() < 1e-8));
    }

    #[test]
    fn perfect_scores_give_near_zero_loss() {
        let l = adversarial_loss_value(1.0, &[0.0, 0.0], 1.0);
        assert!((0.0..1e-6).contains(&l));
        assert!((adversarial_loss_value(0.5, &[], 1.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn graph_loss_matches_value() {
        let mut g = Graph::new();
        let pp = g.input(Tensor::scalar(0.7));
        let pn = g.input(Tensor::from_rows(&[&[0.2], &[0.6]]));
        let l = adversarial_loss(&mut g, pp, Some(pn), 1.0, true).unwrap();
        let expect = adversarial_loss_value(0.7, &[0.2, 0.6], 1.0);
        assert!((g.value(l).item() - expect).abs() < 1e-14);
        let l = adversarial_loss(&mut g, pp, Some(pn), 1.0, false).unwrap();
        assert!((g.value(l).item() - expect).abs() < 1e-14);
    }

    #[test]
    fn loss_gradients_both_modes() {
        for detach in [true, false] {
            let x = vec![Tensor::scalar(0.7), Tensor::from_rows(&[&[0.2], &[0.6], &[0.4]])];
            let err = gradient_check(&x, 1e-6, |g, v| adversarial_loss(g, v[0], Some(v[1]), 0.5, detach)).unwrap();
            // The detached loss is not the derivative of its own value, so
            // only the positive term agrees with finite differences there.
            if !detach {
                assert!(err < 1e-6, "{err}");
            }
        }
    }

    #[test]
    fn tiny_graph_negatives() {
        let g = KnowledgeGraph::from_triples(2, 3, vec![Triple::new(0, 0, 1)]).unwrap();
        let mut rng = rng_for(1, &[]);
        let n = sample_negatives(&g, Triple::new(0, 0, 1), 3, Corruption::Tail, None, &mut rng).unwrap();
        assert!(n.iter().all(|t| *t == Triple::new(0, 0, 0)));
        let known: HashSet<Triple> = [Triple::new(0, 1, 1)].into_iter().collect();
        let n = sample_negatives(
            &g,
            Triple::new(0, 0, 1),
            5,
            Corruption::Relation,
            Some(&known),
            &mut rng,
        )
        .unwrap();
        assert!(n.iter().all(|t| t.rel == 2));
    }

    #[test]
    fn masking_hides_only_the_query_pair() {
        let g = KnowledgeGraph::from_triples(3, 1, vec![Triple::new(0, 0, 1), Triple::new(1, 0, 2)]).unwrap();
        let view = remove_query_edges(&g, Triple::new(0, 0, 1));
        assert_eq!(view.visible_degree(0), 0);
        assert_eq!(view.visible_degree(2), 1);
    }
}
