//! Training objectives and their weighted composite.
//!
//! The single-call helpers (`bce_with_logits`, `contrastive_cosine`, ...)
//! run the same tape ops the trainer uses, on a throwaway tape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::tokenizer::{TokenSeq, PAD};
use crate::model::{BatchInput, ContrastiveVariant, Mode, ModelState};
use crate::nn::{NodeId, Tape, Tensor2};
use crate::scalar::{sigmoid, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub cls: f64,
    pub con: f64,
    pub conf: f64,
    pub recon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cls: 0.4,
            con: 0.2,
            conf: 0.2,
            recon: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("cls", self.cls),
            ("con", self.con),
            ("conf", self.conf),
            ("recon", self.recon),
        ] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Config(format!(
                    "loss weight {name} must be finite and non-negative, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-term values of one objective evaluation. In regression mode `l_mse`
/// carries the task loss and `l_bce`, `l_con` are zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_bce: f64,
    pub l_con: f64,
    pub l_conf: f64,
    pub l_recon: f64,
    pub l_mse: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    /// Weighted combination of already-computed terms.
    pub fn combine(mut self, weights: &LossWeights, mode: Mode) -> Result<Self> {
        weights.validate()?;
        self.l_total = match mode {
            Mode::Classification => {
                weights.cls * self.l_bce
                    + weights.con * self.l_con
                    + weights.conf * self.l_conf
                    + weights.recon * self.l_recon
            }
            Mode::Regression => weights.cls * self.l_mse + weights.conf * self.l_conf + weights.recon * self.l_recon,
        };
        Ok(self)
    }

    /// Running mean helper: `self += other * w`.
    pub fn accumulate(&mut self, other: &LossBreakdown, w: f64) {
        self.l_bce += other.l_bce * w;
        self.l_con += other.l_con * w;
        self.l_conf += other.l_conf * w;
        self.l_recon += other.l_recon * w;
        self.l_mse += other.l_mse * w;
        self.l_total += other.l_total * w;
    }
}

pub fn bce_with_logits<T: Scalar>(logit: T, label: T) -> T {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor2::scalar(logit));
    let l = tape.bce_with_logits(z, &[label]).expect("1x1 input");
    tape.value(l).item()
}

/// Batch mean over columns of `e_d`, `e_p`.
pub fn contrastive_cosine<T: Scalar>(e_d: &Tensor2<T>, e_p: &Tensor2<T>, labels: &[T], margin: T) -> Result<T> {
    if !(margin > T::zero()) {
        return Err(Error::Config("contrastive margin must be positive".into()));
    }
    let mut tape = Tape::new();
    let a = tape.constant(e_d.clone());
    let b = tape.constant(e_p.clone());
    let l = tape.cosine_margin(a, b, labels, margin)?;
    Ok(tape.value(l).item())
}

pub fn contrastive_triplet<T: Scalar>(
    f_d: &Tensor2<T>,
    f_pos: &Tensor2<T>,
    f_neg: &Tensor2<T>,
    margin: T,
) -> Result<T> {
    if !(margin > T::zero()) {
        return Err(Error::Config("triplet margin must be positive".into()));
    }
    let mut tape = Tape::new();
    let a = tape.constant(f_d.clone());
    let p = tape.constant(f_pos.clone());
    let n = tape.constant(f_neg.clone());
    let l = tape.triplet(a, p, n, margin)?;
    Ok(tape.value(l).item())
}

/// Target for the confidence head: the interaction head's absolute error.
pub fn confidence_target<T: Scalar>(label: T, prob: T) -> T {
    (label - prob).abs()
}

/// Batch mean of `(c − |y − p|)²`.
pub fn confidence_loss<T: Scalar>(c: &[T], labels: &[T], probs: &[T]) -> Result<T> {
    if c.len() != labels.len() || c.len() != probs.len() {
        return Err(Error::shape(
            "confidence_loss",
            (c.len(), 1),
            (labels.len(), probs.len()),
        ));
    }
    let targets: Vec<T> = labels
        .iter()
        .zip(probs)
        .map(|(&y, &p)| confidence_target(y, p))
        .collect();
    let mut tape = Tape::new();
    let cn = tape.constant(Tensor2::from_vec(1, c.len(), c.to_vec())?);
    let l = tape.squared_error(cn, &targets)?;
    Ok(tape.value(l).item())
}

/// Softmax cross-entropy of `max_len x vocab` logits over non-PAD positions.
pub fn reconstruction_loss<T: Scalar>(logits: &Tensor2<T>, tokens: &TokenSeq) -> Result<T> {
    if logits.rows() != tokens.ids.len() {
        return Err(Error::shape(
            "reconstruction_loss",
            logits.shape(),
            (tokens.ids.len(), logits.cols()),
        ));
    }
    let mut tape = Tape::new();
    let flat = tape.constant(Tensor2::from_vec(logits.len(), 1, logits.as_slice().to_vec())?);
    let l = tape.token_xent(flat, std::slice::from_ref(&tokens.ids), PAD, logits.cols())?;
    Ok(tape.value(l).item())
}

pub fn mse_loss<T: Scalar>(pred: &[T], target: &[T]) -> Result<T> {
    if pred.len() != target.len() {
        return Err(Error::shape("mse_loss", (pred.len(), 1), (target.len(), 1)));
    }
    let mut tape = Tape::new();
    let p = tape.constant(Tensor2::from_vec(1, pred.len(), pred.to_vec())?);
    let l = tape.squared_error(p, target)?;
    Ok(tape.value(l).item())
}

/// Everything one optimisation step needs besides the parameters.
#[derive(Debug, Clone)]
pub struct TrainBatch<T> {
    pub input: BatchInput<T>,
    /// Binary labels (classification) or affinities (regression).
    pub targets: Vec<T>,
    /// Token sequences for the reconstruction term; the term is skipped when absent.
    pub tokens: Option<Vec<Vec<usize>>>,
    /// Triplet variant: for each column, the column whose protein serves as
    /// the negative. Defaults to the next column.
    pub negatives: Option<Vec<usize>>,
}

/// Values the confidence term treats as constants: its input
/// `[e_d ‖ e_p ‖ ŷ]` and its target error.
#[derive(Debug, Clone, PartialEq)]
pub struct Detached<T> {
    pub conf_input: Tensor2<T>,
    pub conf_targets: Vec<T>,
}

/// Result of recording the composite objective on a tape.
#[derive(Debug, Clone)]
pub struct Objective<T> {
    pub total: NodeId,
    pub breakdown: LossBreakdown,
    pub forward: crate::model::ForwardNodes,
    pub detached: Detached<T>,
}

/// Records forward pass and weighted composite loss of a batch.
pub fn composite_objective<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    state: &'a ModelState<T>,
    batch: &TrainBatch<T>,
) -> Result<Objective<T>> {
    composite_objective_with(tape, state, batch, None)
}

/// As [`composite_objective`], optionally substituting the detached
/// confidence input and target. Evaluating with the values returned from a
/// base point gives the surrogate whose exact gradient the tape computes,
/// which is what a finite-difference check must probe.
pub fn composite_objective_with<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    state: &'a ModelState<T>,
    batch: &TrainBatch<T>,
    frozen: Option<&Detached<T>>,
) -> Result<Objective<T>> {
    let cfg = &state.config;
    let w = cfg.weights;
    w.validate()?;
    let b = batch.input.len();
    if batch.targets.len() != b {
        return Err(Error::shape("targets", (1, b), (1, batch.targets.len())));
    }
    let with_recon = batch.tokens.is_some() && w.recon > 0.0;
    let fwd = state.forward(tape, &batch.input, with_recon)?;
    let mut terms: Vec<(NodeId, T)> = Vec::new();
    let mut parts = LossBreakdown::default();

    let preds: Vec<T> = tape.value(fwd.logits).as_slice().to_vec();
    let conf_targets: Vec<T> = match cfg.mode {
        Mode::Classification => {
            let bce = tape.bce_with_logits(fwd.logits, &batch.targets)?;
            parts.l_bce = tape.value(bce).item().as_f64();
            terms.push((bce, T::lit(w.cls)));

            let con = match cfg.contrastive {
                ContrastiveVariant::CosineMargin => {
                    Some(tape.cosine_margin(fwd.e_d, fwd.e_p, &batch.targets, T::lit(cfg.margin))?)
                }
                ContrastiveVariant::TripletL2 => triplet_term(tape, &fwd, batch, T::lit(cfg.triplet_margin))?,
            };
            if let Some(con) = con {
                parts.l_con = tape.value(con).item().as_f64();
                terms.push((con, T::lit(w.con)));
            }
            preds
                .iter()
                .zip(&batch.targets)
                .map(|(&z, &y)| confidence_target(y, sigmoid(z)))
                .collect()
        }
        Mode::Regression => {
            let mse = tape.squared_error(fwd.logits, &batch.targets)?;
            parts.l_mse = tape.value(mse).item().as_f64();
            terms.push((mse, T::lit(w.cls)));
            let scale = T::lit(cfg.regression_error_scale);
            preds
                .iter()
                .zip(&batch.targets)
                .map(|(&p, &t)| ((t - p).abs() / scale).min(T::one()))
                .collect()
        }
    };

    let detached = match frozen {
        Some(d) => d.clone(),
        None => Detached {
            conf_input: Tensor2::vstack(&[tape.value(fwd.e_d), tape.value(fwd.e_p), tape.value(fwd.logits)])?,
            conf_targets,
        },
    };
    let conf_node = match frozen {
        Some(d) => {
            let x = tape.constant(d.conf_input.clone());
            state.confidence_head_node(tape, x)?
        }
        None => fwd.conf,
    };
    let conf = tape.squared_error(conf_node, &detached.conf_targets)?;
    parts.l_conf = tape.value(conf).item().as_f64();
    terms.push((conf, T::lit(w.conf)));

    if let (Some(recon), Some(tokens)) = (fwd.recon, batch.tokens.as_ref()) {
        let l = tape.token_xent(recon, tokens, PAD, state.vocab().len())?;
        parts.l_recon = tape.value(l).item().as_f64();
        terms.push((l, T::lit(w.recon)));
    }

    let total = tape.weighted_sum(&terms)?;
    let mut breakdown = parts.combine(&w, cfg.mode)?;
    // keep the value the gradient is taken of
    breakdown.l_total = tape.value(total).item().as_f64();
    Ok(Objective {
        total,
        breakdown,
        forward: fwd,
        detached,
    })
}

fn triplet_term<T: Scalar>(
    tape: &mut Tape<'_, T>,
    fwd: &crate::model::ForwardNodes,
    batch: &TrainBatch<T>,
    margin: T,
) -> Result<Option<NodeId>> {
    let b = batch.targets.len();
    let positives: Vec<usize> = (0..b).filter(|&i| batch.targets[i] > T::lit(0.5)).collect();
    if positives.is_empty() || b < 2 {
        return Ok(None);
    }
    let negatives: Vec<usize> = match &batch.negatives {
        Some(n) if n.len() == b => positives.iter().map(|&i| n[i]).collect(),
        Some(n) => return Err(Error::shape("triplet negatives", (b, 1), (n.len(), 1))),
        None => positives.iter().map(|&i| (i + 1) % b).collect(),
    };
    let anchor = tape.select_columns(fwd.e_d, &positives)?;
    let pos = tape.select_columns(fwd.e_p, &positives)?;
    let neg = tape.select_columns(fwd.e_p, &negatives)?;
    Ok(Some(tape.triplet(anchor, pos, neg, margin)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tokenizer::{tokenize, Vocab};
    use proptest::prelude::*;

    fn col(v: &[f64]) -> Tensor2<f64> {
        Tensor2::column(v)
    }

    #[test]
    fn bce_closed_forms() {
        assert!((bce_with_logits(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bce_with_logits(3f64.ln(), 0.0) - 1.386_294_361_119_890_6).abs() < 1e-12);
        assert!(bce_with_logits(50.0, 1.0) < 1e-20);
        assert!(bce_with_logits(-50.0, 0.0) < 1e-20);
        assert!(bce_with_logits(1e4f64, 0.0).is_finite());
    }

    #[test]
    fn cosine_closed_forms() {
        let v = col(&[1.0, 2.0]);
        assert!(contrastive_cosine(&v, &v, &[1.0], 1.0).unwrap() < 1e-24);
        assert!((contrastive_cosine(&v, &v, &[0.0], 1.0).unwrap() - 1.0f64).abs() < 1e-12);
        let a = col(&[1.0, 0.0]);
        let b = col(&[0.0, 3.0]);
        assert_eq!(contrastive_cosine(&a, &b, &[0.0], 1.0).unwrap(), 0.0);
        assert!(contrastive_cosine(&col(&[0.0, 0.0]), &b, &[1.0], 1.0).is_err());
    }

    #[test]
    fn triplet_closed_forms() {
        let d = col(&[0.0, 0.0]);
        assert_eq!(contrastive_triplet(&d, &d, &col(&[2.0, 0.0]), 1.0).unwrap(), 0.0);
        let p = col(&[1.0, 0.0]);
        let n = col(&[0.0, 1.0]);
        assert!((contrastive_triplet(&d, &p, &n, 0.7).unwrap() - 0.7f64).abs() < 1e-12);
        assert_eq!(contrastive_triplet(&d, &p, &col(&[0.0, 3.0]), 1.0).unwrap(), 0.0);
    }

    #[test]
    fn confidence_closed_forms() {
        assert!(confidence_loss(&[0.2f64], &[1.0], &[0.8]).unwrap() < 1e-20);
        assert!((confidence_loss(&[0.5], &[1.0], &[1.0]).unwrap() - 0.25f64).abs() < 1e-12);
        assert!((confidence_loss(&[0.3], &[1.0], &[0.8]).unwrap() - 0.01f64).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_closed_forms() {
        let vocab = Vocab::new("CNOSPFIcnos()=#1").unwrap();
        assert_eq!(vocab.len(), 20);
        let toks = tokenize(&vocab, "CCO", 8).unwrap();
        let uniform = Tensor2::<f64>::zeros(8, 20);
        assert!((reconstruction_loss(&uniform, &toks).unwrap() - 20f64.ln()).abs() < 1e-12);

        let mut peaked = Tensor2::zeros(8, 20);
        for (t, &id) in toks.ids.iter().enumerate() {
            peaked.set(t, id, 20.0);
        }
        assert!(reconstruction_loss(&peaked, &toks).unwrap() < 1e-7);

        // PAD suffix does not change the loss of the unpadded prefix
        let short = tokenize(&vocab, "CCO", 5).unwrap();
        let mut logits = Tensor2::zeros(8, 20);
        for (i, v) in logits.as_mut_slice().iter_mut().enumerate() {
            *v = ((i * 7919) % 13) as f64 * 0.1;
        }
        let prefix = logits.row_block(0, 5);
        let a = reconstruction_loss(&logits, &toks).unwrap();
        let b = reconstruction_loss(&prefix, &short).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn mse_closed_forms() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(mse_loss(&[2.0], &[5.0]).unwrap(), 9.0);
    }

    #[test]
    fn composite_weights() {
        let parts = LossBreakdown {
            l_bce: 1.0,
            l_con: 0.5,
            l_conf: 0.5,
            l_recon: 0.5,
            ..Default::default()
        };
        let t = parts.combine(&LossWeights::default(), Mode::Classification).unwrap();
        assert!((t.l_total - 0.7).abs() < 1e-12);
        let zero = LossWeights {
            cls: 0.0,
            con: 0.0,
            conf: 0.0,
            recon: 0.0,
        };
        assert_eq!(parts.combine(&zero, Mode::Classification).unwrap().l_total, 0.0);
        let neg = LossWeights {
            cls: -0.1,
            ..Default::default()
        };
        assert_eq!(parts.combine(&neg, Mode::Classification).unwrap_err().class(), "CONFIG");
    }

    proptest! {
        #[test]
        fn bce_label_symmetry(z in -60.0f64..60.0) {
            let a = bce_with_logits(z, 1.0);
            let b = bce_with_logits(-z, 0.0);
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn cosine_scale_invariance(
            a in proptest::collection::vec(-5.0f64..5.0, 4),
            b in proptest::collection::vec(-5.0f64..5.0, 4),
            k in 0.01f64..100.0,
            y in 0u8..2,
        ) {
            prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
            let y = y as f64;
            let base = contrastive_cosine(&col(&a), &col(&b), &[y], 1.0).unwrap();
            let scaled: Vec<f64> = a.iter().map(|x| x * k).collect();
            let other = contrastive_cosine(&col(&scaled), &col(&b), &[y], 1.0).unwrap();
            prop_assert!(base >= 0.0);
            prop_assert!((base - other).abs() < 1e-9);
        }

        #[test]
        fn composite_linear_in_weights(
            parts in proptest::array::uniform4(0.0f64..3.0),
            w1 in proptest::array::uniform4(0.0f64..1.0),
            w2 in proptest::array::uniform4(0.0f64..1.0),
        ) {
            let b = LossBreakdown { l_bce: parts[0], l_con: parts[1], l_conf: parts[2], l_recon: parts[3], ..Default::default() };
            let mk = |w: [f64; 4]| LossWeights { cls: w[0], con: w[1], conf: w[2], recon: w[3] };
            let sum: [f64; 4] = std::array::from_fn(|i| w1[i] + w2[i]);
            let t1 = b.combine(&mk(w1), Mode::Classification).unwrap().l_total;
            let t2 = b.combine(&mk(w2), Mode::Classification).unwrap().l_total;
            let t12 = b.combine(&mk(sum), Mode::Classification).unwrap().l_total;
            prop_assert!((t1 + t2 - t12).abs() < 1e-12);
        }
    }
}
