//! Parameters and forward passes of the dual-encoder interaction model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Mode, ModelConfig};
use super::tokenizer::{TokenSeq, Vocab, PAD};
use crate::error::{Error, Result};
use crate::nn::tape::token_nll;
use crate::nn::{dense_forward, Activation, DenseLayer, NodeId, ParamId, ParamSet, Tape, Tensor2};
use crate::scalar::{sigmoid, Scalar};

/// Slot indices of each sub-network inside the flat layer list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub drug: [usize; 2],
    pub protein: [usize; 2],
    pub pocket: Option<[usize; 2]>,
    pub classifier: [usize; 2],
    pub conf: [usize; 2],
    pub ae_encoder: usize,
    pub ae_decoder: usize,
}

impl Layout {
    pub fn for_config(config: &ModelConfig) -> Self {
        let mut next = 0..;
        let mut pair = || [next.next().unwrap(), next.next().unwrap()];
        let drug = pair();
        let protein = pair();
        let pocket = config.pocket_dim.map(|_| pair());
        let classifier = pair();
        let conf = pair();
        let [ae_encoder, ae_decoder] = pair();
        Self {
            drug,
            protein,
            pocket,
            classifier,
            conf,
            ae_encoder,
            ae_decoder,
        }
    }

    pub fn layer_count(&self) -> usize {
        self.ae_decoder + 1
    }

    /// Parameter ids of the interaction head (classifier or regressor).
    pub fn classifier_params(&self) -> Vec<ParamId> {
        self.classifier
            .iter()
            .flat_map(|&s| [ParamId::weight(s), ParamId::bias(s)])
            .collect()
    }

    pub fn conf_params(&self) -> Vec<ParamId> {
        self.conf
            .iter()
            .flat_map(|&s| [ParamId::weight(s), ParamId::bias(s)])
            .collect()
    }

    /// Every parameter upstream of the interaction logit.
    pub fn logit_path_params(&self) -> Vec<ParamId> {
        let mut slots: Vec<usize> = self
            .drug
            .iter()
            .chain(&self.protein)
            .chain(&self.classifier)
            .copied()
            .collect();
        if let Some(p) = self.pocket {
            slots.extend(p);
        }
        slots
            .into_iter()
            .flat_map(|s| [ParamId::weight(s), ParamId::bias(s)])
            .collect()
    }
}

/// Shape specification of each layer in slot order.
fn layer_specs(c: &ModelConfig, vocab_len: usize) -> Vec<(usize, usize, Activation)> {
    let (h, o) = (c.hidden_dim, c.output_dim);
    let mut specs = vec![
        (c.drug_dim, h, Activation::Relu),
        (h, o, Activation::Identity),
        (c.protein_dim, h, Activation::Relu),
        (h, o, Activation::Identity),
    ];
    if let Some(k) = c.pocket_dim {
        specs.push((k, h, Activation::Relu));
        specs.push((h, o, Activation::Identity));
    }
    specs.extend([
        (2 * o, h, Activation::Relu),
        (h, 1, Activation::Identity),
        (2 * o + 1, h, Activation::Relu),
        (h, 1, Activation::Sigmoid),
        (c.drug_dim, c.latent_dim, Activation::Tanh),
        (c.latent_dim, c.max_len * vocab_len, Activation::Identity),
    ]);
    specs
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    pub config: ModelConfig,
    layout: Layout,
    vocab: Vocab,
    layers: Vec<DenseLayer<T>>,
}

/// Batch of raw embeddings, one sample per column.
#[derive(Debug, Clone)]
pub struct BatchInput<T> {
    pub drugs: Tensor2<T>,
    pub proteins: Tensor2<T>,
    pub pockets: Option<Tensor2<T>>,
}

impl<T: Scalar> BatchInput<T> {
    pub fn len(&self) -> usize {
        self.drugs.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.drugs.cols() == 0
    }
}

/// Tape nodes produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    pub e_d: NodeId,
    pub e_p: NodeId,
    /// `1 x B` interaction logits (affinities in regression mode).
    pub logits: NodeId,
    /// `1 x B` confidence in (0, 1), computed from detached inputs.
    pub conf: NodeId,
    /// `(max_len * vocab) x B` reconstruction logits, when requested.
    pub recon: Option<NodeId>,
}

/// Plain values of one forward pass.
#[derive(Debug, Clone)]
pub struct BatchOutput<T> {
    pub e_d: Tensor2<T>,
    pub e_p: Tensor2<T>,
    pub logits: Vec<T>,
    pub conf: Vec<T>,
    pub recon: Option<Tensor2<T>>,
}

impl<T: Scalar> ModelState<T> {
    /// Scaled-uniform initialisation, deterministic in `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let vocab = config.vocab()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_specs(&config, vocab.len())
            .into_iter()
            .enumerate()
            .map(|(slot, (i, o, a))| DenseLayer::init_uniform(i, o, a, slot, &mut rng))
            .collect();
        Ok(Self {
            layout: Layout::for_config(&config),
            config,
            vocab,
            layers,
        })
    }

    /// All weights and biases zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let vocab = config.vocab()?;
        let layers = layer_specs(&config, vocab.len())
            .into_iter()
            .enumerate()
            .map(|(slot, (i, o, a))| DenseLayer::zeros(i, o, a, slot))
            .collect();
        Ok(Self {
            layout: Layout::for_config(&config),
            config,
            vocab,
            layers,
        })
    }

    /// Rebuilds a state from layers in slot order, checking every shape.
    pub fn from_layers(config: ModelConfig, layers: Vec<DenseLayer<T>>) -> Result<Self> {
        config.validate()?;
        let vocab = config.vocab()?;
        let specs = layer_specs(&config, vocab.len());
        if specs.len() != layers.len() {
            return Err(Error::Format(format!(
                "expected {} layers for this configuration, found {}",
                specs.len(),
                layers.len()
            )));
        }
        for (slot, ((i, o, a), l)) in specs.iter().zip(&layers).enumerate() {
            if l.weight.shape() != (*o, *i) || l.bias.shape() != (*o, 1) || l.activation != *a || l.slot != slot {
                return Err(Error::Format(format!(
                    "layer {slot}: expected {o}x{i} {a:?}, found {}x{} {:?}",
                    l.weight.rows(),
                    l.weight.cols(),
                    l.activation
                )));
            }
        }
        Ok(Self {
            layout: Layout::for_config(&config),
            config,
            vocab,
            layers,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn layer(&self, slot: usize) -> &DenseLayer<T> {
        &self.layers[slot]
    }

    pub fn layer_mut(&mut self, slot: usize) -> &mut DenseLayer<T> {
        &mut self.layers[slot]
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn mlp<'a>(&'a self, tape: &mut Tape<'a, T>, slots: [usize; 2], x: NodeId) -> Result<NodeId> {
        let h = dense_forward(tape, &self.layers[slots[0]], x)?;
        dense_forward(tape, &self.layers[slots[1]], h)
    }

    fn check_width(&self, what: &'static str, expected: usize, got: &Tensor2<T>) -> Result<()> {
        if got.rows() != expected {
            return Err(Error::shape(what, (expected, got.cols()), got.shape()));
        }
        Ok(())
    }

    pub fn encode_drug_node<'a>(&'a self, tape: &mut Tape<'a, T>, drugs: NodeId) -> Result<NodeId> {
        self.check_width("encode_drug", self.config.drug_dim, tape.value(drugs))?;
        self.mlp(tape, self.layout.drug, drugs)
    }

    /// `λ_protein·E(p) + λ_pocket·K(k)` with a pocket, `E(p)` without.
    pub fn encode_protein_node<'a>(
        &'a self,
        tape: &mut Tape<'a, T>,
        proteins: NodeId,
        pockets: Option<NodeId>,
    ) -> Result<NodeId> {
        self.check_width("encode_protein", self.config.protein_dim, tape.value(proteins))?;
        let e = self.mlp(tape, self.layout.protein, proteins)?;
        match (self.layout.pocket, pockets) {
            (None, None) => Ok(e),
            (None, Some(_)) => Err(Error::Config(
                "pocket embedding supplied to a model without a pocket branch".into(),
            )),
            (Some(_), None) => Err(Error::Config("pocket-enabled model requires a pocket embedding".into())),
            (Some(slots), Some(k)) => {
                self.check_width("encode_pocket", self.config.pocket_dim.unwrap_or(0), tape.value(k))?;
                let k = self.mlp(tape, slots, k)?;
                let e = tape.scale(e, T::lit(self.config.lambda_protein))?;
                let k = tape.scale(k, T::lit(self.config.lambda_pocket))?;
                tape.add(e, k)
            }
        }
    }

    pub fn logit_node<'a>(&'a self, tape: &mut Tape<'a, T>, e_d: NodeId, e_p: NodeId) -> Result<NodeId> {
        let x = tape.concat_rows(&[e_d, e_p])?;
        self.check_width("interaction_logit", 2 * self.config.output_dim, tape.value(x))?;
        self.mlp(tape, self.layout.classifier, x)
    }

    /// Confidence head over detached `[e_d ‖ e_p ‖ ŷ]`; no gradient reaches
    /// the encoders or the interaction head through this path.
    pub fn confidence_node<'a>(
        &'a self,
        tape: &mut Tape<'a, T>,
        e_d: NodeId,
        e_p: NodeId,
        logits: NodeId,
    ) -> Result<NodeId> {
        let d = tape.detach(e_d);
        let p = tape.detach(e_p);
        let y = tape.detach(logits);
        let x = tape.concat_rows(&[d, p, y])?;
        self.confidence_head_node(tape, x)
    }

    /// Confidence head applied to an already assembled `[e_d ‖ e_p ‖ ŷ]`.
    pub fn confidence_head_node<'a>(&'a self, tape: &mut Tape<'a, T>, x: NodeId) -> Result<NodeId> {
        self.check_width("confidence", 2 * self.config.output_dim + 1, tape.value(x))?;
        self.mlp(tape, self.layout.conf, x)
    }

    pub fn reconstruct_node<'a>(&'a self, tape: &mut Tape<'a, T>, drugs: NodeId) -> Result<NodeId> {
        self.check_width("reconstruct", self.config.drug_dim, tape.value(drugs))?;
        let z = dense_forward(tape, &self.layers[self.layout.ae_encoder], drugs)?;
        dense_forward(tape, &self.layers[self.layout.ae_decoder], z)
    }

    /// Records the full forward pass of a batch.
    pub fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a, T>,
        batch: &BatchInput<T>,
        with_recon: bool,
    ) -> Result<ForwardNodes> {
        let b = batch.len();
        if batch.proteins.cols() != b || batch.pockets.as_ref().is_some_and(|k| k.cols() != b) {
            return Err(Error::shape("batch", batch.drugs.shape(), batch.proteins.shape()));
        }
        let drugs = tape.constant(batch.drugs.clone());
        let proteins = tape.constant(batch.proteins.clone());
        let pockets = batch.pockets.as_ref().map(|k| tape.constant(k.clone()));
        let e_d = self.encode_drug_node(tape, drugs)?;
        let e_p = self.encode_protein_node(tape, proteins, pockets)?;
        let logits = self.logit_node(tape, e_d, e_p)?;
        let conf = self.confidence_node(tape, e_d, e_p, logits)?;
        let recon = if with_recon {
            Some(self.reconstruct_node(tape, drugs)?)
        } else {
            None
        };
        Ok(ForwardNodes {
            e_d,
            e_p,
            logits,
            conf,
            recon,
        })
    }

    /// Inference over a batch.
    pub fn predict(&self, batch: &BatchInput<T>, with_recon: bool) -> Result<BatchOutput<T>> {
        let mut tape = Tape::new();
        let n = self.forward(&mut tape, batch, with_recon)?;
        Ok(BatchOutput {
            e_d: tape.value(n.e_d).clone(),
            e_p: tape.value(n.e_p).clone(),
            logits: tape.value(n.logits).as_slice().to_vec(),
            conf: tape.value(n.conf).as_slice().to_vec(),
            recon: n.recon.map(|r| tape.value(r).clone()),
        })
    }

    pub fn encode_drug(&self, vec: &[T]) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor2::column(vec));
        let e = self.encode_drug_node(&mut tape, x)?;
        Ok(tape.value(e).as_slice().to_vec())
    }

    pub fn encode_protein_with_pocket(&self, protein: &[T], pocket: Option<&[T]>) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor2::column(protein));
        let k = pocket.map(|k| tape.constant(Tensor2::column(k)));
        let e = self.encode_protein_node(&mut tape, p, k)?;
        Ok(tape.value(e).as_slice().to_vec())
    }

    /// Output of the protein branch alone (no aggregation).
    pub fn encode_protein_only(&self, protein: &[T]) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor2::column(protein));
        self.check_width("encode_protein", self.config.protein_dim, tape.value(p))?;
        let e = self.mlp(&mut tape, self.layout.protein, p)?;
        Ok(tape.value(e).as_slice().to_vec())
    }

    /// Output of the pocket branch alone (no aggregation).
    pub fn encode_pocket_only(&self, pocket: &[T]) -> Result<Vec<T>> {
        let slots = self
            .layout
            .pocket
            .ok_or_else(|| Error::Config("model has no pocket branch".into()))?;
        let mut tape = Tape::new();
        let k = tape.constant(Tensor2::column(pocket));
        self.check_width("encode_pocket", self.config.pocket_dim.unwrap_or(0), tape.value(k))?;
        let e = self.mlp(&mut tape, slots, k)?;
        Ok(tape.value(e).as_slice().to_vec())
    }

    pub fn interaction_logit(&self, e_d: &[T], e_p: &[T]) -> Result<T> {
        let mut tape = Tape::new();
        let d = tape.constant(Tensor2::column(e_d));
        let p = tape.constant(Tensor2::column(e_p));
        let y = self.logit_node(&mut tape, d, p)?;
        Ok(tape.value(y).item())
    }

    pub fn confidence(&self, e_d: &[T], e_p: &[T], logit: T) -> Result<T> {
        let mut tape = Tape::new();
        let d = tape.constant(Tensor2::column(e_d));
        let p = tape.constant(Tensor2::column(e_p));
        let y = tape.constant(Tensor2::scalar(logit));
        let c = self.confidence_node(&mut tape, d, p, y)?;
        Ok(tape.value(c).item())
    }

    /// Per-position token logits, `max_len x |vocab|`.
    pub fn reconstruct(&self, drug: &[T]) -> Result<Tensor2<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor2::column(drug));
        let r = self.reconstruct_node(&mut tape, x)?;
        Tensor2::from_vec(self.config.max_len, self.vocab.len(), tape.value(r).as_slice().to_vec())
    }

    /// `ln(NLL + ε)` where NLL is the mean reconstruction NLL over non-PAD tokens.
    pub fn unfamiliarity(&self, drug: &[T], tokens: &TokenSeq) -> Result<T> {
        if tokens.ids.len() != self.config.max_len {
            return Err(Error::shape(
                "unfamiliarity",
                (self.config.max_len, 1),
                (tokens.ids.len(), 1),
            ));
        }
        tokens.validate(self.vocab.len())?;
        let logits = self.reconstruct(drug)?;
        let nll = reconstruction_nll(&logits, tokens)?;
        Ok(unfamiliarity_from_nll(nll, T::lit(self.config.unfamiliarity_eps)))
    }

    /// Probability for classification, identity for regression.
    pub fn output_transform(&self, raw: T) -> T {
        match self.config.mode {
            Mode::Classification => sigmoid(raw),
            Mode::Regression => raw,
        }
    }
}

/// Mean NLL of `tokens` under `max_len x vocab` logits, over non-PAD positions.
pub fn reconstruction_nll<T: Scalar>(logits: &Tensor2<T>, tokens: &TokenSeq) -> Result<T> {
    let vocab = logits.cols();
    let flat = Tensor2::from_vec(logits.len(), 1, logits.as_slice().to_vec())?;
    Ok(token_nll(&flat, std::slice::from_ref(&tokens.ids), PAD, vocab)?[0])
}

pub fn unfamiliarity_from_nll<T: Scalar>(nll: T, eps: T) -> T {
    (nll + eps).ln()
}

impl<T: Scalar> ParamSet<T> for ModelState<T> {
    fn param_ids(&self) -> Vec<ParamId> {
        self.layers.param_ids()
    }

    fn param(&self, id: ParamId) -> Option<&Tensor2<T>> {
        self.layers.param(id)
    }

    fn param_mut(&mut self, id: ParamId) -> Option<&mut Tensor2<T>> {
        self.layers.param_mut(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tokenizer::tokenize;
    use rand::Rng;

    fn small(pocket: bool) -> ModelConfig {
        ModelConfig {
            drug_dim: 6,
            protein_dim: 5,
            pocket_dim: pocket.then_some(4),
            hidden_dim: 8,
            output_dim: 3,
            max_len: 6,
            alphabet: "CNO()=".into(),
            latent_dim: 4,
            ..Default::default()
        }
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_model_outputs() {
        let m = ModelState::<f64>::zeros(small(false)).unwrap();
        let e = m.encode_drug(&[1.0; 6]).unwrap();
        assert_eq!(e, vec![0.0; 3]);
        let y = m.interaction_logit(&[0.3; 3], &[-0.2; 3]).unwrap();
        assert_eq!(y, 0.0);
        assert_eq!(m.output_transform(y), 0.5);
        assert_eq!(m.confidence(&[1.0; 3], &[2.0; 3], 4.0).unwrap(), 0.5);
        let r = m.reconstruct(&[1.0; 6]).unwrap();
        assert_eq!(r.shape(), (6, 10));
        assert!(r.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identity_like_drug_encoder_passes_relu_chain() {
        let cfg = ModelConfig {
            drug_dim: 4,
            hidden_dim: 4,
            output_dim: 4,
            ..small(false)
        };
        let mut m = ModelState::<f64>::zeros(cfg).unwrap();
        let [a, b] = m.layout().drug;
        m.layer_mut(a).weight = Tensor2::identity(4);
        m.layer_mut(b).weight = Tensor2::identity(4);
        assert_eq!(m.encode_drug(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![1.0, 0.0, 3.0, 0.5]);
    }

    #[test]
    fn forward_is_deterministic_and_bounded() {
        let m = ModelState::<f64>::new(small(false), 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = rand_vec(&mut rng, 6);
        let p = rand_vec(&mut rng, 5);
        let ed = m.encode_drug(&d).unwrap();
        assert_eq!(ed, m.encode_drug(&d).unwrap());
        let ep = m.encode_protein_with_pocket(&p, None).unwrap();
        let y = m.interaction_logit(&ed, &ep).unwrap();
        let c = m.confidence(&ed, &ep, y).unwrap();
        assert!(c > 0.0 && c < 1.0);
        assert_ne!(y, m.interaction_logit(&ep, &ed).unwrap());
    }

    #[test]
    fn pocket_wiring_errors() {
        let plain = ModelState::<f64>::new(small(false), 1).unwrap();
        let err = plain
            .encode_protein_with_pocket(&[0.0; 5], Some(&[0.0; 4]))
            .unwrap_err();
        assert_eq!(err.class(), "CONFIG");
        let pocketed = ModelState::<f64>::new(small(true), 1).unwrap();
        assert_eq!(
            pocketed
                .encode_protein_with_pocket(&[0.0; 5], None)
                .unwrap_err()
                .class(),
            "CONFIG"
        );
        assert_eq!(plain.encode_drug(&[0.0; 5]).unwrap_err().class(), "SHAPE");
    }

    #[test]
    fn pocket_aggregation_arithmetic() {
        let cfg = ModelConfig {
            protein_dim: 2,
            pocket_dim: Some(2),
            hidden_dim: 2,
            output_dim: 2,
            ..small(true)
        };
        let mut m = ModelState::<f64>::zeros(cfg).unwrap();
        let lay = *m.layout();
        for s in lay.protein.iter().chain(lay.pocket.as_ref().unwrap()) {
            m.layer_mut(*s).weight = Tensor2::identity(2);
        }
        // E(p) = [1, 2], K(k) = [0.5, 0]
        let e = m.encode_protein_with_pocket(&[1.0, 2.0], Some(&[0.5, 0.0])).unwrap();
        assert_eq!(e, vec![2.0, 2.0]);
    }

    #[test]
    fn unfamiliarity_uniform_logits() {
        // 16 characters + 4 specials = 20 ids
        let cfg = ModelConfig {
            alphabet: "CNOSPFIcnos()=#1".into(),
            max_len: 8,
            ..small(false)
        };
        let m = ModelState::<f64>::zeros(cfg).unwrap();
        assert_eq!(m.vocab().len(), 20);
        let toks = tokenize(m.vocab(), "CCO", 8).unwrap();
        let u = m.unfamiliarity(&[0.1; 6], &toks).unwrap();
        let expected = (20f64.ln() + 1e-8).ln();
        assert!((u - expected).abs() < 1e-12);
        assert!((u - 1.0972).abs() < 1e-4);
    }

    #[test]
    fn unfamiliarity_closed_forms() {
        assert!(unfamiliarity_from_nll(1.0f64, 1e-8).abs() < 1.1e-8);
        let eps = 1e-8;
        let u = unfamiliarity_from_nll(std::f64::consts::E - eps, eps);
        assert!((u - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_pad_sequence_is_unscorable() {
        let m = ModelState::<f64>::zeros(small(false)).unwrap();
        let toks = TokenSeq {
            ids: vec![PAD; 6],
            truncated: false,
        };
        let err = m.unfamiliarity(&[0.0; 6], &toks).unwrap_err();
        assert!(err.to_string().contains("no scorable tokens"));
    }

    #[test]
    fn from_layers_rejects_mismatch() {
        let m = ModelState::<f64>::new(small(false), 3).unwrap();
        let mut layers = m.layers().to_vec();
        layers[0] = DenseLayer::zeros(7, 8, Activation::Relu, 0);
        assert!(ModelState::from_layers(small(false), layers).is_err());
        assert!(ModelState::from_layers(small(false), m.layers().to_vec()).is_ok());
    }

    #[test]
    fn single_precision_forward() {
        let m = ModelState::<f32>::new(small(true), 5).unwrap();
        let ed = m.encode_drug(&[0.5f32; 6]).unwrap();
        let ep = m.encode_protein_with_pocket(&[0.1f32; 5], Some(&[0.2f32; 4])).unwrap();
        let y = m.interaction_logit(&ed, &ep).unwrap();
        assert!(y.is_finite());
    }
}
