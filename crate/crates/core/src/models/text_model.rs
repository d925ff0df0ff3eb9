use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::speech::check_same_layout;
use super::{trace_of, ForwardHooks, ForwardTrace, HeadConfig, ModelError, NodeId, Prediction, Result};
use crate::tensor::{Grads, Graph, ParamSet, Tensor};
use crate::text::EncodedQuestion;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextModConfig {
    /// Number of real tokens; the embedding table has one extra row for
    /// index 0.
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub head: HeadConfig,
}

impl Default for TextModConfig {
    fn default() -> Self {
        Self {
            vocab_size: 1,
            embed_dim: 512,
            head: HeadConfig::default(),
        }
    }
}

impl TextModConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.embed_dim == 0 {
            return Err(ModelError::Config("vocab_size and embed_dim must be positive".into()));
        }
        self.head.validate()
    }

    pub fn parameter_count(&self) -> usize {
        (self.vocab_size + 1) * self.embed_dim + self.head.parameter_count(self.embed_dim)
    }
}

/// Pipelined model: token indices in, answer distribution out.
#[derive(Clone, Debug)]
pub struct TextMod {
    pub config: TextModConfig,
    pub params: ParamSet,
}

impl TextMod {
    pub fn new(config: TextModConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let rows = config.vocab_size + 1;
        params.insert_glorot(
            "embedding.weight",
            &[rows, config.embed_dim],
            rows,
            config.embed_dim,
            &mut rng,
        )?;
        config.head.init(&mut params, config.embed_dim, &mut rng)?;
        Ok(Self { config, params })
    }

    pub fn from_params(config: TextModConfig, params: ParamSet) -> Result<Self> {
        let reference = Self::new(config.clone(), 0)?;
        check_same_layout(&reference.params, &params)?;
        Ok(Self { config, params })
    }

    fn record(
        &self,
        g: &mut Graph<'_>,
        question: &EncodedQuestion,
        image: &Tensor,
        hooks: &ForwardHooks,
    ) -> Result<(NodeId, Option<NodeId>, NodeId, NodeId)> {
        if question.unanswerable_by_text() {
            return Err(ModelError::EmptyQuestion);
        }
        let table = g.param_named("embedding.weight")?;
        let (rows, mask) = g.gather(table, &question.indices)?;
        self.config.head.build(g, rows, Some(&mask), image, hooks)
    }

    pub fn forward_traced(
        &self,
        question: &EncodedQuestion,
        image: &Tensor,
        hooks: &ForwardHooks,
    ) -> Result<ForwardTrace> {
        let mut g = Graph::new(&self.params);
        let nodes = self.record(&mut g, question, image, hooks)?;
        trace_of(&g, nodes)
    }

    pub fn forward(&self, question: &EncodedQuestion, image: &Tensor) -> Result<Prediction> {
        Ok(self
            .forward_traced(question, image, &ForwardHooks::default())?
            .prediction)
    }

    pub fn loss(&self, question: &EncodedQuestion, image: &Tensor, label: usize) -> Result<f64> {
        let mut g = Graph::new(&self.params);
        let (_, _, _, logits) = self.record(&mut g, question, image, &ForwardHooks::default())?;
        let loss = g.softmax_xent(logits, label)?;
        Ok(g.value(loss).data()[0])
    }

    pub fn loss_and_grads(&self, question: &EncodedQuestion, image: &Tensor, label: usize) -> Result<(f64, Grads)> {
        let mut g = Graph::new(&self.params);
        let (_, _, _, logits) = self.record(&mut g, question, image, &ForwardHooks::default())?;
        let loss = g.softmax_xent(logits, label)?;
        let grads = g.backward(loss, 1.0)?;
        Ok((g.value(loss).data()[0], grads))
    }
}
