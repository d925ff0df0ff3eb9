//! SpeechMod, TextMod and their blind variants.
//!
//! Both models share the same head: the question encoding (final LSTM
//! state) goes through a tanh dense layer, the image feature through
//! another, the two are multiplied element-wise, then a tanh hidden layer
//! and a softmax output over the answer classes. Blind variants drop the
//! image branch and feed the question branch straight to the hidden layer.

mod conv_stack;
mod speech;
mod text_model;

pub use conv_stack::{ConvLayerSpec, ConvStackSpec, Padding, PoolSpec};
pub use speech::{SpeechMod, SpeechModConfig};
pub use text_model::{TextMod, TextModConfig};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::ScaledWaveform;
use crate::tensor::{Activation, Grads, Graph, NodeId, ParamSet, Tensor, TensorError};
use crate::text::EncodedQuestion;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("waveform of {len} samples is shorter than the {min} samples needed for one frame")]
    InputTooShort { len: usize, min: usize },
    #[error("question has no in-vocabulary tokens")]
    EmptyQuestion,
    #[error("image feature has dimension {got}, model expects {expected}")]
    ImageDim { expected: usize, got: usize },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("{model} cannot consume {input} input")]
    WrongInput { model: &'static str, input: &'static str },
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Output distribution and its argmax.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probs: Tensor,
    pub answer_index: usize,
}

impl Prediction {
    fn from_logits(logits: &Tensor) -> Result<Self> {
        let probs = crate::tensor::ops::softmax(logits)?;
        let answer_index = probs.argmax();
        Ok(Self { probs, answer_index })
    }
}

/// Intermediate vectors of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    /// Question-branch dense output.
    pub question: Tensor,
    /// Image-branch dense output, absent for blind models.
    pub image: Option<Tensor>,
    /// Input to the hidden layer: the fused product, or the question
    /// branch alone for blind models.
    pub fused: Tensor,
    pub logits: Tensor,
    pub prediction: Prediction,
}

/// Test hooks for the forward pass.
#[derive(Clone, Debug, Default)]
pub struct ForwardHooks {
    /// Replaces the question-branch dense output.
    pub question_override: Option<Tensor>,
}

/// Dimensions shared by both models after the question encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub lstm_hidden: usize,
    pub image_dim: usize,
    pub fused_dim: usize,
    pub hidden_dense: usize,
    pub num_answers: usize,
    pub blind: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            lstm_hidden: 512,
            image_dim: 4096,
            fused_dim: 512,
            hidden_dense: 1024,
            num_answers: 1000,
            blind: false,
        }
    }
}

impl HeadConfig {
    fn validate(&self) -> Result<()> {
        let dims = [
            self.lstm_hidden,
            self.image_dim,
            self.fused_dim,
            self.hidden_dense,
            self.num_answers,
        ];
        if dims.contains(&0) {
            return Err(ModelError::Config("all head dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Scalars in the LSTM (input width `lstm_input`) and everything after it.
    fn parameter_count(&self, lstm_input: usize) -> usize {
        let h = self.lstm_hidden;
        let lstm = lstm_input * 4 * h + h * 4 * h + 4 * h;
        let question = h * self.fused_dim + self.fused_dim;
        let image = if self.blind {
            0
        } else {
            self.image_dim * self.fused_dim + self.fused_dim
        };
        let hidden = self.fused_dim * self.hidden_dense + self.hidden_dense;
        let output = self.hidden_dense * self.num_answers + self.num_answers;
        lstm + question + image + hidden + output
    }

    fn init<R: Rng>(&self, ps: &mut ParamSet, lstm_input: usize, rng: &mut R) -> Result<()> {
        let h = self.lstm_hidden;
        ps.insert_glorot("lstm.wx", &[lstm_input, 4 * h], lstm_input, 4 * h, rng)?;
        ps.insert_glorot("lstm.wh", &[h, 4 * h], h, 4 * h, rng)?;
        let mut bias = Tensor::zeros(&[4 * h]);
        bias.data_mut()[h..2 * h].iter_mut().for_each(|b| *b = 1.0);
        ps.insert("lstm.bias", bias)?;
        dense_params(ps, "question_dense", h, self.fused_dim, rng)?;
        if !self.blind {
            dense_params(ps, "image_dense", self.image_dim, self.fused_dim, rng)?;
        }
        dense_params(ps, "hidden", self.fused_dim, self.hidden_dense, rng)?;
        dense_params(ps, "output", self.hidden_dense, self.num_answers, rng)?;
        Ok(())
    }

    /// Records LSTM encoding plus head; returns (question, image, fused, logits).
    fn build(
        &self,
        g: &mut Graph<'_>,
        seq: NodeId,
        mask: Option<&[bool]>,
        image: &Tensor,
        hooks: &ForwardHooks,
    ) -> Result<(NodeId, Option<NodeId>, NodeId, NodeId)> {
        let (wx, wh, b) = (
            g.param_named("lstm.wx")?,
            g.param_named("lstm.wh")?,
            g.param_named("lstm.bias")?,
        );
        let encoded = g.lstm(seq, mask, wx, wh, b)?;
        let question = match &hooks.question_override {
            Some(t) => g.input(t.clone())?,
            None => dense_node(g, encoded, "question_dense", Activation::Tanh)?,
        };
        let (image_branch, fused) = if self.blind {
            (None, question)
        } else {
            if image.shape() != [self.image_dim] {
                return Err(ModelError::ImageDim {
                    expected: self.image_dim,
                    got: image.len(),
                });
            }
            let img = g.input(image.clone())?;
            let img = dense_node(g, img, "image_dense", Activation::Tanh)?;
            (Some(img), g.mul(question, img)?)
        };
        let hidden = dense_node(g, fused, "hidden", Activation::Tanh)?;
        let logits = dense_node(g, hidden, "output", Activation::Identity)?;
        Ok((question, image_branch, fused, logits))
    }
}

fn dense_params<R: Rng>(ps: &mut ParamSet, name: &str, d: usize, m: usize, rng: &mut R) -> Result<()> {
    ps.insert_glorot(&format!("{name}.weight"), &[d, m], d, m, rng)?;
    ps.insert(format!("{name}.bias"), Tensor::zeros(&[m]))?;
    Ok(())
}

fn dense_node(g: &mut Graph<'_>, x: NodeId, name: &str, act: Activation) -> Result<NodeId> {
    let w = g.param_named(&format!("{name}.weight"))?;
    let b = g.param_named(&format!("{name}.bias"))?;
    Ok(g.dense(x, w, b, act)?)
}

fn trace_of(g: &Graph<'_>, nodes: (NodeId, Option<NodeId>, NodeId, NodeId)) -> Result<ForwardTrace> {
    let (q, img, fused, logits) = nodes;
    let logits = g.value(logits).clone();
    Ok(ForwardTrace {
        question: g.value(q).clone(),
        image: img.map(|i| g.value(i).clone()),
        fused: g.value(fused).clone(),
        prediction: Prediction::from_logits(&logits)?,
        logits,
    })
}

/// Question input for either model.
#[derive(Clone, Copy, Debug)]
pub enum QuestionInput<'a> {
    Audio(&'a ScaledWaveform),
    Tokens(&'a EncodedQuestion),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Speech,
    Text,
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "speech" | "speechmod" => Ok(Self::Speech),
            "text" | "textmod" => Ok(Self::Text),
            other => Err(format!("unknown model `{other}` (speech|text)")),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Speech => "speech",
            Self::Text => "text",
        })
    }
}

/// Serializable description of a model, stored next to its checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Speech(SpeechModConfig),
    Text(TextModConfig),
}

impl ModelSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            Self::Speech(_) => ModelKind::Speech,
            Self::Text(_) => ModelKind::Text,
        }
    }

    pub fn head(&self) -> &HeadConfig {
        match self {
            Self::Speech(c) => &c.head,
            Self::Text(c) => &c.head,
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            Self::Speech(c) => c.parameter_count(),
            Self::Text(c) => c.parameter_count(),
        }
    }

    /// Freshly initialized model.
    pub fn build(&self, seed: u64) -> Result<VqaModel> {
        Ok(match self {
            Self::Speech(c) => VqaModel::Speech(SpeechMod::new(c.clone(), seed)?),
            Self::Text(c) => VqaModel::Text(TextMod::new(c.clone(), seed)?),
        })
    }

    /// Model around existing parameters, e.g. from a checkpoint.
    pub fn with_params(&self, params: ParamSet) -> Result<VqaModel> {
        Ok(match self {
            Self::Speech(c) => VqaModel::Speech(SpeechMod::from_params(c.clone(), params)?),
            Self::Text(c) => VqaModel::Text(TextMod::from_params(c.clone(), params)?),
        })
    }
}

/// Either model behind one interface.
#[derive(Clone, Debug)]
pub enum VqaModel {
    Speech(SpeechMod),
    Text(TextMod),
}

impl VqaModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            Self::Speech(_) => ModelKind::Speech,
            Self::Text(_) => ModelKind::Text,
        }
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            Self::Speech(m) => ModelSpec::Speech(m.config.clone()),
            Self::Text(m) => ModelSpec::Text(m.config.clone()),
        }
    }

    pub fn name(&self) -> String {
        let base = match self {
            Self::Speech(_) => "SpeechMod",
            Self::Text(_) => "TextMod",
        };
        if self.is_blind() {
            format!("{base} Blind")
        } else {
            base.to_string()
        }
    }

    pub fn is_blind(&self) -> bool {
        match self {
            Self::Speech(m) => m.config.head.blind,
            Self::Text(m) => m.config.head.blind,
        }
    }

    pub fn num_answers(&self) -> usize {
        match self {
            Self::Speech(m) => m.config.head.num_answers,
            Self::Text(m) => m.config.head.num_answers,
        }
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            Self::Speech(m) => &m.params,
            Self::Text(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            Self::Speech(m) => &mut m.params,
            Self::Text(m) => &mut m.params,
        }
    }

    pub fn forward(&self, question: QuestionInput<'_>, image: &Tensor) -> Result<Prediction> {
        Ok(self
            .forward_traced(question, image, &ForwardHooks::default())?
            .prediction)
    }

    pub fn forward_traced(
        &self,
        question: QuestionInput<'_>,
        image: &Tensor,
        hooks: &ForwardHooks,
    ) -> Result<ForwardTrace> {
        match (self, question) {
            (Self::Speech(m), QuestionInput::Audio(w)) => m.forward_traced(w, image, hooks),
            (Self::Text(m), QuestionInput::Tokens(q)) => m.forward_traced(q, image, hooks),
            (Self::Speech(_), QuestionInput::Tokens(_)) => Err(ModelError::WrongInput {
                model: "SpeechMod",
                input: "token",
            }),
            (Self::Text(_), QuestionInput::Audio(_)) => Err(ModelError::WrongInput {
                model: "TextMod",
                input: "audio",
            }),
        }
    }

    pub fn loss_and_grads(&self, question: QuestionInput<'_>, image: &Tensor, label: usize) -> Result<(f64, Grads)> {
        match (self, question) {
            (Self::Speech(m), QuestionInput::Audio(w)) => m.loss_and_grads(w, image, label),
            (Self::Text(m), QuestionInput::Tokens(q)) => m.loss_and_grads(q, image, label),
            _ => Err(ModelError::WrongInput {
                model: if self.kind() == ModelKind::Speech {
                    "SpeechMod"
                } else {
                    "TextMod"
                },
                input: "mismatched",
            }),
        }
    }

    pub fn loss(&self, question: QuestionInput<'_>, image: &Tensor, label: usize) -> Result<f64> {
        match (self, question) {
            (Self::Speech(m), QuestionInput::Audio(w)) => m.loss(w, image, label),
            (Self::Text(m), QuestionInput::Tokens(q)) => m.loss(q, image, label),
            _ => Err(ModelError::WrongInput {
                model: if self.kind() == ModelKind::Speech {
                    "SpeechMod"
                } else {
                    "TextMod"
                },
                input: "mismatched",
            }),
        }
    }
}
