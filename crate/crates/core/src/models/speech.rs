use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{trace_of, ConvStackSpec, ForwardHooks, ForwardTrace, HeadConfig, ModelError, Prediction, Result};
use crate::audio::ScaledWaveform;
use crate::tensor::{Activation, Grads, Graph, NodeId, ParamSet, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct SpeechModConfig {
    pub conv: ConvStackSpec,
    pub head: HeadConfig,
}

impl SpeechModConfig {
    pub fn validate(&self) -> Result<()> {
        self.conv.validate()?;
        self.head.validate()
    }

    pub fn parameter_count(&self) -> usize {
        self.conv.parameter_count() + self.head.parameter_count(self.conv.out_channels())
    }
}

/// End-to-end model from raw waveform to answer distribution.
#[derive(Clone, Debug)]
pub struct SpeechMod {
    pub config: SpeechModConfig,
    pub params: ParamSet,
}

impl SpeechMod {
    pub fn new(config: SpeechModConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut cin = 1;
        for (i, c) in config.conv.convs.iter().enumerate() {
            params.insert_glorot(
                &format!("conv{}.weight", i + 1),
                &[c.length, cin, c.filters],
                c.length * cin,
                c.length * c.filters,
                &mut rng,
            )?;
            params.insert(format!("conv{}.bias", i + 1), Tensor::zeros(&[c.filters]))?;
            cin = c.filters;
        }
        config.head.init(&mut params, cin, &mut rng)?;
        Ok(Self { config, params })
    }

    /// Wraps existing parameters, checking names and shapes against a fresh
    /// model of the same config.
    pub fn from_params(config: SpeechModConfig, params: ParamSet) -> Result<Self> {
        let reference = Self::new(config.clone(), 0)?;
        check_same_layout(&reference.params, &params)?;
        Ok(Self { config, params })
    }

    fn record_conv_stack(&self, g: &mut Graph<'_>, wave: &ScaledWaveform) -> Result<NodeId> {
        let spec = &self.config.conv;
        let min = spec.min_input_len();
        if wave.len() < min {
            return Err(ModelError::InputTooShort { len: wave.len(), min });
        }
        let input = Tensor::new(vec![wave.len(), 1], wave.samples().to_vec())?;
        let mut x = g.input(input)?;
        for (i, conv) in spec.convs.iter().enumerate() {
            let len = g.value(x).shape()[0];
            let (pl, pr) = spec.conv_padding(i, len);
            let w = g.param_named(&format!("conv{}.weight", i + 1))?;
            let b = g.param_named(&format!("conv{}.bias", i + 1))?;
            let c = g.conv1d(x, w, b, conv.stride, pl, pr)?;
            x = g.activation(c, Activation::Relu)?;
            if let Some(pool) = spec.pools.get(i) {
                x = g.maxpool1d(x, pool.size, pool.stride)?;
            }
        }
        Ok(x)
    }

    /// Conv stack output `[x, C]` for one waveform.
    pub fn conv_stack(&self, wave: &ScaledWaveform) -> Result<Tensor> {
        let mut g = Graph::new(&self.params);
        let out = self.record_conv_stack(&mut g, wave)?;
        Ok(g.value(out).clone())
    }

    fn record(
        &self,
        g: &mut Graph<'_>,
        wave: &ScaledWaveform,
        image: &Tensor,
        hooks: &ForwardHooks,
    ) -> Result<(NodeId, Option<NodeId>, NodeId, NodeId)> {
        let seq = self.record_conv_stack(g, wave)?;
        self.config.head.build(g, seq, None, image, hooks)
    }

    pub fn forward_traced(&self, wave: &ScaledWaveform, image: &Tensor, hooks: &ForwardHooks) -> Result<ForwardTrace> {
        let mut g = Graph::new(&self.params);
        let nodes = self.record(&mut g, wave, image, hooks)?;
        trace_of(&g, nodes)
    }

    pub fn forward(&self, wave: &ScaledWaveform, image: &Tensor) -> Result<Prediction> {
        Ok(self.forward_traced(wave, image, &ForwardHooks::default())?.prediction)
    }

    pub fn loss(&self, wave: &ScaledWaveform, image: &Tensor, label: usize) -> Result<f64> {
        let mut g = Graph::new(&self.params);
        let (_, _, _, logits) = self.record(&mut g, wave, image, &ForwardHooks::default())?;
        let loss = g.softmax_xent(logits, label)?;
        Ok(g.value(loss).data()[0])
    }

    pub fn loss_and_grads(&self, wave: &ScaledWaveform, image: &Tensor, label: usize) -> Result<(f64, Grads)> {
        let mut g = Graph::new(&self.params);
        let (_, _, _, logits) = self.record(&mut g, wave, image, &ForwardHooks::default())?;
        let loss = g.softmax_xent(logits, label)?;
        let grads = g.backward(loss, 1.0)?;
        Ok((g.value(loss).data()[0], grads))
    }
}

pub(super) fn check_same_layout(expected: &ParamSet, got: &ParamSet) -> Result<()> {
    if expected.len() != got.len() {
        return Err(ModelError::Config(format!(
            "expected {} parameter tensors, got {}",
            expected.len(),
            got.len()
        )));
    }
    for (e, g) in expected.iter().zip(got.iter()) {
        if e.name != g.name || e.value.shape() != g.value.shape() {
            return Err(ModelError::Config(format!(
                "parameter mismatch: expected {} {:?}, got {} {:?}",
                e.name,
                e.value.shape(),
                g.name,
                g.value.shape()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_config(blind: bool) -> SpeechModConfig {
        SpeechModConfig {
            conv: ConvStackSpec::with_filters([2, 2, 2, 2, 4]),
            head: HeadConfig {
                lstm_hidden: 8,
                image_dim: 6,
                fused_dim: 5,
                hidden_dense: 7,
                num_answers: 3,
                blind,
            },
        }
    }

    fn wave(len: usize, seed: u64) -> ScaledWaveform {
        let mut s = seed;
        let samples = (0..len)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 33) as f64 / (1u64 << 31) as f64 - 0.5) * 100.0
            })
            .collect();
        ScaledWaveform::from_samples(samples, 16000)
    }

    #[test]
    fn parameter_count_matches_built_model() {
        for blind in [false, true] {
            let cfg = toy_config(blind);
            let m = SpeechMod::new(cfg.clone(), 1).unwrap();
            assert_eq!(m.params.scalar_count(), cfg.parameter_count());
        }
        let full = SpeechModConfig::default();
        let blind = SpeechModConfig {
            head: HeadConfig {
                blind: true,
                ..full.head
            },
            ..full.clone()
        };
        assert_eq!(full.parameter_count() - blind.parameter_count(), 4096 * 512 + 512);
    }

    #[test]
    fn conv_stack_shape() {
        let m = SpeechMod::new(toy_config(false), 2).unwrap();
        assert_eq!(m.conv_stack(&wave(20_000, 1)).unwrap().shape(), &[2, 4]);
        assert!(matches!(
            m.conv_stack(&wave(8000, 1)),
            Err(ModelError::InputTooShort { min: 8192, .. })
        ));
    }

    #[test]
    fn blind_ignores_image() {
        let m = SpeechMod::new(toy_config(true), 3).unwrap();
        let w = wave(9000, 4);
        let a = m.forward(&w, &Tensor::from_vec(vec![1.0; 6])).unwrap();
        let b = m
            .forward(&w, &Tensor::from_vec(vec![-5.0, 2.0, 0.0, 0.0, 1.0, 9.0]))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ones_override_passes_image_branch_through() {
        let m = SpeechMod::new(toy_config(false), 5).unwrap();
        let hooks = ForwardHooks {
            question_override: Some(Tensor::filled(&[5], 1.0)),
        };
        let t = m
            .forward_traced(
                &wave(9000, 6),
                &Tensor::from_vec(vec![0.3, -0.1, 0.9, 0.0, 0.5, -0.7]),
                &hooks,
            )
            .unwrap();
        assert_eq!(&t.fused, t.image.as_ref().unwrap());
    }

    #[test]
    fn deterministic_forward() {
        let a = SpeechMod::new(toy_config(false), 7).unwrap();
        let b = SpeechMod::new(toy_config(false), 7).unwrap();
        let w = wave(12_000, 8);
        let img = Tensor::from_vec(vec![0.1; 6]);
        let pa = a.forward(&w, &img).unwrap();
        assert_eq!(pa, b.forward(&w, &img).unwrap());
        assert!((pa.probs.sum() - 1.0).abs() < 1e-12);
        assert_eq!(pa.answer_index, pa.probs.argmax());
    }

    #[test]
    fn wrong_image_dim() {
        let m = SpeechMod::new(toy_config(false), 1).unwrap();
        assert!(matches!(
            m.forward(&wave(9000, 1), &Tensor::from_vec(vec![0.0; 4])),
            Err(ModelError::ImageDim { expected: 6, got: 4 })
        ));
    }

    #[test]
    fn from_params_checks_layout() {
        let m = SpeechMod::new(toy_config(false), 1).unwrap();
        assert!(SpeechMod::from_params(toy_config(false), m.params.clone()).is_ok());
        assert!(SpeechMod::from_params(toy_config(true), m.params).is_err());
    }
}
