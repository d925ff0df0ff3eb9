//! Five-conv / four-pool pyramid that turns a waveform into a short
//! sequence of feature vectors.

use serde::{Deserialize, Serialize};

use super::{ModelError, Result};
use crate::tensor::ops::window_output_len;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub filters: usize,
    pub length: usize,
    pub stride: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub size: usize,
    pub stride: usize,
}

/// How conv padding is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Use each layer's fixed `pad_left` / `pad_right`.
    #[default]
    Fixed,
    /// Pad per input so the output length is `ceil(L / stride)`.
    Same,
}

impl std::str::FromStr for Padding {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fixed" | "symmetric" => Ok(Self::Fixed),
            "same" => Ok(Self::Same),
            other => Err(format!("unknown padding `{other}` (fixed|same)")),
        }
    }
}

/// Conv layers interleaved with pools: conv, pool, conv, pool, ..., conv.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStackSpec {
    pub convs: Vec<ConvLayerSpec>,
    pub pools: Vec<PoolSpec>,
    pub padding: Padding,
}

impl Default for ConvStackSpec {
    /// Filters 32..512, lengths 64..4, conv stride 2, pools 4/4. Padding is
    /// `(length - 2) / 2` per side so every conv halves its input exactly.
    fn default() -> Self {
        Self::with_filters([32, 64, 128, 256, 512])
    }
}

impl ConvStackSpec {
    pub const LENGTHS: [usize; 5] = [64, 32, 16, 8, 4];

    /// Default geometry with different channel counts.
    pub fn with_filters(filters: [usize; 5]) -> Self {
        let convs = filters
            .iter()
            .zip(Self::LENGTHS)
            .map(|(&f, k)| ConvLayerSpec {
                filters: f,
                length: k,
                stride: 2,
                pad_left: (k - 2) / 2,
                pad_right: (k - 2) / 2,
            })
            .collect();
        Self {
            convs,
            pools: vec![PoolSpec { size: 4, stride: 4 }; 4],
            padding: Padding::Fixed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.convs.is_empty() || self.pools.len() + 1 != self.convs.len() {
            return Err(ModelError::Config(format!(
                "conv stack needs n convs and n-1 pools, got {} and {}",
                self.convs.len(),
                self.pools.len()
            )));
        }
        if self
            .convs
            .iter()
            .any(|c| c.filters == 0 || c.length == 0 || c.stride == 0)
            || self.pools.iter().any(|p| p.size == 0 || p.stride == 0)
        {
            return Err(ModelError::Config("conv stack sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        self.convs.last().map_or(0, |c| c.filters)
    }

    /// Padding actually applied to a conv layer for an input of `len`.
    pub fn conv_padding(&self, layer: usize, len: usize) -> (usize, usize) {
        let c = &self.convs[layer];
        match self.padding {
            Padding::Fixed => (c.pad_left, c.pad_right),
            Padding::Same => {
                let out = len.div_ceil(c.stride);
                let total = ((out.saturating_sub(1)) * c.stride + c.length).saturating_sub(len);
                (total / 2, total - total / 2)
            }
        }
    }

    /// Output length after each layer in order conv1, pool1, ..., conv5.
    pub fn layer_lengths(&self, input_len: usize) -> Result<Vec<usize>> {
        self.validate()?;
        let mut lengths = Vec::with_capacity(self.convs.len() * 2 - 1);
        let mut len = input_len;
        for (i, conv) in self.convs.iter().enumerate() {
            let (pl, pr) = self.conv_padding(i, len);
            len = window_output_len(len, conv.length, conv.stride, pl, pr).ok_or(ModelError::InputTooShort {
                len: input_len,
                min: self.min_input_len(),
            })?;
            lengths.push(len);
            if let Some(pool) = self.pools.get(i) {
                len = window_output_len(len, pool.size, pool.stride, 0, 0).ok_or(ModelError::InputTooShort {
                    len: input_len,
                    min: self.min_input_len(),
                })?;
                lengths.push(len);
            }
        }
        Ok(lengths)
    }

    /// Final sequence length `x`.
    pub fn output_len(&self, input_len: usize) -> Result<usize> {
        Ok(*self.layer_lengths(input_len)?.last().expect("non-empty stack"))
    }

    /// Shortest input producing at least one output frame.
    pub fn min_input_len(&self) -> usize {
        // lengths are monotone in the input, so binary search the first fit
        let fits = |l: usize| self.layer_lengths_unchecked(l).is_some();
        let mut hi = 1usize;
        while !fits(hi) {
            hi *= 2;
            if hi > 1 << 40 {
                return usize::MAX;
            }
        }
        let mut lo = hi / 2;
        while lo + 1 < hi {
            let mid = (lo + hi) / 2;
            if fits(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    fn layer_lengths_unchecked(&self, input_len: usize) -> Option<usize> {
        let mut len = input_len;
        for (i, conv) in self.convs.iter().enumerate() {
            let (pl, pr) = self.conv_padding(i, len);
            len = window_output_len(len, conv.length, conv.stride, pl, pr)?;
            if let Some(pool) = self.pools.get(i) {
                len = window_output_len(len, pool.size, pool.stride, 0, 0)?;
            }
        }
        (len >= 1).then_some(len)
    }

    /// Scalar parameter count of the conv layers for a single input channel.
    pub fn parameter_count(&self) -> usize {
        let mut cin = 1;
        let mut total = 0;
        for c in &self.convs {
            total += c.length * cin * c.filters + c.filters;
            cin = c.filters;
        }
        total
    }
}
