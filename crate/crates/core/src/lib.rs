//! Speech-based visual question answering laboratory.
//!
//! Two models answer questions about images: [`models::SpeechMod`] reads the
//! raw question waveform through a 1-D conv stack and an LSTM, while
//! [`models::TextMod`] reads token indices (from text or from an external
//! speech recognizer's transcripts). Both fuse the question encoding with a
//! precomputed image feature by element-wise multiplication and classify
//! over a fixed answer vocabulary.
//!
//! Around the models sit the audio corruption protocol, WER scoring,
//! dataset handling and the evaluation harness used for noise sweeps,
//! zero-shot and blind runs.

pub mod audio;
pub mod corruption;
pub mod dataset;
pub mod harness;
pub mod models;
pub mod tensor;
pub mod text;
