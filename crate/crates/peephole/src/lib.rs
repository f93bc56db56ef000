//! Peephole predicts the final validation accuracy of a convolutional
//! network from its layer structure alone, before any training happens.
//!
//! Architectures are flattened into a sequence of integer layer codes
//! ([`layercode`]), consumed by an LSTM whose final hidden state is combined
//! with an epoch embedding and mapped through a small MLP to an accuracy in
//! (0, 1) ([`predictor`]). The [`generator`] module samples random but
//! trainable CNN skeletons via a Markov chain over layer types, and
//! [`harness`] labels them with a synthetic accuracy oracle, trains the
//! predictor, and scores it (MSE, Kendall tau, R²). All numerics live in
//! [`neuralcore`], a small hand-rolled f64 autodiff-free core with explicit
//! backward passes and a finite-difference gradient checker.
//!
//! Every code path is deterministic for a fixed seed, including the
//! parallel ones.

pub mod generator;
pub mod harness;
pub mod layercode;
pub mod neuralcore;
pub mod predictor;
