//! Fake news detection over elementary discourse units.
//!
//! Documents are segmented into EDUs, linked by a typed discourse graph,
//! encoded by a bidirectional GRU, and classified by a model that fuses a
//! convolutional sequence branch with a relational graph attention branch
//! before GRU-based global attention.

#![allow(clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod corpus;
pub mod discourse;
pub mod segmenter;
pub mod tensor;
pub mod model;
pub mod parallel;
pub mod pipeline;
pub mod evaluation;
pub mod training;
