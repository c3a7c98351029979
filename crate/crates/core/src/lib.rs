//! Structure-aware language modelling over HTML DOM trees.
//!
//! The pipeline cleans an HTML page into a [`dom::DomTree`], tokenizes each
//! node, slices the tree into budget-bounded connected windows, linearizes
//! each window with six tree-position features per token, and trains a small
//! transformer with token and whole-node masking. Task heads cover attribute
//! extraction, open information extraction and span question answering.

pub mod corpus;
pub mod dom;
pub mod encoder;
pub mod experiment;
pub mod heads;
pub mod linearizer;
pub mod masker;
pub mod metrics;
pub mod pipeline;
pub mod tensor;
pub mod testing;
pub mod text;
pub mod tokenizer;
pub mod train;
pub mod windower;
