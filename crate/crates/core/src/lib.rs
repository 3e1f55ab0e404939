//! From-scratch deep-learning text classification of flight-phase
//! narratives: ingestion, text preprocessing, four neural architectures
//! with hand-written backpropagation, training, evaluation, and
//! deterministic artifacts.

pub mod artifacts;
pub mod cli;
pub mod eval;
pub mod ingest;
pub mod nncore;
pub mod optim;
pub mod synth;
pub mod textprep;
pub mod train;
