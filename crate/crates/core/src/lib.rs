pub mod ablation;
pub mod cli;
pub mod corpus;
pub mod dsp;
pub mod interpret;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod training;
