pub mod cli;
pub mod evalkit;
pub mod geom;
pub mod graph;
pub mod optim;
pub mod oracle;
pub mod pairwise;
mod stats;
