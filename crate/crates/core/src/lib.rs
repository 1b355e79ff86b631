pub mod autodiff;
pub mod cli;
pub mod features;
pub mod graph;
pub mod modality;
pub mod model;
pub mod segment;
pub mod synth;
pub mod train;

pub use modality::Modality;
