pub mod analysis;
pub mod config;
pub mod data;
pub mod dynamics;
pub mod model;
pub mod observation;
pub mod sampler;
pub mod synth;
pub mod validate;
