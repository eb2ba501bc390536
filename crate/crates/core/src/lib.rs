pub mod cells;
pub mod config;
pub mod ehr;
pub mod entmax;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod params;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;
