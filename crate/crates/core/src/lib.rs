pub mod autotune;
pub mod dense;
pub mod error;
pub mod exactsum;
pub mod gridcomm;
pub mod hit;
pub mod msgnet;
pub mod procgrid;
pub mod report;
pub mod sept;
pub mod solver;
pub mod trd;

pub use error::{Error, Phase, Result};
