pub mod cli;
pub mod diagnostics;
pub mod dp;
pub mod error;
pub mod grid;
pub mod kl_tilt;
pub mod reverse_kl;
pub mod sample_model;
pub mod screening;
