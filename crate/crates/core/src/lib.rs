pub mod autodiff;
pub mod cli;
pub mod config;
pub mod features;
pub mod model;
pub mod pipeline;
