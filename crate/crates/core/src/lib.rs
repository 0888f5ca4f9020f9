pub mod algos;
pub mod baselines;
pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod metrics;
pub mod neural;
pub mod pricing;
pub mod rng;
pub mod rollout;
pub mod sim;
