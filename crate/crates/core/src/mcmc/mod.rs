//! Metropolis-Hastings posterior sampling and the MCMC ideal observer.

pub mod engine;
pub mod io;
pub mod posterior;

pub use engine::{
    acceptance_probability, read_trace, run_chain, ChainConfig, ChainTrace, Evaluation, GaussianRandomWalk, Proposal,
    Target, TraceSink, TraceWriter,
};
pub use io::{
    log_lambda_bske, mcmc_io_ideal_estimate, mcmc_io_likelihood_ratio, sample_background_h0, sample_h1_posterior,
    McmcSettings,
};
pub use posterior::{
    default_proposal_std, log_likelihood, sample_posterior_theta, sample_posterior_theta_alpha,
    utility_weighted_posterior_mean, AlphaMoves, BackgroundPosterior, JointPosterior, ThetaPosterior,
};
