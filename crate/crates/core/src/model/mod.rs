//! The generative demand model: truncated-normal quantities whose location
//! is linear in day, region, product and lagged-sales features, with
//! hierarchical Gaussian / LKJ / half-Cauchy priors on the weights.

mod density;
mod hyper;
mod params;
mod sampling;
pub mod truncnorm;

pub use density::{
    half_cauchy_logpdf, inv_gamma_logpdf, lkj_corr_cholesky_logpdf, lkj_log_normalizer, mvn_chol_logpdf, normal_logpdf,
    DemandModel, LikelihoodGrad,
};
pub(crate) use hyper::cholesky;
pub use hyper::Hyperparams;
pub use params::{
    corr_cholesky_from_unconstrained, corr_cholesky_to_unconstrained, pack, unpack, ModelParams, ParamLayout,
};
pub use sampling::{mean_quantity, predictive_quantity, sample_lkj_cholesky, sample_prior};
pub use truncnorm::{sample_trunc_normal, trunc_normal_logpdf, trunc_normal_mean};
