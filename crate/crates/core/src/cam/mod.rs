//! Class activation maps and their aggregation into image-level predictions.

mod aggregate;
mod network;

pub use aggregate::{
    build_pmf, gap_predict, gmp_predict, importance_draws, importance_sample, pseudo_label,
    sample_indices, ClassPmf,
};
pub use network::{
    activation_from_logits, forward_cam, ActivationMap, BoundNetwork, CamNetwork, NetworkShape,
};
