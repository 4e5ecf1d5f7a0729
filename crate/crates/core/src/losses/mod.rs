//! Training objectives: the convex combination of pooled and sampled
//! classification losses, and the feature similarity loss.

mod classification;
mod similarity;

pub use classification::{bce_multi, cls_loss, total_loss, ClsLossConfig, Pooling, BCE_EPS};
pub use similarity::{
    fsl, fsl_with_sigma, gauss_weight, pixel_dissimilarity, similarity_logit, BoundFsl, FslParams,
    DELTA_EPS,
};
