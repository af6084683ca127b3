//! SPAM features and a Fisher-discriminant ensemble for detecting stego
//! images.

mod ensemble;
mod eval;
mod spam;

pub use ensemble::{classify, train_ensemble, BaseLearner, EnsembleConfig, EnsembleModel, Label};
pub use eval::{
    evaluate_pe, image_features, split_detection_error, vote_scores, PeEstimate, PeSetup,
};
pub use spam::{spam_features, SpamFeatures, DEFAULT_T};
