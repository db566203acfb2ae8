//! Fisher Vector image classification: dense SIFT, PCA, diagonal GMM,
//! Fisher encoding and one-vs-rest linear classifiers.

pub mod classifier;
pub mod encode;
pub mod gmm;
pub mod model;
pub mod pca;
pub mod sift;

pub use classifier::{train_classifier, LinearClassifier, SvmOptions};
pub use encode::{descriptor_mapping, encode_fv, fv_index, fv_position, normalize_fv, FisherVector, Moment};
pub use gmm::{fit_gmm, fit_gmm_with, gmm_posterior, GmmFit, GmmModel, GmmOptions};
pub use model::{load_fv_model, save_fv_model, train_fv, EncodedImage, FvModel, FvTrainConfig, TrainReport};
pub use pca::{fit_pca, PcaModel};
pub use sift::{extract_dense_sift, LocalDescriptor, Rect, SiftConfig};
