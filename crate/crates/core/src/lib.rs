//! Inversion-symmetric digit classification: a small tanh MLP trained from scratch,
//! inversion-invariant feature maps, and probes of the symmetrized loss.

pub mod data;
pub mod error;
pub mod experiments;
pub mod features;
pub mod nn;
pub mod persist;
pub mod render;
pub mod symmetry;
pub mod train;

pub use data::{
    augment_shifts, load_optdigits, parse_optdigits, split, symmetrize, Dataset, DatasetManifest, GrayImage,
    RawDigits, BACKGROUND, PIXELS, SIDE,
};
pub use error::{Error, Result};
pub use experiments::{
    accuracy, bound_check, prepare_splits, reproduce_tables, run_row, Accuracy, BandVerdict, BoundReport,
    EvalReport, RowSpec, Splits, Table, TableReport, TrainVariant,
};
pub use features::{
    apply_feature_map, apply_group, is_closed_group, make_permutation, FeatureMap, FeatureMapKind, GroupElement,
    Permutation,
};
pub use nn::{argmax, cross_entropy_loss, softmax, unique_argmin, Layer, Mlp, DIGIT_ARCHITECTURE, NUM_CLASSES};
pub use persist::{load_model, save_model, ModelFile};
pub use train::{grad_check, train, FeatureDataset, TrainConfig, TrainOutcome};
