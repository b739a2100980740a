//! Classifiers mapping feature rows to distance classes.

pub mod gbdt;
pub mod ridge;

pub use gbdt::{
    distance_from_proba, find_best_split, gbdt_train, log_loss, split_threshold, GbdtConfig, GbdtModel, Node, Split,
    SplitParams, TieBreak, Tree,
};
pub use ridge::{ridge_predict, ridge_train, ridge_train_loo, AlphaChoice, RidgeClassifier, RidgeModel};
