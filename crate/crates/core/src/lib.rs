//! Speech-based classification of medication state (ON/OFF) in Parkinson's
//! disease, with the evaluation protocol used to score it.
//!
//! - [`corpus`]: manifests and feature files
//! - [`features`]: utterance statistics, standardization, PCA
//! - [`svm`]: linear SVM
//! - [`adnn`]: attention-based sequence classifier
//! - [`harness`]: folds, nested cross-validation, metrics, reports
//! - [`synth`]: synthetic cohorts with a known ceiling

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adnn;
pub mod corpus;
pub mod error;
pub mod features;
pub mod harness;
pub mod svm;
pub mod synth;

pub use error::{Error, Result};

// The guide's code blocks run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/svm.md")]
    mod svm {}
    #[doc = include_str!("../../../book/src/adnn.md")]
    mod adnn {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
