// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod hypotheses;
pub mod normal_form;
pub mod par;
pub mod resonance;
pub mod stats;
pub mod strips;
pub mod trig;

pub use error::{Error, Result};
