#![cfg_attr(not(feature = "std"), no_std)]
// `!(a > b)` is used deliberately so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod bootstrap;
pub mod calibrate;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod lasso;
pub mod matrix;
pub mod mle;
pub mod optimize;
mod par;
pub mod pipeline;
pub mod projection;
pub mod rng;
pub mod screening;
pub mod simulate;
pub mod stability;
