#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_op_in_unsafe_fn)]

extern crate alloc;

pub mod analysis;
pub mod arch;
pub mod checkpoint;
pub mod fid;
pub mod error;
pub mod model;
pub mod search;
pub mod seed;
pub mod synth;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Graph, Scalar, Tensor, Var};
