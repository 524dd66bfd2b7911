// SPDX-License-Identifier: Apache-2.0
pub mod dag;
pub mod error;
pub mod glasso;
pub mod inference;
pub mod io;
pub mod lasso;
pub mod linalg;
pub mod model;
pub mod nodewise;
pub mod simbench;
pub mod stats;

pub use error::{Error, Result};
