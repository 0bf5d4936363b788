pub mod autodiff;
pub mod dataset;
pub mod env;
pub mod error;
pub mod lang;
pub mod mem;
pub mod rl;
pub mod shaping;
pub mod state_enc;
pub mod tsne;

pub use error::{Error, Result};
