pub mod error;
pub mod estimation;
pub mod experiment;
pub mod instances;
pub mod mdp;
pub mod membership;
pub mod metrics;
pub mod oracle;
pub mod trajectory;

pub use error::{Error, Result};
