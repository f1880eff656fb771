pub mod codec;
pub mod data;
pub mod defer;
pub mod error;
pub mod experiment;
pub mod models;
pub mod numeric;
pub mod riskcal;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
