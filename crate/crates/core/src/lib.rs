//! Model ownership resolution arena.

pub mod arena;
pub mod attack;
pub mod data;
pub mod defense;
pub mod error;
pub mod models;
pub mod protocol;
pub mod schemes;
pub mod tensor;

pub use error::{Error, Result};
