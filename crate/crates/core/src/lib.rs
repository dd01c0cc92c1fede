//! Distributed time allocation for satellites observing ground grids under
//! visibility windows, solved as a potential game.

pub mod actions;
pub mod error;
pub mod io;
pub mod learning;
pub mod model;
pub mod multistage;
pub mod oracle;
pub mod potential;

pub use error::{Error, Result};
