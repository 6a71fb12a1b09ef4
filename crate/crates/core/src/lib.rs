//! Surname-based race/gender bias measurement for language models playing the
//! Trust Game.

pub mod backend;
pub mod census;
pub mod probe;
pub mod race;
pub mod stats;
pub mod template;
pub mod trust_game;
pub mod experiment;
pub mod plot;
pub mod config;
pub mod commands;
pub mod error;

pub use error::Error;
