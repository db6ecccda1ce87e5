//! Architect-builder emergent communication at desk scale.
//!
//! A reward-blind builder acts in a block grid world; an action-less architect
//! sees the task reward and can only send discrete messages. The two learn a
//! shared protocol by alternating *modeling* frames (the architect fits a
//! model of the builder from uniformly-messaged interactions) and *guiding*
//! frames (the architect plans messages with MCTS through that model and the
//! builder imitates the guided interactions).

pub mod abig;
pub mod agents;
pub mod buildworld;
pub mod error;
pub mod evalkit;
pub mod mcts;
pub mod par;
pub mod tinynn;

pub use error::{Error, Result};
