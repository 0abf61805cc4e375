//! Tick-slab continuous-thought runtime: perception, a recurrent reasoning
//! core with adaptive halting, parallel branch consensus, affect-modulated
//! thresholds, JSON-RPC tool routing and bounded actuation.

pub mod actuator;
pub mod affect;
pub mod consensus;
pub mod ctm;
pub mod harness;
pub mod model;
pub mod perception;
pub mod router;
pub mod tensor;
pub mod weights;

pub use model::{Config, Model, WeightSource};
