//! Multi-teacher single-student attribute prediction.
//!
//! One teacher per attribute type learns an embedding network together with a
//! dictionary of class centres using a focal ranking loss. A single student
//! with a shared backbone and one projection branch per type is then trained
//! on unlabeled images to reproduce the teachers' embeddings, and predicts
//! every attribute type from one forward pass by ranking each type's
//! dictionary.

pub mod config;
pub mod data;
pub mod embeddings;
pub mod error;
pub mod evaluate;
pub mod experiment;
pub mod inference;
pub mod losses;
pub mod nn;
pub mod parallel;
pub mod rng;
pub mod schema;
pub mod student;
pub mod synthdata;
pub mod teacher;

pub use error::{Error, Result};
