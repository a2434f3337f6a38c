//! Built-in forward models.

pub mod fv;
pub mod linear_gaussian;
pub mod source;
pub mod surrogate;

pub use source::{cd_forward, CaseConfig, Engine, FieldBank, Profile, SourceModel};
