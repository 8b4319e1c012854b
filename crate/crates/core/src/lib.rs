//! Asynchronous multiparty session types with asymmetric mixed choice.
//!
//! The pipeline is: [`frontend::parse`] a protocol, [`validation::validate`]
//! it, [`projection::derive_system`] the local system, then run it with
//! [`local_lts`] or check it against the global semantics with [`verify`].

pub mod commit;
pub mod corpus;
pub mod efsm;
pub mod frontend;
pub mod global_lts;
pub mod local_lts;
pub mod model;
pub mod projection;
pub mod validation;
pub mod verify;

pub use frontend::{parse, Protocol};
pub use model::*;
