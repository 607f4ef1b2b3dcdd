//! Probes for given-name grounding artifacts in language models.
//!
//! The crate measures four effects of a model treating a bare given name as a
//! reference to one specific person:
//!
//! * [`grounding`]: does greedy decoding after a given name produce the
//!   surname of a famous bearer?
//! * [`recovery`]: can a classifier tell which name an "`[NAME]` is a" ending
//!   was generated for?
//! * [`sentiment`]: which names receive the most negative endings?
//! * [`swap`]: does exchanging two names in a reading-comprehension probe
//!   change which role the model's answer refers to?
//!
//! Models are reached through the traits in [`lm`] and [`swap`]; every probe
//! can run offline against the scripted mocks shipped in [`lm::mock`] and
//! [`swap::mock`].

pub mod audit;
pub mod error;
pub mod grounding;
pub mod lm;
pub mod namebank;
pub mod par;
pub mod recovery;
pub mod report;
pub mod seed;
pub mod sentiment;
pub mod stats;
pub mod swap;
pub mod textml;

pub use error::{Error, Result};
