//! Teacher-student embedding distillation for text classification.
//!
//! A classifier over large word vectors (the teacher) supervises a student
//! that reads the same vectors through a small projection stack. Once the
//! student is trained, every vocabulary row is pushed through the projection
//! once, and the resulting small table replaces the large table and the
//! projection at deployment.
//!
//! The crate covers the numerical core ([`math`]), file formats ([`data`]),
//! the model family ([`models`]), matching losses ([`distill`]), autoencoder
//! pretraining ([`autoencoder`]), multi-teacher routing ([`ensemble`]),
//! training and experiments ([`pipeline`]), and embedding analysis
//! ([`analysis`]). [`synth`] generates a labeled corpus with known structure.

pub mod analysis;
pub mod autoencoder;
pub mod data;
pub mod distill;
pub mod ensemble;
mod error;
pub mod math;
pub mod models;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/routing.md")]
    mod routing {}
    #[doc = include_str!("../../../book/src/student.md")]
    mod student {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
