//! Ensembles of LDA topic models across resolutions, topic alignment between
//! them, and path-based diagnostics of topic stability.
//!
//! A typical pipeline:
//!
//! 1. load or simulate a [`corpus::CountMatrix`];
//! 2. fit one model per K with [`lda::fit_ensemble`];
//! 3. align, reorder and score with [`report::analyze`];
//! 4. export with [`report::AlignmentDocument`], [`report::scores_csv`] and
//!    [`svg::render_flow`].

pub mod alignment;
pub mod cli;
pub mod corpus;
pub mod diagnostics;
pub mod experiment;
pub mod lda;
pub mod measures;
pub mod report;
pub mod rng;
pub mod simulate;
pub mod svg;
pub mod transport;

use thiserror::Error;

pub use alignment::{align_ensemble, AlignmentGraph, Method};
pub use corpus::{CorpusError, CountMatrix};
pub use lda::{fit_ensemble, fit_lda, GibbsConfig, LdaHyperparams, ModelEnsemble, TopicModel};
pub use rng::SeededRng;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Lda(#[from] lda::LdaError),
    #[error(transparent)]
    Measure(#[from] measures::MeasureError),
    #[error(transparent)]
    Transport(#[from] transport::TransportError),
    #[error(transparent)]
    Align(#[from] alignment::AlignError),
    #[error(transparent)]
    Diagnostics(#[from] diagnostics::DiagnosticsError),
    #[error(transparent)]
    Simulation(#[from] simulate::SimError),
}

impl Error {
    /// Process exit code: 2 for bad arguments or configuration, 3 for bad or
    /// unreadable data, 4 for internal failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Simulation(_) | Error::Lda(lda::LdaError::InvalidConfig(_)) => 2,
            Error::Transport(transport::TransportError::TooLarge(_)) => 4,
            _ => 3,
        }
    }
}
