pub mod cvae;
pub mod error;
pub mod eventlog;
pub mod generate;
pub mod metrics;
pub mod nn;
pub mod preprocess;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/event-logs.md")]
    struct EventLogs;
    #[doc = include_str!("../../../book/src/model.md")]
    struct Model;
    #[doc = include_str!("../../../book/src/generation.md")]
    struct Generation;
    #[doc = include_str!("../../../book/src/metrics.md")]
    struct Metrics;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
    #[doc = include_str!("../../../book/src/datasets.md")]
    struct Datasets;
}
