//! Electrode-layout optimization for EMG gesture recognition.
//!
//! Given a multi-channel gesture dataset, the crate ranks electrodes by how
//! informative they are, sweeps layout sizes under stratified cross-validation
//! and picks the layout that minimizes the sparsity score
//! `w1 * (100 - accuracy) + w2 * electrode_count`. A stencil generator maps the
//! chosen layout onto a user's forearm measurements.
//!
//! ```
//! use sparseemg::dataset::{generate_synthetic, SyntheticSpec};
//! use sparseemg::classifiers::ClassifierSpec;
//! use sparseemg::selection::Scheme;
//! use sparseemg::sweep::{run_sweep, SparsityConfig, SweepOptions};
//!
//! let spec = SyntheticSpec {
//!     channel_count: 8,
//!     gesture_count: 3,
//!     users: 1,
//!     trials_per_gesture: 8,
//!     samples_per_trial: 60,
//!     informative_channels: vec![1, 6],
//!     noise_sigma: 0.05,
//!     seed: 3,
//! };
//! let (manifest, trials) = generate_synthetic(&spec).unwrap();
//! let candidates: Vec<usize> = manifest.electrodes.iter().map(|e| e.id).collect();
//! let result = run_sweep(
//!     &trials,
//!     &candidates,
//!     Scheme::RmsImportance,
//!     &ClassifierSpec::random_forest(11),
//!     &SparsityConfig::default(),
//!     &SweepOptions::new(20, 11),
//! )
//! .unwrap();
//! assert_eq!(result.points.len(), 7);
//! assert_eq!(result.chosen.electrode_count, 2);
//! ```

pub mod classifiers;
pub mod dataset;
pub mod error;
pub mod features;
pub mod rng;
pub mod selection;
pub mod stencil;
pub mod sweep;

pub use error::{Error, Result};

/// Electrode index within a dataset (`0..channel_count`).
pub type ElectrodeId = usize;
/// Gesture identifier as declared in the manifest.
pub type GestureId = u32;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/ranking.md")]
    mod ranking {}
    #[doc = include_str!("../../../book/src/classifiers.md")]
    mod classifiers {}
    #[doc = include_str!("../../../book/src/sparsity.md")]
    mod sparsity {}
    #[doc = include_str!("../../../book/src/transfer-and-bands.md")]
    mod transfer_and_bands {}
    #[doc = include_str!("../../../book/src/stencil.md")]
    mod stencil {}
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    mod reproducibility {}
}
