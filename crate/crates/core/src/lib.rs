//! Unsupervised insider-trading surveillance over daily per-investor
//! transaction panels.
//!
//! Two complementary pipelines are provided:
//!
//! * **Discontinuity detection** ([`features`], [`kmeans`],
//!   [`discontinuity`]): investors are placed in a three-dimensional
//!   feature space (signed turnover, magnitudo, maximum exposure) per rolling
//!   window, clustered with a dynamic k-means whose labels are kept stable
//!   across windows, and those who jump into the cluster closest to the
//!   rewarding corner without having belonged to it before are ranked.
//! * **Ring detection** ([`svn`], [`community`], [`rings`], [`bicm`]):
//!   buy/sell/mixed trading states are projected onto a trader co-occurrence
//!   multigraph, links are validated against a hypergeometric (or BiCM)
//!   null with multiple-testing control, communities are extracted with a
//!   map-equation optimizer and clusters trading synchronously in the
//!   rewarding direction are flagged.
//!
//! [`synth`] generates schema-compatible panels with planted insiders and
//! rings for end-to-end evaluation.
//!
//! The crate is `no_std` (with `alloc`). Enabling the `parallel` feature
//! pulls in `std` and rayon; results are identical with and without it.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod bicm;
pub mod community;
pub mod discontinuity;
mod error;
pub mod exec;
pub mod features;
pub mod kmeans;
pub mod math;
pub mod panel;
pub mod pipeline;
pub mod rings;
pub mod stats;
pub mod svn;
pub mod synth;

pub use error::{Error, Result};
