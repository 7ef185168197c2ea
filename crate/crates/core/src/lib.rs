//! Data-collaboration analysis with non-readily identifiable intermediate
//! representations.
//!
//! Parties never share raw rows. Each one reduces its data with a private,
//! randomized, row-wise map, permutes the rows, and uploads the result
//! together with the image of a common anchor dataset. The master aligns the
//! parties through an SVD of the stacked anchor images, trains one model in
//! the aligned space and returns predictions on the anchor rows; each party
//! then distills a local model from those anchor predictions.

pub mod error;
pub mod anchor;
pub mod audit;
pub mod dataio;
pub mod master;
pub mod matrixkit;
pub mod netproto;
pub mod pipeline;
pub mod worker;

pub use error::{Error, Result};
