//! Building blocks for polite, compliance-aware collection of geolocated
//! real-estate listings and their downstream quality checks and models.

// `!(a < b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clock;
pub mod compliance;
pub mod extractor;
pub mod fetcher;
pub mod geo;
pub mod model;
pub mod net;
pub mod quality;
pub mod sitegen;
