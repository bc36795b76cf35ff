//! MKID single-photon analysis: resonance and gap fits, IQ calibration,
//! pulse triggering, optimum filtering and photon-number spectra, with a
//! seeded generator of synthetic inputs for each stage.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod gapfit;
pub mod io;
pub mod iqcal;
pub mod lm;
pub mod numeric;
pub mod optfilter;
pub mod physics;
pub mod pulse;
pub mod resonance;
pub mod spectrum;
pub mod synthgen;
