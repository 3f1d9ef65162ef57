//! Blinding assessment for two-arm trials with repeated blinding
//! questionnaires.
//!
//! * [`tables`]: subject data, derived contingency tables, chi-square tests
//! * [`stat_kernel`]: distribution functions, DK trend test, normality tests
//! * [`indices`]: James blinding index, DK share, unblinding apportionment
//! * [`marginal_homogeneity`]: generalized McNemar test between timepoints
//! * [`mean_score`]: weighted least squares on mean blinding scores
//! * [`polylogit`]: baseline-category logistic regression on time
//! * [`resample`]: seeded Monte-Carlo study of the index

pub mod error;
pub mod indices;
pub mod marginal_homogeneity;
pub mod mean_score;
pub mod polylogit;
pub mod resample;
pub mod stat_kernel;
pub mod tables;
pub mod warning;

pub use error::{Error, Result};
