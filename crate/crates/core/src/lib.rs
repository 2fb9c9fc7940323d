//! # faceaudit
//!
//! Tools for auditing female/male accuracy differences in face-verification
//! data.
//!
//! - [`corpus`]: dataset files, validation and filtered views
//! - [`scorekit`]: genuine/impostor score distributions, d-prime, FMR/FNMR
//! - [`maskmetrics`]: face masks, face-visibility heatmaps and level masks
//! - [`equalize`]: stencil masking and IoU-based female/male image pairing
//! - [`facespace`]: eigenface PCA, variance curves and reconstruction-error selection
//! - [`synthlab`]: seeded synthetic cohorts with controllable variance and occlusion
//!
//! Everything that draws random numbers takes an explicit seed, and every
//! parallel stage merges partial results in a fixed order, so outputs do not
//! depend on the number of worker threads.

pub mod corpus;
pub mod equalize;
pub mod error;
pub mod facespace;
pub mod linalg;
pub mod maskmetrics;
pub mod scorekit;
pub mod synthlab;

pub use corpus::{load_dataset, save_dataset, Dataset, DatasetView, Filter, Gender, ImageRecord};
pub use error::{Error, Result};

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    use std::fmt::Write as _;
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Runs `f` on a pool of `workers` threads (0 = runtime default).
pub(crate) fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    if workers == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
