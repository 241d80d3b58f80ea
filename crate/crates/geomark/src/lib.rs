//! GeoMark: geometry-aware localized watermarking for embedding services.
//!
//! The crate bundles the watermarking core (target selection, farthest point
//! sampling anchors, adaptive radii, localized injection), ownership
//! verification (one-sided two-sample KS test over cosine similarities), a
//! watermark-removal attack suite (CSE, dimension shift/reduction, simulated
//! paraphrasing), a desk-scale model-extraction simulator, file persistence,
//! an embedding-proxy HTTP service, and a sweep harness. The `geomark` binary
//! drives the full pipeline from the command line.

pub mod error;
pub mod extraction;
pub mod vecmath;
pub mod verification;
pub mod watermark;

pub use error::{Error, Result};
pub use vecmath::{ComponentBasis, Vector};
pub use watermark::{AnchorStrategy, EmbeddingSet, ProtectionOutcome, SecretParams, WatermarkSecret};

/// Splitmix64 step, used to derive independent seeded streams from one
/// user-facing seed without correlating them.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
