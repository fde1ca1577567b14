//! Belief-space reach-to-grasp planning under 6D object-pose uncertainty.
//!
//! The object is known only as an oriented point cloud. Its pose is tracked
//! as a weighted particle set initialised by surflet-pair registration, and
//! reach-to-grasp trajectories are planned on a lazy probabilistic roadmap
//! whose edge costs can be discounted where the expected tactile
//! observations of competing pose hypotheses disagree. Unexpected contacts
//! during execution update the belief and trigger re-planning.

pub mod belief;
pub mod cloud;
pub mod contact;
pub mod error;
pub mod kdtree;
pub mod kinematics;
pub mod planner;
pub mod registration;
pub mod se3;
pub mod sim;
pub mod tactile;

pub use error::{Error, Result};
pub use se3::{Pose6D, SE3Kernel, SE3Metric};

/// Child seed derived from a parent seed and a stream label (SplitMix64).
pub fn derive_seed(parent: u64, stream: u64) -> u64 {
    let mut z = parent ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn rng_from_seed(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
