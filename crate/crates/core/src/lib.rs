//! Multi-agent patrolling laboratory.
//!
//! - [`map`] and [`observe`]: grid maps, action masks and matrix observations.
//! - [`env`]: the lockstep world simulation with collisions, dynamics and
//!   battery hot-swapping.
//! - [`rewards`]: the patrol / battery / collision reward stack.
//! - [`baselines`]: conscientious-reactive, partitioning and state-exchange
//!   Bayesian strategies with a shared charging policy.
//! - [`nn`]: a small reverse-mode network kernel (conv, dense, GRU, heads).
//! - [`mappo`]: the multi-agent PPO trainer with learned messages.
//! - [`harness`]: episode runner, metrics, configuration and reports.

pub mod baselines;
pub mod env;
pub mod harness;
pub mod map;
pub mod mappo;
pub mod nn;
pub mod observe;
pub mod rewards;

/// Deterministic child seed for stream `stream` of a run seeded with `base`
/// (splitmix64 finalizer over the pair).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(17);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
