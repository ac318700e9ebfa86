#![allow(dead_code)]
// `!(a < b)` in checks is deliberate: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod criteria;
pub mod dotcheck;
pub mod graphs;
pub mod isolation;
pub mod oracle;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
