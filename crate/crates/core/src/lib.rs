//! Geometry of the log-determinant cone
//!
//! `K = cl{ (x, y, Z) : y > 0, Z > 0, x <= y log det(Z / y) }`
//!
//! together with its dual cone, its complete list of faces, the facial
//! residual functions that control distances to those faces, and
//! error-bound certificates for conic feasibility problems over `K`.

pub mod cone;
pub mod error;
pub mod experiments;
pub mod faces;
pub mod frf;
pub mod linalg;
pub mod reduction;

pub use error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random stream `index` derived from `seed`. Parallel loops
/// draw sample `i` from `stream_rng(seed, i)`, so results do not depend on
/// the number of threads.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
