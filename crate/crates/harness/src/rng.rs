//! Seeded generators for experiment cells.
//!
//! Every cell draws from `ChaCha8Rng::seed_from_u64(seed)` on its own stream,
//! numbered by the cell's position in the experiment grid. Streams are
//! disjoint, so a cell's draws do not depend on which thread runs it or in
//! what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn cell_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
