//! Benchmark-only crate; see `benches/`.

use offload_core::ShardedOptimizer;

/// Seeded optimizer with `n` subgroups of `size` parameters.
pub fn optimizer(n: usize, size: usize) -> ShardedOptimizer {
    ShardedOptimizer::seeded(&vec![size; n], 7).expect("positive sizes")
}
