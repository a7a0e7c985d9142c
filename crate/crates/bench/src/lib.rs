//! Fixtures shared by the benchmarks.

use fed_unroll_core::lista::{init_layer, InitMode};
use fed_unroll_core::{
    build_dataset, generate_sensing_matrix, Batch, Dataset, LayerParams, MagnitudeDist, NetworkParams,
    SensingMatrix,
};

pub struct Fixture {
    pub a: SensingMatrix,
    pub data: Dataset,
    pub batch: Batch,
    pub net: NetworkParams,
}

/// An `depth`-layer ISTA-initialized network on an `m x n` problem with
/// `samples` training pairs.
pub fn fixture(m: usize, n: usize, depth: usize, samples: usize) -> Fixture {
    let a = generate_sensing_matrix(m, n, 1).expect("valid dims");
    let data = build_dataset(&a, samples, 0.1, &MagnitudeDist::default(), 2).expect("dataset");
    let init = InitMode::Ista { lambda: 0.1, step: None, noise: 0.0 };
    let layers = (0..depth)
        .map(|i| init_layer(m, n, Some(&a), &init, i as u64).expect("layer"))
        .collect();
    let net = NetworkParams::from_layers(m, n, layers).expect("network");
    let batch = Batch::from_dataset(&data);
    Fixture { a, data, batch, net }
}

/// `k` random layers to aggregate.
pub fn client_layers(m: usize, n: usize, k: usize) -> Vec<LayerParams> {
    (0..k)
        .map(|i| init_layer(m, n, None, &InitMode::Random { scale: 0.1 }, 100 + i as u64).expect("layer"))
        .collect()
}
