use std::sync::Arc;

use sasvr::acquisition::{synthesize_pair, ParamRanges, SamplePair, SliceProtocol};
use sasvr::dataio::make_phantom;
use sasvr::network::ModelConfig;

pub fn tiny() -> ModelConfig {
    ModelConfig {
        k: 3,
        volume_shape: [12, 8, 10],
        hidden_dim: 8,
        heads: 2,
        layers: 2,
        ffn_dim: 16,
        with_attention: true,
        encoder_widths: [4, 4, 8, 8],
        regressor_blocks: 2,
        regressor_width: 8,
        cardinality: 4,
        slice_kernel: 3,
    }
}

/// `n` pairs cut from one phantom sized for `c`.
pub fn pairs(c: &ModelConfig, n: usize, seed: u64) -> Vec<SamplePair> {
    let vol = Arc::new(make_phantom(c.volume_shape, seed).unwrap());
    let proto = SliceProtocol::new(c.k, c.depth()).unwrap();
    (0..n).map(|i| synthesize_pair(&vol, seed * 100 + i as u64, &ParamRanges::default(), &proto).unwrap()).collect()
}
