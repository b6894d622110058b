//! Seeded synthetic model generation.
//!
//! Trained acoustic-model weights are not distributable, so benchmarks and
//! tests run on Gaussian weights whose per-tensor scales mirror the dynamic
//! ranges observed in real LSTM layers (input matrices span a few units,
//! recurrent/projection weights stay under one).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::matrix::DenseMatrix;
use crate::model::{LayerConfig, LstmModel, LstmParams, Peepholes};

/// Standard deviations per tensor class.
const SIGMA_INPUT: f64 = 1.2;
const SIGMA_RECURRENT: f64 = 0.15;
const SIGMA_BIAS: f64 = 0.5;
const SIGMA_PEEPHOLE: f64 = 0.2;
const SIGMA_PROJECTION: f64 = 0.2;

/// The 1024-hidden benchmark layer used throughout the performance studies.
pub fn benchmark_config() -> LayerConfig {
    LayerConfig {
        input_dim: 153,
        hidden_dim: 1024,
        proj_dim: 512,
        has_peephole: true,
        has_projection: true,
    }
}

fn gauss_vec(rng: &mut ChaCha8Rng, n: usize, sigma: f64) -> Vec<f64> {
    let dist = Normal::new(0.0, sigma).expect("sigma is positive");
    (0..n).map(|_| dist.sample(rng)).collect()
}

fn gauss_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sigma: f64) -> DenseMatrix {
    DenseMatrix::new(rows, cols, gauss_vec(rng, rows * cols, sigma)).expect("finite gaussians")
}

/// Deterministic random parameters for a config; same seed, same bits.
pub fn random_params(seed: u64, config: LayerConfig) -> LstmParams {
    config.validate().expect("valid config");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = config.hidden_dim;
    let params = LstmParams {
        config,
        w_ix: gauss_mat(&mut rng, h, config.input_dim, SIGMA_INPUT),
        w_fx: gauss_mat(&mut rng, h, config.input_dim, SIGMA_INPUT),
        w_cx: gauss_mat(&mut rng, h, config.input_dim, SIGMA_INPUT),
        w_ox: gauss_mat(&mut rng, h, config.input_dim, SIGMA_INPUT),
        w_ir: gauss_mat(&mut rng, h, config.proj_dim, SIGMA_RECURRENT),
        w_fr: gauss_mat(&mut rng, h, config.proj_dim, SIGMA_RECURRENT),
        w_cr: gauss_mat(&mut rng, h, config.proj_dim, SIGMA_RECURRENT),
        w_or: gauss_mat(&mut rng, h, config.proj_dim, SIGMA_RECURRENT),
        peephole: config.has_peephole.then(|| Peepholes {
            w_ic: gauss_vec(&mut rng, h, SIGMA_PEEPHOLE),
            w_fc: gauss_vec(&mut rng, h, SIGMA_PEEPHOLE),
            w_oc: gauss_vec(&mut rng, h, SIGMA_PEEPHOLE),
        }),
        b_i: gauss_vec(&mut rng, h, SIGMA_BIAS),
        b_f: gauss_vec(&mut rng, h, SIGMA_BIAS),
        b_c: gauss_vec(&mut rng, h, SIGMA_BIAS),
        b_o: gauss_vec(&mut rng, h, SIGMA_BIAS),
        w_ym: config
            .has_projection
            .then(|| gauss_mat(&mut rng, config.proj_dim, h, SIGMA_PROJECTION)),
    };
    debug_assert!(params.validate().is_ok());
    params
}

/// One-layer random model at the benchmark dimensions.
pub fn benchmark_model(seed: u64) -> LstmModel {
    LstmModel {
        layers: vec![random_params(seed, benchmark_config())],
    }
}
