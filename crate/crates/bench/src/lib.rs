//! Shared fixtures for the criterion benches.

use steinrule::data::{synth_dataset, CIFAR_SHAPE};
use steinrule::nn::{Batch, ModelSpec, Network};
use steinrule::tensor::{gauss_vec, ParamGroup, ParamVector, Rng};

/// SimpleCNN parameter groups with a random parameter and gradient vector
/// per group.
pub fn cnn_state(seed: u64) -> (Vec<ParamGroup>, Vec<ParamVector>, Vec<ParamVector>) {
    let spec = ModelSpec::simple_cnn(10).expect("valid model");
    let groups = spec.param_groups().to_vec();
    let mut rng = Rng::new(seed);
    let params = groups
        .iter()
        .map(|g| gauss_vec(&mut rng, g.dim, 0.0, 0.05).expect("dim > 0"))
        .collect();
    let grads = groups
        .iter()
        .map(|g| gauss_vec(&mut rng, g.dim, 0.0, 0.01).expect("dim > 0"))
        .collect();
    (groups, params, grads)
}

/// A freshly initialised network and a synthetic CIFAR-shaped batch.
pub fn cnn_batch(batch: usize, seed: u64) -> (Network<f32>, Batch<f32>) {
    let spec = ModelSpec::simple_cnn(10).expect("valid model");
    let net = Network::init(spec, seed);
    let data = synth_dataset(batch, CIFAR_SHAPE, 10, seed).expect("synthetic data");
    (net, data.all().expect("batch"))
}
