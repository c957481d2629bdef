#![allow(dead_code)]

use steinrule::nn::{Batch, LayerSpec, Mode, ModelSpec, Network, Shape};
use steinrule::tensor::Rng;

pub const PROBES: usize = 50;
pub const FD_STEP: f64 = 1e-5;

/// One finite-difference probe of a parameter coordinate.
#[derive(Clone, Copy, Debug)]
pub struct Probe {
    pub group: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    /// `|a − n| / max(|a|, |n|)`, with the denominator floored at 1e-7 so
    /// gradients that are zero up to rounding compare as absolute errors.
    pub fn rel_err(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs()).max(1e-7);
        (self.analytic - self.numeric).abs() / scale
    }
}

/// A small network exercising one layer type, named after that layer.
pub struct GradCase {
    pub layer: &'static str,
    pub spec: ModelSpec,
    /// Parameter groups to probe.
    pub groups: Vec<usize>,
    pub mode: Mode,
}

fn conv(cin: usize, cout: usize, stride: usize, pad: usize) -> LayerSpec {
    LayerSpec::Conv2d {
        in_ch: cin,
        out_ch: cout,
        kernel: 3,
        stride,
        pad,
    }
}

pub fn grad_cases() -> Vec<GradCase> {
    let img = Shape::Image { c: 2, h: 6, w: 6 };
    let flat = Shape::Flat(5);
    let train = Mode::Train { dropout_seed: 11 };
    let case = |layer, spec: steinrule::Result<ModelSpec>, groups: Vec<usize>, mode| GradCase {
        layer,
        spec: spec.expect("valid test model"),
        groups,
        mode,
    };
    vec![
        case(
            "conv2d",
            ModelSpec::new(
                "conv",
                img,
                3,
                vec![
                    conv(2, 3, 1, 1),
                    conv(3, 2, 2, 1),
                    LayerSpec::Flatten,
                    LayerSpec::dense(18, 3),
                ],
            ),
            vec![0, 1, 2, 3],
            Mode::Eval,
        ),
        case(
            "dense",
            ModelSpec::new("dense", flat, 3, vec![LayerSpec::dense(5, 6), LayerSpec::dense(6, 3)]),
            vec![0, 1, 2, 3],
            Mode::Eval,
        ),
        case(
            "relu",
            ModelSpec::new(
                "relu",
                flat,
                3,
                vec![LayerSpec::dense(5, 8), LayerSpec::Relu, LayerSpec::dense(8, 3)],
            ),
            vec![0, 1],
            Mode::Eval,
        ),
        case(
            "maxpool2d",
            ModelSpec::new(
                "pool",
                img,
                3,
                vec![
                    conv(2, 2, 1, 1),
                    LayerSpec::MaxPool2d { kernel: 2, stride: 2 },
                    LayerSpec::Flatten,
                    LayerSpec::dense(18, 3),
                ],
            ),
            vec![0, 1],
            Mode::Eval,
        ),
        case(
            "flatten",
            ModelSpec::new(
                "flatten",
                Shape::Image { c: 2, h: 3, w: 3 },
                3,
                vec![conv(2, 2, 1, 1), LayerSpec::Flatten, LayerSpec::dense(18, 3)],
            ),
            vec![0, 1],
            Mode::Eval,
        ),
        case(
            "dropout",
            ModelSpec::new(
                "dropout",
                flat,
                3,
                vec![
                    LayerSpec::dense(5, 8),
                    LayerSpec::Dropout { rate: 0.3 },
                    LayerSpec::dense(8, 3),
                ],
            ),
            vec![0, 1],
            train,
        ),
        case(
            "softmax-xent",
            ModelSpec::new("logistic", flat, 4, vec![LayerSpec::dense(5, 4)]),
            vec![0, 1],
            Mode::Eval,
        ),
    ]
}

pub fn random_batch(shape: Shape, classes: usize, n: usize, seed: u64) -> Batch<f64> {
    let mut rng = Rng::new(seed);
    let inputs = (0..n * shape.size()).map(|_| rng.normal()).collect();
    let labels = (0..n).map(|_| rng.below(classes)).collect();
    Batch::new(inputs, shape, labels, classes).expect("valid batch")
}

/// Central-difference probes of `PROBES` random coordinates drawn from the
/// case's parameter groups.
pub fn grad_check(case: &GradCase, seed: u64) -> Vec<Probe> {
    let net = Network::<f64>::init(case.spec.clone(), seed);
    let batch = random_batch(case.spec.input, case.spec.classes, 4, seed ^ 0x5eed);
    let analytic = net.loss_and_grad(&batch, case.mode).expect("finite loss").grads;
    let loss = |n: &Network<f64>| n.loss_and_grad(&batch, case.mode).expect("finite loss").loss;

    let mut rng = Rng::new(seed.wrapping_add(1));
    let mut probes = Vec::with_capacity(PROBES);
    for _ in 0..PROBES {
        let group = case.groups[rng.below(case.groups.len())];
        let index = rng.below(net.params()[group].len());
        let mut plus = net.clone();
        plus.params_mut()[group][index] += FD_STEP;
        let mut minus = net.clone();
        minus.params_mut()[group][index] -= FD_STEP;
        probes.push(Probe {
            group,
            index,
            analytic: analytic[group][index],
            numeric: (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP),
        });
    }
    probes
}
