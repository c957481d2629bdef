use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{GroupKind, ParamGroup};

/// Per-sample activation shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    Image { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Shape {
    pub fn size(&self) -> usize {
        match *self {
            Shape::Image { c, h, w } => c * h * w,
            Shape::Flat(d) => d,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Image { c, h, w } => write!(f, "{c}×{h}×{w}"),
            Shape::Flat(d) => write!(f, "{d}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    MaxPool2d {
        kernel: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// Inverted dropout; identity in eval mode.
    Dropout {
        rate: f64,
    },
}

impl LayerSpec {
    pub fn conv3x3(in_ch: usize, out_ch: usize) -> Self {
        LayerSpec::Conv2d {
            in_ch,
            out_ch,
            kernel: 3,
            stride: 1,
            pad: 1,
        }
    }

    pub fn dense(inputs: usize, outputs: usize) -> Self {
        LayerSpec::Dense { inputs, outputs }
    }

    /// `(weight dim, bias dim)` for parameterized layers.
    pub fn param_dims(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Conv2d {
                in_ch, out_ch, kernel, ..
            } => Some((out_ch * in_ch * kernel * kernel, out_ch)),
            LayerSpec::Dense { inputs, outputs } => Some((inputs * outputs, outputs)),
            _ => None,
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let bad = || Error::Shape(format!("{self:?} cannot take input {input}"));
        match (*self, input) {
            (
                LayerSpec::Conv2d {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    pad,
                },
                Shape::Image { c, h, w },
            ) => {
                if c != in_ch || kernel == 0 || stride == 0 || h + 2 * pad < kernel || w + 2 * pad < kernel {
                    return Err(bad());
                }
                Ok(Shape::Image {
                    c: out_ch,
                    h: (h + 2 * pad - kernel) / stride + 1,
                    w: (w + 2 * pad - kernel) / stride + 1,
                })
            }
            (LayerSpec::MaxPool2d { kernel, stride }, Shape::Image { c, h, w }) => {
                if kernel == 0 || stride == 0 || h < kernel || w < kernel {
                    return Err(bad());
                }
                Ok(Shape::Image {
                    c,
                    h: (h - kernel) / stride + 1,
                    w: (w - kernel) / stride + 1,
                })
            }
            (LayerSpec::Flatten, s) => Ok(Shape::Flat(s.size())),
            (LayerSpec::Dense { inputs, outputs }, Shape::Flat(d)) if d == inputs && outputs > 0 => {
                Ok(Shape::Flat(outputs))
            }
            (LayerSpec::Relu, s) => Ok(s),
            (LayerSpec::Dropout { rate }, s) if (0.0..1.0).contains(&rate) => Ok(s),
            _ => Err(bad()),
        }
    }
}

/// Validated layer stack with derived parameter groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub input: Shape,
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
    #[serde(skip)]
    shapes: Vec<Shape>,
    #[serde(skip)]
    groups: Vec<ParamGroup>,
    /// Index of the weight group for each layer; the bias follows it.
    #[serde(skip)]
    group_of: Vec<Option<usize>>,
}

impl ModelSpec {
    pub fn new(name: impl Into<String>, input: Shape, classes: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        if input.size() == 0 || classes < 2 {
            return Err(Error::Shape(format!(
                "need a non-empty input and >= 2 classes, got {input} / {classes}"
            )));
        }
        let mut shapes = vec![input];
        let mut groups = Vec::new();
        let mut group_of = Vec::with_capacity(layers.len());
        let (mut n_conv, mut n_dense) = (0, 0);
        for layer in &layers {
            let next = layer.output_shape(*shapes.last().unwrap())?;
            shapes.push(next);
            match layer.param_dims() {
                Some((wd, bd)) => {
                    let (prefix, kind) = match layer {
                        LayerSpec::Conv2d { .. } => {
                            n_conv += 1;
                            (format!("conv{n_conv}"), GroupKind::ConvWeight)
                        }
                        _ => {
                            n_dense += 1;
                            (format!("fc{n_dense}"), GroupKind::DenseWeight)
                        }
                    };
                    group_of.push(Some(groups.len()));
                    groups.push(ParamGroup::new(format!("{prefix}.weight"), wd, kind));
                    groups.push(ParamGroup::new(format!("{prefix}.bias"), bd, GroupKind::Bias));
                }
                None => group_of.push(None),
            }
        }
        if *shapes.last().unwrap() != Shape::Flat(classes) {
            return Err(Error::Shape(format!(
                "model output is {}, expected {classes} logits",
                shapes.last().unwrap()
            )));
        }
        Ok(Self {
            name: name.into(),
            input,
            classes,
            layers,
            shapes,
            groups,
            group_of,
        })
    }

    /// Two 3×3 conv blocks (pad 1, 2×2 max pool), a 128-unit hidden layer
    /// with dropout 0.2, and a linear classifier, for 3×32×32 inputs.
    pub fn simple_cnn(classes: usize) -> Result<Self> {
        Self::new(
            "simple-cnn",
            Shape::Image { c: 3, h: 32, w: 32 },
            classes,
            vec![
                LayerSpec::conv3x3(3, 32),
                LayerSpec::Relu,
                LayerSpec::MaxPool2d { kernel: 2, stride: 2 },
                LayerSpec::conv3x3(32, 64),
                LayerSpec::Relu,
                LayerSpec::MaxPool2d { kernel: 2, stride: 2 },
                LayerSpec::Flatten,
                LayerSpec::dense(64 * 8 * 8, 128),
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: 0.2 },
                LayerSpec::dense(128, classes),
            ],
        )
    }

    /// Fully connected ReLU network; image inputs are flattened first.
    pub fn mlp(input: Shape, hidden: &[usize], classes: usize) -> Result<Self> {
        let mut layers = vec![LayerSpec::Flatten];
        let mut width = input.size();
        for &h in hidden {
            layers.push(LayerSpec::dense(width, h));
            layers.push(LayerSpec::Relu);
            width = h;
        }
        layers.push(LayerSpec::dense(width, classes));
        Self::new("mlp", input, classes, layers)
    }

    pub fn logistic(input: Shape, classes: usize) -> Result<Self> {
        Self::new(
            "logistic",
            input,
            classes,
            vec![LayerSpec::Flatten, LayerSpec::dense(input.size(), classes)],
        )
    }

    /// Model ids accepted in run configs: `simple-cnn`, `mlp` (one hidden
    /// layer of 128), `logistic`.
    pub fn from_id(id: &str, input: Shape, classes: usize) -> Result<Self> {
        match id {
            "simple-cnn" => {
                let spec = Self::simple_cnn(classes)?;
                if spec.input != input {
                    return Err(Error::Shape(format!("simple-cnn expects 3×32×32 inputs, got {input}")));
                }
                Ok(spec)
            }
            "mlp" => Self::mlp(input, &[128], classes),
            "logistic" => Self::logistic(input, classes),
            other => Err(Error::Config(format!(
                "unknown model `{other}` (simple-cnn, mlp, logistic)"
            ))),
        }
    }

    pub fn param_groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn param_count(&self) -> usize {
        self.groups.iter().map(|g| g.dim).sum()
    }

    /// `(layer label, parameter count)` for each parameterized layer.
    pub fn layer_param_counts(&self) -> Vec<(String, usize)> {
        self.group_of
            .iter()
            .flatten()
            .map(|&g| {
                let label = self.groups[g].id.trim_end_matches(".weight").to_string();
                (label, self.groups[g].dim + self.groups[g + 1].dim)
            })
            .collect()
    }

    /// Activation shapes, starting with the input.
    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub(crate) fn weight_group(&self, layer: usize) -> Option<usize> {
        self.group_of[layer]
    }

    /// Rebuilds derived fields after deserialization.
    pub fn revalidate(self) -> Result<Self> {
        Self::new(self.name, self.input, self.classes, self.layers)
    }
}
