use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Image shape, channel-last. Flattened pixel index is `(y * width + x) * channels + c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InputDims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl InputDims {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    /// A flat vector input of `n` features.
    pub fn flat(n: usize) -> Self {
        Self::new(1, n, 1)
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerSpec {
    Dense {
        width: usize,
    },
    /// Valid (unpadded) stride-1 convolution with square `kernel`.
    Conv {
        filters: usize,
        kernel: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    /// No nonlinearity; makes the hidden stack linear. Mostly useful for tests.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetConfig {
    pub input: InputDims,
    pub hidden: Vec<LayerSpec>,
    pub num_classes: usize,
    pub activation: Activation,
    pub seed: u64,
}

/// Resolved geometry of one trainable layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LayerShape {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv {
        input: InputDims,
        filters: usize,
        kernel: usize,
    },
}

impl LayerShape {
    pub fn in_len(&self) -> usize {
        match *self {
            LayerShape::Dense { inputs, .. } => inputs,
            LayerShape::Conv { input, .. } => input.len(),
        }
    }

    pub fn out_len(&self) -> usize {
        match *self {
            LayerShape::Dense { outputs, .. } => outputs,
            LayerShape::Conv { input, filters, kernel } => {
                (input.height - kernel + 1) * (input.width - kernel + 1) * filters
            }
        }
    }

    /// (rows, cols) of the weight matrix.
    pub fn weight_shape(&self) -> (usize, usize) {
        match *self {
            LayerShape::Dense { inputs, outputs } => (outputs, inputs),
            LayerShape::Conv { input, filters, kernel } => (filters, kernel * kernel * input.channels),
        }
    }

    pub fn bias_len(&self) -> usize {
        self.weight_shape().0
    }

    pub fn fan_in(&self) -> usize {
        self.weight_shape().1
    }
}

impl NetConfig {
    /// Dense-only network on flat inputs.
    pub fn dense(inputs: usize, hidden: &[usize], num_classes: usize, seed: u64) -> Self {
        Self {
            input: InputDims::flat(inputs),
            hidden: hidden.iter().map(|&width| LayerSpec::Dense { width }).collect(),
            num_classes,
            activation: Activation::Relu,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input.is_empty() {
            return Err(Error::config(format!("input dims {:?} must all be >= 1", self.input)));
        }
        if self.num_classes < 2 {
            return Err(Error::config(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        for (i, layer) in self.hidden.iter().enumerate() {
            match *layer {
                LayerSpec::Dense { width: 0 } => {
                    return Err(Error::config(format!("hidden layer {i}: width must be >= 1")));
                }
                LayerSpec::Conv { filters, kernel } => {
                    if i != 0 {
                        return Err(Error::config(
                            "a convolution is only supported as the first hidden layer",
                        ));
                    }
                    if filters == 0 || kernel == 0 {
                        return Err(Error::config("convolution filters and kernel must be >= 1"));
                    }
                    if kernel > self.input.height || kernel > self.input.width {
                        return Err(Error::config(format!(
                            "kernel {kernel} larger than input {}x{}",
                            self.input.height, self.input.width
                        )));
                    }
                }
                LayerSpec::Dense { .. } => {}
            }
        }
        Ok(())
    }

    /// Shapes of every trainable layer, final classifier layer included.
    pub(crate) fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut shapes = Vec::with_capacity(self.hidden.len() + 1);
        let mut width = self.input.len();
        for layer in &self.hidden {
            let shape = match *layer {
                LayerSpec::Dense { width: outputs } => LayerShape::Dense { inputs: width, outputs },
                LayerSpec::Conv { filters, kernel } => LayerShape::Conv {
                    input: self.input,
                    filters,
                    kernel,
                },
            };
            width = shape.out_len();
            shapes.push(shape);
        }
        shapes.push(LayerShape::Dense {
            inputs: width,
            outputs: self.num_classes,
        });
        shapes
    }

    /// Width of the penultimate layer, i.e. the input width of the classifier.
    pub fn feature_dim(&self) -> usize {
        self.layer_shapes().last().map(LayerShape::in_len).unwrap_or(0)
    }
}
