use std::fmt;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

/// Parameter group used by update regimes to decide what may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    ConvWeight,
    BnAffine,
    Classifier,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 3] = [ParamGroup::ConvWeight, ParamGroup::BnAffine, ParamGroup::Classifier];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::ConvWeight => "conv_weight",
            ParamGroup::BnAffine => "bn_affine",
            ParamGroup::Classifier => "classifier",
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParameterTag {
    pub group: ParamGroup,
    /// Dotted hierarchical name, unique within a model.
    pub layer_path: String,
}

/// A trainable array together with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param {
    pub tag: ParameterTag,
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
}

impl Param {
    pub fn new(group: ParamGroup, layer_path: impl Into<String>, value: ArrayD<f64>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Param {
            tag: ParameterTag {
                group,
                layer_path: layer_path.into(),
            },
            value,
            grad,
        }
    }

    pub fn scalar(group: ParamGroup, layer_path: impl Into<String>, value: f64) -> Self {
        Self::new(group, layer_path, ArrayD::from_elem(IxDyn(&[1]), value))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}
