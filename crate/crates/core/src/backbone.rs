//! Feature extractors. Every trainable array carries a [`ParameterTag`] so
//! update regimes can select parameter groups by tag.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{
    backward_seq, forward_seq, global_avg_pool, global_avg_pool_backward, infer_seq, seq_output_shape,
};
use crate::nn::{BatchNorm2d, BnMode, Conv2d, Layer, MaxPool2d, Param, ParameterTag, Residual};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "reference-convnet")]
    ReferenceConvnet,
    #[serde(rename = "resnet-18")]
    ResNet18,
    #[serde(rename = "resnet-34")]
    ResNet34,
    #[serde(rename = "resnet-50")]
    ResNet50,
    #[serde(rename = "resnet-101")]
    ResNet101,
    #[serde(rename = "resnet-152")]
    ResNet152,
    #[serde(rename = "vgg16-gap")]
    Vgg16Gap,
}

impl Architecture {
    pub const ALL: [Architecture; 7] = [
        Architecture::ReferenceConvnet,
        Architecture::ResNet18,
        Architecture::ResNet34,
        Architecture::ResNet50,
        Architecture::ResNet101,
        Architecture::ResNet152,
        Architecture::Vgg16Gap,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Architecture::ReferenceConvnet => "reference-convnet",
            Architecture::ResNet18 => "resnet-18",
            Architecture::ResNet34 => "resnet-34",
            Architecture::ResNet50 => "resnet-50",
            Architecture::ResNet101 => "resnet-101",
            Architecture::ResNet152 => "resnet-152",
            Architecture::Vgg16Gap => "vgg16-gap",
        }
    }

    /// Width of the pooled feature vector.
    pub fn feature_dim(self) -> usize {
        match self {
            Architecture::ReferenceConvnet => 64,
            Architecture::ResNet18 | Architecture::ResNet34 | Architecture::Vgg16Gap => 512,
            Architecture::ResNet50 | Architecture::ResNet101 | Architecture::ResNet152 => 2048,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.id() == s)
            .ok_or_else(|| Error::UnknownArchitecture(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub architecture: Architecture,
    pub input_resolution: usize,
    pub feature_dim: usize,
}

impl BackboneSpec {
    pub fn new(architecture: Architecture, input_resolution: usize) -> Self {
        BackboneSpec {
            architecture,
            input_resolution,
            feature_dim: architecture.feature_dim(),
        }
    }

    pub fn parse(architecture: &str, input_resolution: usize) -> Result<Self> {
        Ok(Self::new(architecture.parse()?, input_resolution))
    }
}

/// Convolutional trunk followed by global average pooling.
#[derive(Debug, Clone)]
pub struct Backbone {
    spec: BackboneSpec,
    layers: Vec<Layer>,
    pooled_hw: Option<(usize, usize)>,
}

fn conv_bn_relu<R: rand::Rng>(
    path: &str,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    rng: &mut R,
) -> Vec<Layer> {
    vec![
        Layer::Conv(Conv2d::new(
            &format!("{path}.conv"),
            cin,
            cout,
            k,
            stride,
            pad,
            false,
            rng,
        )),
        Layer::BatchNorm(BatchNorm2d::new(&format!("{path}.bn"), cout)),
        Layer::relu(),
    ]
}

fn reference_convnet<R: rand::Rng>(rng: &mut R) -> Vec<Layer> {
    let mut layers = Vec::new();
    let mut cin = 3;
    for block in 1..=4 {
        layers.extend(conv_bn_relu(&format!("backbone.block{block}"), cin, 64, 3, 1, 1, rng));
        layers.push(Layer::MaxPool(MaxPool2d::new(2, 2, 0)));
        cin = 64;
    }
    layers
}

fn resnet<R: rand::Rng>(blocks: [usize; 4], bottleneck: bool, rng: &mut R) -> Vec<Layer> {
    let mut layers = conv_bn_relu("backbone.stem", 3, 64, 7, 2, 3, rng);
    layers.push(Layer::MaxPool(MaxPool2d::new(3, 2, 1)));
    let expansion = if bottleneck { 4 } else { 1 };
    let mut cin = 64;
    for (stage, (&count, width)) in blocks.iter().zip([64, 128, 256, 512]).enumerate() {
        for b in 0..count {
            let stride = if stage > 0 && b == 0 { 2 } else { 1 };
            let path = format!("backbone.layer{}.{b}", stage + 1);
            let cout = width * expansion;
            let conv = |name: &str, ci, co, k, s, p, rng: &mut R| {
                Layer::Conv(Conv2d::new(&format!("{path}.{name}"), ci, co, k, s, p, false, rng))
            };
            let bn = |name: &str, c| Layer::BatchNorm(BatchNorm2d::new(&format!("{path}.{name}"), c));
            let body = if bottleneck {
                vec![
                    conv("conv1", cin, width, 1, 1, 0, rng),
                    bn("bn1", width),
                    Layer::relu(),
                    conv("conv2", width, width, 3, stride, 1, rng),
                    bn("bn2", width),
                    Layer::relu(),
                    conv("conv3", width, cout, 1, 1, 0, rng),
                    bn("bn3", cout),
                ]
            } else {
                vec![
                    conv("conv1", cin, width, 3, stride, 1, rng),
                    bn("bn1", width),
                    Layer::relu(),
                    conv("conv2", width, width, 3, 1, 1, rng),
                    bn("bn2", width),
                ]
            };
            let shortcut = if stride != 1 || cin != cout {
                vec![
                    conv("downsample.conv", cin, cout, 1, stride, 0, rng),
                    bn("downsample.bn", cout),
                ]
            } else {
                Vec::new()
            };
            layers.push(Layer::Residual(Box::new(Residual::new(body, shortcut))));
            cin = cout;
        }
    }
    layers
}

fn vgg16_gap<R: rand::Rng>(rng: &mut R) -> Vec<Layer> {
    // The last max-pool is dropped; global average pooling follows the trunk.
    const CFG: [usize; 17] = [
        64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512,
    ];
    let mut layers = Vec::new();
    let mut cin = 3;
    for (i, &c) in CFG.iter().enumerate() {
        if c == 0 {
            layers.push(Layer::MaxPool(MaxPool2d::new(2, 2, 0)));
        } else {
            let path = format!("backbone.features.{i}.conv");
            layers.push(Layer::Conv(Conv2d::new(&path, cin, c, 3, 1, 1, true, rng)));
            layers.push(Layer::relu());
            cin = c;
        }
    }
    layers
}

/// Builds a freshly initialized backbone: He-uniform conv weights, BN
/// `gamma = 1`, `beta = 0`. Deterministic in `seed`.
pub fn build_backbone(spec: &BackboneSpec, seed: u64) -> Result<Backbone> {
    if spec.feature_dim != spec.architecture.feature_dim() {
        return Err(Error::Shape(format!(
            "{} produces {}-dimensional features, declared feature_dim is {}",
            spec.architecture,
            spec.architecture.feature_dim(),
            spec.feature_dim
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = match spec.architecture {
        Architecture::ReferenceConvnet => reference_convnet(&mut rng),
        Architecture::ResNet18 => resnet([2, 2, 2, 2], false, &mut rng),
        Architecture::ResNet34 => resnet([3, 4, 6, 3], false, &mut rng),
        Architecture::ResNet50 => resnet([3, 4, 6, 3], true, &mut rng),
        Architecture::ResNet101 => resnet([3, 4, 23, 3], true, &mut rng),
        Architecture::ResNet152 => resnet([3, 8, 36, 3], true, &mut rng),
        Architecture::Vgg16Gap => vgg16_gap(&mut rng),
    };
    let backbone = Backbone {
        spec: spec.clone(),
        layers,
        pooled_hw: None,
    };
    let r = spec.input_resolution;
    backbone.check_input(3, r, r)?;
    Ok(backbone)
}

impl Backbone {
    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim
    }

    fn check_input(&self, c: usize, h: usize, w: usize) -> Result<(usize, usize)> {
        if c != 3 {
            return Err(Error::Shape(format!("expected 3 input channels, got {c}")));
        }
        match seq_output_shape(&self.layers, c, h, w) {
            Some((d, ho, wo)) if d == self.spec.feature_dim && ho > 0 && wo > 0 => Ok((ho, wo)),
            _ => Err(Error::Shape(format!(
                "{h}x{w} input is too small for {}",
                self.spec.architecture
            ))),
        }
    }

    /// Eval-mode features `[B, d]`, using running BN statistics.
    pub fn extract_features(&self, batch: &Array4<f64>) -> Result<Array2<f64>> {
        let (_, c, h, w) = batch.dim();
        self.check_input(c, h, w)?;
        Ok(global_avg_pool(&infer_seq(&self.layers, batch.clone())))
    }

    /// Recorded forward pass for training.
    pub fn forward(&mut self, batch: Array4<f64>, bn: BnMode) -> Result<Array2<f64>> {
        let (_, c, h, w) = batch.dim();
        self.check_input(c, h, w)?;
        let fmap = forward_seq(&mut self.layers, batch, bn);
        let (_, _, fh, fw) = fmap.dim();
        self.pooled_hw = Some((fh, fw));
        Ok(global_avg_pool(&fmap))
    }

    /// Accumulates gradients for every backbone parameter.
    pub fn backward(&mut self, grad_features: &Array2<f64>, need_input_grad: bool) -> Option<Array4<f64>> {
        let (h, w) = self.pooled_hw.take().expect("backbone backward without forward");
        let g = global_avg_pool_backward(grad_features, h, w);
        backward_seq(&mut self.layers, g, need_input_grad)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        self.layers.iter().for_each(|l| l.visit_params(&mut out));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        self.layers.iter_mut().for_each(|l| l.visit_params_mut(&mut out));
        out
    }

    pub fn batch_norms(&self) -> Vec<&BatchNorm2d> {
        let mut out = Vec::new();
        self.layers.iter().for_each(|l| l.visit_batch_norms(&mut out));
        out
    }

    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm2d> {
        let mut out = Vec::new();
        self.layers.iter_mut().for_each(|l| l.visit_batch_norms_mut(&mut out));
        out
    }

    pub fn list_parameters(&self) -> Vec<(ParameterTag, &Param)> {
        self.params().into_iter().map(|p| (p.tag.clone(), p)).collect()
    }

    /// Drops recorded activations.
    pub fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
        self.pooled_hw = None;
    }
}
