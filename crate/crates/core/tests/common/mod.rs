#![allow(dead_code)]

use std::sync::Arc;

use fsf::backbone::{Architecture, BackboneSpec};
use fsf::classifier::{softmax_cross_entropy, HeadKind};
use fsf::data::{ClassSection, Image, SyntheticSpec};
use fsf::model::Model;
use fsf::nn::{BnMode, ParamGroup};
use ndarray::{Array4, ArrayD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn class_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i}")).collect()
}

pub fn reference_model(head: HeadKind, classes: usize, resolution: usize, seed: u64) -> Model {
    Model::new(
        &BackboneSpec::new(Architecture::ReferenceConvnet, resolution),
        head,
        class_ids(classes),
        seed,
    )
    .unwrap()
}

pub fn synthetic(n_classes: usize, per_class: usize, seed: u64) -> ClassSection<Arc<Image>> {
    fsf::data::make_synthetic_dataset(&SyntheticSpec::new(n_classes, per_class, 32, seed)).unwrap()
}

/// Every parameter value (by layer path) plus BN running statistics.
pub fn full_state(model: &Model) -> Vec<(String, ArrayD<f64>)> {
    let mut out: Vec<(String, ArrayD<f64>)> = model
        .params()
        .into_iter()
        .map(|p| (p.tag.layer_path.clone(), p.value.clone()))
        .collect();
    for bn in model.backbone.batch_norms() {
        out.push((
            format!("{}#mean", bn.gamma.tag.layer_path),
            bn.running_mean.clone().into_dyn(),
        ));
        out.push((
            format!("{}#var", bn.gamma.tag.layer_path),
            bn.running_var.clone().into_dyn(),
        ));
    }
    out
}

/// Train-mode (batch statistics) cross-entropy of `model` on `x`.
fn loss_at(model: &Model, x: &Array4<f64>, labels: &[usize]) -> f64 {
    let mut m = model.clone();
    let z = m.backbone.forward(x.clone(), BnMode::Batch).unwrap();
    let logits = m.head.forward(z.view()).unwrap();
    softmax_cross_entropy(&logits, labels).0
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub path: String,
    pub group: ParamGroup,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Central differences with step `h` on `coords_per_tensor` random entries
/// of every parameter tensor, against the model's backward pass.
/// Relative error is `|a - n| / max(|a|, |n|, floor)`.
pub fn gradient_check(seed: u64, h: f64, coords_per_tensor: usize, floor: f64) -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = 3;
    let mut model = reference_model(HeadKind::Normalized, classes, 16, seed);
    let batch = 4;
    let x = Array4::from_shape_simple_fn((batch, 3, 16, 16), || rng.random_range(-2.0..2.0));
    let labels: Vec<usize> = (0..batch).map(|i| i % classes).collect();

    model.zero_grad();
    model.loss_and_grad(x.clone(), &labels, BnMode::Batch, true).unwrap();
    let analytic: Vec<(String, ParamGroup, ArrayD<f64>)> = model
        .params()
        .into_iter()
        .map(|p| (p.tag.layer_path.clone(), p.tag.group, p.grad.clone()))
        .collect();
    model.zero_grad();
    model.clear_cache();

    let mut out = Vec::new();
    for (pi, (path, group, grad)) in analytic.iter().enumerate() {
        let n = grad.len();
        let picks: Vec<usize> = if n <= coords_per_tensor {
            (0..n).collect()
        } else {
            rand::seq::index::sample(&mut rng, n, coords_per_tensor).into_vec()
        };
        for idx in picks {
            let eval = |delta: f64| {
                let mut m = model.clone();
                let mut params = m.params_mut();
                let v = params[pi].value.as_slice_mut().expect("contiguous");
                v[idx] += delta;
                drop(params);
                loss_at(&m, &x, &labels)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = grad.as_slice().expect("contiguous")[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            out.push(GradCheck {
                path: path.clone(),
                group: *group,
                index: idx,
                analytic: a,
                numeric,
                rel_error: rel,
            });
        }
    }
    out
}
