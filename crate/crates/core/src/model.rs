use ndarray::{Array2, Array4, Axis};

use crate::backbone::{build_backbone, Backbone, BackboneSpec};
use crate::classifier::{
    group_by_label, init_simple_svm, softmax_cross_entropy, Head, HeadKind, NormalizedClassifier, SimpleClassifier,
    SvmConfig,
};
use crate::error::{Error, Result};
use crate::nn::{BnMode, Param, ParamGroup, ParameterTag};

/// Rows per inference chunk.
const INFER_CHUNK: usize = 64;

/// Backbone plus classification head. `Clone` forks an independent copy.
#[derive(Debug, Clone)]
pub struct Model {
    pub backbone: Backbone,
    pub head: Head,
}

/// Outcome of one differentiable step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub correct: usize,
    pub batch_size: usize,
}

impl Model {
    /// Fresh backbone plus randomly initialized head over `class_ids`.
    pub fn new(spec: &BackboneSpec, head: HeadKind, class_ids: Vec<String>, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        let backbone = build_backbone(spec, seed)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(crate::util::mix_seed(seed, &[0x4ead]));
        let d = backbone.feature_dim();
        let head = match head {
            HeadKind::Normalized => Head::Normalized(NormalizedClassifier::random(d, class_ids, &mut rng)?),
            HeadKind::Simple => Head::Simple(SimpleClassifier::random(d, class_ids, &mut rng)?),
        };
        Ok(Model { backbone, head })
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = self.backbone.params();
        p.extend(self.head.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let Model { backbone, head } = self;
        let mut p = backbone.params_mut();
        p.extend(head.params_mut());
        p
    }

    /// Every trainable parameter with its tag.
    pub fn list_parameters(&self) -> Vec<(ParameterTag, &Param)> {
        self.params().into_iter().map(|p| (p.tag.clone(), p)).collect()
    }

    pub fn has_group(&self, group: ParamGroup) -> bool {
        self.params().iter().any(|p| p.tag.group == group)
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn clear_cache(&mut self) {
        self.backbone.clear_cache();
        self.head.clear_cache();
    }

    /// Eval-mode features, computed in fixed-size chunks.
    pub fn features(&self, batch: &Array4<f64>) -> Result<Array2<f64>> {
        let n = batch.dim().0;
        if n <= INFER_CHUNK {
            return self.backbone.extract_features(batch);
        }
        let parts = (0..n)
            .step_by(INFER_CHUNK)
            .map(|s| {
                let chunk = batch
                    .slice(ndarray::s![s..(s + INFER_CHUNK).min(n), .., .., ..])
                    .to_owned();
                self.backbone.extract_features(&chunk)
            })
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
    }

    /// Eval-mode logits.
    pub fn logits(&self, batch: &Array4<f64>) -> Result<Array2<f64>> {
        self.head.logits(self.features(batch)?.view())
    }

    /// Forward + backward on one batch. Gradients accumulate into every
    /// parameter's `grad`; the backbone pass is skipped when
    /// `backbone_grad` is false. BN running statistics update whenever
    /// `bn` is [`BnMode::Batch`].
    pub fn loss_and_grad(
        &mut self,
        batch: Array4<f64>,
        labels: &[usize],
        bn: BnMode,
        backbone_grad: bool,
    ) -> Result<StepStats> {
        let n = batch.dim().0;
        if n != labels.len() {
            return Err(Error::Shape(format!("{n} images but {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.head.num_classes()) {
            return Err(Error::HeadMismatch(format!(
                "label {bad} but head has {} classes",
                self.head.num_classes()
            )));
        }
        let z = self.backbone.forward(batch, bn)?;
        let logits = self.head.forward(z.view())?;
        let (loss, grad) = softmax_cross_entropy(&logits, labels);
        let correct = crate::classifier::predict_rows(logits.view())
            .iter()
            .zip(labels)
            .filter(|(p, l)| p == l)
            .count();
        let dz = self.head.backward(&grad);
        if backbone_grad {
            self.backbone.backward(&dz, false);
        } else {
            self.backbone.clear_cache();
        }
        Ok(StepStats {
            loss,
            correct,
            batch_size: n,
        })
    }

    /// Replaces the head with one over `class_ids`, initialized from support
    /// features: imprinted columns (scale carried over) for the normalized
    /// head, a one-vs-rest SVM for the simple head.
    pub fn reset_head_for_novel(
        &mut self,
        support_features: &Array2<f64>,
        labels: &[usize],
        class_ids: &[String],
        svm: &SvmConfig,
    ) -> Result<()> {
        self.head = match &self.head {
            Head::Normalized(old) => {
                let grouped = group_by_label(support_features.view(), labels, class_ids)?;
                Head::Normalized(NormalizedClassifier::imprinted(&grouped, old.scale_value())?)
            }
            Head::Simple(_) => {
                let (w, b, _) = init_simple_svm(support_features.view(), labels, class_ids.len(), svm)?;
                Head::Simple(SimpleClassifier::new(w, b, class_ids.to_vec())?)
            }
        };
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::Architecture;
    use crate::classifier::predict_rows;
    use rand::{Rng, SeedableRng};

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    fn model(head: HeadKind, classes: usize) -> Model {
        Model::new(
            &BackboneSpec::new(Architecture::ReferenceConvnet, 32),
            head,
            ids(classes),
            3,
        )
        .unwrap()
    }

    #[test]
    fn attached_head_is_the_classifier_group() {
        for kind in [HeadKind::Normalized, HeadKind::Simple] {
            let m = model(kind, 64);
            let head_paths: Vec<_> = m
                .list_parameters()
                .into_iter()
                .filter(|(t, _)| t.group == ParamGroup::Classifier)
                .map(|(t, _)| t.layer_path)
                .collect();
            let expected: Vec<_> = m.head.params().iter().map(|p| p.tag.layer_path.clone()).collect();
            assert_eq!(head_paths, expected);
        }
    }

    #[test]
    fn reset_shrinks_head_and_is_deterministic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let feats = Array2::from_shape_simple_fn((25, 64), || rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..25).map(|i| i / 5).collect();
        for kind in [HeadKind::Normalized, HeadKind::Simple] {
            let mut a = model(kind, 64);
            let mut b = a.clone();
            a.reset_head_for_novel(&feats, &labels, &ids(5), &SvmConfig::default())
                .unwrap();
            b.reset_head_for_novel(&feats, &labels, &ids(5), &SvmConfig::default())
                .unwrap();
            assert_eq!(a.head.num_classes(), 5);
            let pa: Vec<_> = a.head.params().iter().map(|p| p.value.clone()).collect();
            let pb: Vec<_> = b.head.params().iter().map(|p| p.value.clone()).collect();
            assert_eq!(pa, pb);
        }
    }

    #[test]
    fn one_shot_imprinting_classifies_support() {
        let mut m = model(HeadKind::Normalized, 10);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let images = Array4::from_shape_simple_fn((5, 3, 32, 32), || rng.random_range(-2.0..2.0));
        let feats = m.features(&images).unwrap();
        m.reset_head_for_novel(&feats, &[0, 1, 2, 3, 4], &ids(5), &SvmConfig::default())
            .unwrap();
        assert_eq!(predict_rows(m.logits(&images).unwrap().view()), vec![0, 1, 2, 3, 4]);
    }
}
