//! Classification heads over the feature space.
//!
//! * [`NormalizedClassifier`]: unit-norm weight columns and a scale `s`;
//!   logits are `s * W^T z_hat`. Columns for new classes are imprinted from
//!   normalized support features.
//! * [`SimpleClassifier`]: an ordinary affine layer, initialized for new
//!   classes with a one-vs-rest linear SVM.

mod svm;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Param, ParamGroup};

pub use svm::{init_simple_svm, SvmConfig, SvmDiagnostics};

/// Norms at or below this are treated as degenerate.
pub const NORM_EPS: f64 = 1e-12;

/// Default initial value of the normalized head's scale factor.
pub const DEFAULT_SCALE: f64 = 10.0;

pub fn normalize_vector(v: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    let norm = v.dot(&v).sqrt();
    if norm.is_nan() || norm <= NORM_EPS {
        return Err(Error::DegenerateFeature { norm });
    }
    Ok(v.mapv(|x| x / norm))
}

/// Row-normalizes a feature matrix, returning the normalized rows and norms.
fn normalize_rows(z: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let norms = z.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if let Some(&norm) = norms.iter().find(|&&n| n.is_nan() || n <= NORM_EPS) {
        return Err(Error::DegenerateFeature { norm });
    }
    let zhat = &z / &norms.view().insert_axis(Axis(1));
    Ok((zhat, norms))
}

/// Imprints one unit column per class: normalize each feature, average, and
/// normalize the mean again. Returns `W` with shape `(d, C)`.
pub fn imprint_weights(per_class: &[(String, Array2<f64>)]) -> Result<Array2<f64>> {
    let d = per_class
        .first()
        .map(|(_, f)| f.ncols())
        .ok_or_else(|| Error::InvalidArgument("imprinting needs at least one class".into()))?;
    let mut w = Array2::zeros((d, per_class.len()));
    for (col, (class, feats)) in per_class.iter().enumerate() {
        if feats.nrows() == 0 || feats.ncols() != d {
            return Err(Error::Shape(format!(
                "class {class:?}: expected K>=1 features of width {d}, got {:?}",
                feats.dim()
            )));
        }
        let (zhat, _) = normalize_rows(feats.view())?;
        let mean = zhat.mean_axis(Axis(0)).expect("K >= 1");
        let norm = mean.dot(&mean).sqrt();
        if norm.is_nan() || norm <= NORM_EPS {
            return Err(Error::DegenerateClassMean {
                class: class.clone(),
                norm,
            });
        }
        w.column_mut(col).assign(&(mean / norm));
    }
    Ok(w)
}

/// Groups feature rows by label into the order of `class_ids`.
pub fn group_by_label(
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    class_ids: &[String],
) -> Result<Vec<(String, Array2<f64>)>> {
    if features.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} feature rows but {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    class_ids
        .iter()
        .enumerate()
        .map(|(c, id)| {
            let rows: Vec<usize> = labels
                .iter()
                .enumerate()
                .filter_map(|(i, &l)| (l == c).then_some(i))
                .collect();
            Ok((id.clone(), features.select(Axis(0), &rows)))
        })
        .collect()
}

/// Index of the largest logit; ties resolve to the lowest index.
pub fn predict(logits: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

pub fn predict_rows(logits: ArrayView2<'_, f64>) -> Vec<usize> {
    logits.rows().into_iter().map(predict).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Normalized,
    Simple,
}

impl std::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normalized" => Ok(HeadKind::Normalized),
            "simple" => Ok(HeadKind::Simple),
            other => Err(Error::InvalidArgument(format!("unknown head kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
struct NormCache {
    zhat: Array2<f64>,
    norms: Array1<f64>,
    cosines: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct NormalizedClassifier {
    /// `(d, C)`, unit columns at every renormalization point.
    pub weight: Param,
    /// Scalar `s > 0`.
    pub scale: Param,
    pub class_ids: Vec<String>,
    cache: Option<NormCache>,
}

impl NormalizedClassifier {
    pub fn new(weight: Array2<f64>, scale: f64, class_ids: Vec<String>) -> Result<Self> {
        if weight.ncols() != class_ids.len() {
            return Err(Error::Shape(format!(
                "{} weight columns for {} class ids",
                weight.ncols(),
                class_ids.len()
            )));
        }
        if scale.is_nan() || scale <= 0.0 {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
        }
        let mut head = NormalizedClassifier {
            weight: Param::new(ParamGroup::Classifier, "head.weight", weight.into_dyn()),
            scale: Param::scalar(ParamGroup::Classifier, "head.scale", scale),
            class_ids,
            cache: None,
        };
        head.renormalize()?;
        Ok(head)
    }

    /// Random unit columns, used before pretraining.
    pub fn random<R: rand::Rng + ?Sized>(d: usize, class_ids: Vec<String>, rng: &mut R) -> Result<Self> {
        let dist = rand_distr::StandardNormal;
        let w = Array2::from_shape_simple_fn((d, class_ids.len()), || rng.sample::<f64, _>(dist));
        Self::new(w, DEFAULT_SCALE, class_ids)
    }

    pub fn imprinted(per_class: &[(String, Array2<f64>)], scale: f64) -> Result<Self> {
        let w = imprint_weights(per_class)?;
        Self::new(w, scale, per_class.iter().map(|(c, _)| c.clone()).collect())
    }

    pub fn weight_matrix(&self) -> ArrayView2<'_, f64> {
        self.weight.value.view().into_dimensionality().expect("2-d head weight")
    }

    pub fn scale_value(&self) -> f64 {
        self.scale.value[0]
    }

    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }

    /// Projects every column back onto the unit sphere.
    pub fn renormalize(&mut self) -> Result<()> {
        let mut w = self
            .weight
            .value
            .view_mut()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("2-d head weight");
        for (i, mut col) in w.columns_mut().into_iter().enumerate() {
            let n = col.dot(&col).sqrt();
            if n.is_nan() || n <= NORM_EPS {
                return Err(Error::DegenerateClassMean {
                    class: self.class_ids[i].clone(),
                    norm: n,
                });
            }
            col.mapv_inplace(|v| v / n);
        }
        Ok(())
    }

    /// `s * W^T z_hat` for each row of `z`.
    pub fn logits(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let (zhat, _) = normalize_rows(z)?;
        Ok(zhat.dot(&self.weight_matrix()) * self.scale_value())
    }

    pub fn forward(&mut self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let (zhat, norms) = normalize_rows(z)?;
        let cosines = zhat.dot(&self.weight_matrix());
        let logits = &cosines * self.scale_value();
        self.cache = Some(NormCache { zhat, norms, cosines });
        Ok(logits)
    }

    pub fn backward(&mut self, grad_logits: &Array2<f64>) -> Array2<f64> {
        let NormCache { zhat, norms, cosines } = self.cache.take().expect("head backward without forward");
        let s = self.scale_value();
        let gw = zhat.t().dot(grad_logits) * s;
        self.weight.grad += &gw.into_dyn();
        self.scale.grad[0] += (grad_logits * &cosines).sum();
        let dzhat = grad_logits.dot(&self.weight_matrix().t()) * s;
        // Jacobian of z / |z|: (I - zhat zhat^T) / |z|.
        let radial = (&dzhat * &zhat).sum_axis(Axis(1)).insert_axis(Axis(1));
        (&dzhat - &(&zhat * &radial)) / &norms.insert_axis(Axis(1))
    }
}

#[derive(Debug, Clone)]
pub struct SimpleClassifier {
    /// `(d, C)`.
    pub weight: Param,
    /// `(C)`.
    pub bias: Param,
    pub class_ids: Vec<String>,
    cache: Option<Array2<f64>>,
}

impl SimpleClassifier {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>, class_ids: Vec<String>) -> Result<Self> {
        if weight.ncols() != class_ids.len() || bias.len() != class_ids.len() {
            return Err(Error::Shape(format!(
                "weight {:?} / bias {} inconsistent with {} classes",
                weight.dim(),
                bias.len(),
                class_ids.len()
            )));
        }
        if weight.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("simple head entries must be finite".into()));
        }
        Ok(SimpleClassifier {
            weight: Param::new(ParamGroup::Classifier, "head.weight", weight.into_dyn()),
            bias: Param::new(ParamGroup::Classifier, "head.bias", bias.into_dyn()),
            class_ids,
            cache: None,
        })
    }

    /// Uniform `(-1/sqrt(d), 1/sqrt(d))` weights and zero bias.
    pub fn random<R: rand::Rng + ?Sized>(d: usize, class_ids: Vec<String>, rng: &mut R) -> Result<Self> {
        let b = 1.0 / (d as f64).sqrt();
        let w = Array2::from_shape_simple_fn((d, class_ids.len()), || rng.random_range(-b..b));
        let bias = Array1::zeros(class_ids.len());
        Self::new(w, bias, class_ids)
    }

    pub fn weight_matrix(&self) -> ArrayView2<'_, f64> {
        self.weight.value.view().into_dimensionality().expect("2-d head weight")
    }

    pub fn bias_vector(&self) -> ArrayView1<'_, f64> {
        self.bias.value.view().into_dimensionality().expect("1-d head bias")
    }

    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }

    pub fn logits(&self, z: ArrayView2<'_, f64>) -> Array2<f64> {
        z.dot(&self.weight_matrix()) + self.bias_vector()
    }

    pub fn forward(&mut self, z: ArrayView2<'_, f64>) -> Array2<f64> {
        self.cache = Some(z.to_owned());
        self.logits(z)
    }

    pub fn backward(&mut self, grad_logits: &Array2<f64>) -> Array2<f64> {
        let z = self.cache.take().expect("head backward without forward");
        self.weight.grad += &z.t().dot(grad_logits).into_dyn();
        self.bias.grad += &grad_logits.sum_axis(Axis(0)).into_dyn();
        grad_logits.dot(&self.weight_matrix().t())
    }
}

/// Either head behind one interface.
#[derive(Debug, Clone)]
pub enum Head {
    Normalized(NormalizedClassifier),
    Simple(SimpleClassifier),
}

impl Head {
    pub fn kind(&self) -> HeadKind {
        match self {
            Head::Normalized(_) => HeadKind::Normalized,
            Head::Simple(_) => HeadKind::Simple,
        }
    }

    pub fn class_ids(&self) -> &[String] {
        match self {
            Head::Normalized(h) => &h.class_ids,
            Head::Simple(h) => &h.class_ids,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_ids().len()
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Head::Normalized(h) => h.weight.value.shape()[0],
            Head::Simple(h) => h.weight.value.shape()[0],
        }
    }

    pub fn logits(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        match self {
            Head::Normalized(h) => h.logits(z),
            Head::Simple(h) => Ok(h.logits(z)),
        }
    }

    pub fn forward(&mut self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        match self {
            Head::Normalized(h) => h.forward(z),
            Head::Simple(h) => Ok(h.forward(z)),
        }
    }

    pub fn backward(&mut self, grad_logits: &Array2<f64>) -> Array2<f64> {
        match self {
            Head::Normalized(h) => h.backward(grad_logits),
            Head::Simple(h) => h.backward(grad_logits),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Head::Normalized(h) => vec![&h.weight, &h.scale],
            Head::Simple(h) => vec![&h.weight, &h.bias],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Head::Normalized(h) => vec![&mut h.weight, &mut h.scale],
            Head::Simple(h) => vec![&mut h.weight, &mut h.bias],
        }
    }

    /// Restores the head's structural invariant after a parameter update.
    pub fn project(&mut self) -> Result<()> {
        match self {
            Head::Normalized(h) => h.renormalize(),
            Head::Simple(_) => Ok(()),
        }
    }

    pub fn clear_cache(&mut self) {
        match self {
            Head::Normalized(h) => h.cache = None,
            Head::Simple(h) => h.cache = None,
        }
    }
}

/// Softmax cross-entropy averaged over rows; returns the loss and
/// `dL/dlogits`.
pub fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let b = logits.nrows();
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (i, (row, &y)) in logits.rows().into_iter().zip(labels).enumerate() {
        let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let exps = row.mapv(|v| (v - m).exp());
        let sum = exps.sum();
        loss += sum.ln() + m - row[y];
        let mut g = grad.row_mut(i);
        g.assign(&(exps / sum));
        g[y] -= 1.0;
    }
    grad /= b as f64;
    (loss / b as f64, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn normalize_examples() {
        let v = normalize_vector(array![3.0, 4.0].view()).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        let e1 = array![1.0, 0.0, 0.0];
        assert_eq!(normalize_vector(e1.view()).unwrap(), e1);
        let err = normalize_vector(array![0.0, 0.0].view()).unwrap_err();
        assert!(err.to_string().contains("degenerate feature norm"));
    }

    #[test]
    fn imprint_examples() {
        let w = imprint_weights(&[("a".into(), array![[3.0, 4.0]])]).unwrap();
        assert!((w[[0, 0]] - 0.6).abs() < 1e-15 && (w[[1, 0]] - 0.8).abs() < 1e-15);

        // mean (0.5, 0.5, 0) renormalized -> (1/sqrt2, 1/sqrt2, 0)
        let w = imprint_weights(&[("a".into(), array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])]).unwrap();
        let r = 0.5f64.sqrt();
        assert!((w[[0, 0]] - r).abs() < 1e-15 && (w[[1, 0]] - r).abs() < 1e-15 && w[[2, 0]] == 0.0);

        let err = imprint_weights(&[("a".into(), array![[1.0, 0.0], [-1.0, 0.0]])]).unwrap_err();
        assert!(err.to_string().contains("degenerate class mean"));

        let err = imprint_weights(&[("a".into(), array![[0.0, 0.0]])]).unwrap_err();
        assert!(matches!(err, Error::DegenerateFeature { .. }));
    }

    #[test]
    fn orthonormal_logits() {
        let w = Array2::eye(5);
        let head = NormalizedClassifier::new(w, 10.0, ids(5)).unwrap();
        let z = array![[1.0, 0.0, 0.0, 0.0, 0.0]];
        assert_eq!(
            head.logits(z.view()).unwrap().row(0).to_vec(),
            vec![10.0, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn scaled_copy_of_column_predicts_that_column() {
        let mut rng = rand::rng();
        let head = NormalizedClassifier::random(8, ids(4), &mut rng).unwrap();
        let z = (&head.weight_matrix().column(2) * 5.0).insert_axis(Axis(0));
        assert_eq!(predict(head.logits(z.view()).unwrap().row(0)), 2);
    }

    #[test]
    fn simple_head_examples() {
        let head = SimpleClassifier::new(Array2::zeros((2, 3)), array![1.0, 2.0, 3.0], ids(3)).unwrap();
        assert_eq!(
            head.logits(array![[5.0, -1.0]].view()).row(0).to_vec(),
            vec![1.0, 2.0, 3.0]
        );

        let head = SimpleClassifier::new(Array2::eye(3), array![0.5, -0.5, 0.25], ids(3)).unwrap();
        let z = array![[0.0, 4.0, 0.0]];
        assert_eq!(predict(head.logits(z.view()).row(0)), 1);
        let l1 = head.logits(z.view());
        let l2 = head.logits((&z * 2.0).view());
        let bias = head.bias_vector();
        assert_eq!(&l2 - &bias, (&l1 - &bias) * 2.0);
    }

    #[test]
    fn prediction_tie_break() {
        assert_eq!(predict(array![0.1, 0.9, 0.3].view()), 1);
        assert_eq!(predict(array![0.5, 0.5].view()), 0);
        assert_eq!(predict((array![0.1, 0.9, 0.3] * 7.5).view()), 1);
    }

    #[test]
    fn cross_entropy_gradient_matches_difference_quotient() {
        let logits = array![[0.3, -1.2, 2.0], [1.0, 1.0, -0.5]];
        let labels = [2, 0];
        let (_, g) = softmax_cross_entropy(&logits, &labels);
        let h = 1e-6;
        for ((i, j), &gij) in g.indexed_iter() {
            let mut p = logits.clone();
            p[[i, j]] += h;
            let mut m = logits.clone();
            m[[i, j]] -= h;
            let fd = (softmax_cross_entropy(&p, &labels).0 - softmax_cross_entropy(&m, &labels).0) / (2.0 * h);
            assert!((fd - gij).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn imprinting_yields_unit_columns(
            k in 1usize..6, d in 2usize..16, seed: u64,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let feats = Array2::from_shape_simple_fn((k, d), || rng.random_range(0.05..1.0));
            let w = imprint_weights(&[("a".into(), feats)]).unwrap();
            let n = w.column(0).dot(&w.column(0)).sqrt();
            prop_assert!((n - 1.0).abs() < 1e-6);
        }
    }
}
