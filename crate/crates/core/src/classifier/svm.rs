//! One-vs-rest linear SVM with squared hinge loss, solved in the primal by a
//! truncated Newton method (conjugate-gradient inner solves, Armijo
//! backtracking). Fully deterministic: no sampling, fixed iteration order.
//!
//! Per class `c` with targets `y_i = +1` for class members, `-1` otherwise:
//!
//! ```text
//! min_{w,b}  1/2 |w|^2 + C * sum_i max(0, 1 - y_i (w.x_i + b))^2
//! ```
//!
//! The bias is not regularized.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub regularization_c: f64,
    /// Stop when `|grad| <= tolerance * max(1, |grad_0|)`.
    pub tolerance: f64,
    pub max_newton_iterations: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            regularization_c: 1.0,
            tolerance: 1e-6,
            max_newton_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmDiagnostics {
    /// Newton iterations used per class.
    pub iterations: Vec<usize>,
    pub final_grad_norms: Vec<f64>,
    pub objectives: Vec<f64>,
}

struct Problem<'a> {
    x: ArrayView2<'a, f64>,
    y: Array1<f64>,
    c: f64,
}

impl Problem<'_> {
    /// Parameter vector layout: `[w (d), b]`.
    fn margins(&self, theta: ArrayView1<'_, f64>) -> Array1<f64> {
        let d = self.x.ncols();
        let w = theta.slice(ndarray::s![..d]);
        (self.x.dot(&w) + theta[d]) * &self.y
    }

    fn objective(&self, theta: ArrayView1<'_, f64>) -> f64 {
        let d = self.x.ncols();
        let w = theta.slice(ndarray::s![..d]);
        let hinge: f64 = self.margins(theta).iter().map(|&m| (1.0 - m).max(0.0).powi(2)).sum();
        0.5 * w.dot(&w) + self.c * hinge
    }

    /// Gradient and the active set (examples with margin < 1).
    fn gradient(&self, theta: ArrayView1<'_, f64>) -> (Array1<f64>, Vec<usize>) {
        let d = self.x.ncols();
        let margins = self.margins(theta);
        let mut g = Array1::zeros(d + 1);
        g.slice_mut(ndarray::s![..d]).assign(&theta.slice(ndarray::s![..d]));
        let mut active = Vec::new();
        for (i, &m) in margins.iter().enumerate() {
            if m < 1.0 {
                active.push(i);
                let coef = -2.0 * self.c * (1.0 - m) * self.y[i];
                g.slice_mut(ndarray::s![..d]).scaled_add(coef, &self.x.row(i));
                g[d] += coef;
            }
        }
        (g, active)
    }

    /// Generalized Hessian-vector product on the active set.
    fn hess_vec(&self, active: &[usize], v: ArrayView1<'_, f64>) -> Array1<f64> {
        let d = self.x.ncols();
        let mut out = Array1::zeros(d + 1);
        out.slice_mut(ndarray::s![..d]).assign(&v.slice(ndarray::s![..d]));
        // Tiny damping keeps the unregularized bias direction well posed.
        out[d] = 1e-10 * v[d];
        let vw = v.slice(ndarray::s![..d]);
        for &i in active {
            let xi = self.x.row(i);
            let s = 2.0 * self.c * (xi.dot(&vw) + v[d]);
            out.slice_mut(ndarray::s![..d]).scaled_add(s, &xi);
            out[d] += s;
        }
        out
    }
}

fn conjugate_gradient(problem: &Problem<'_>, active: &[usize], rhs: &Array1<f64>, max_iter: usize) -> Array1<f64> {
    let mut x = Array1::zeros(rhs.len());
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    let stop = 1e-3 * rr.sqrt();
    for _ in 0..max_iter {
        if rr.sqrt() <= stop || rr == 0.0 {
            break;
        }
        let hp = problem.hess_vec(active, p.view());
        let php = p.dot(&hp);
        if php <= 0.0 {
            break;
        }
        let alpha = rr / php;
        x.scaled_add(alpha, &p);
        r.scaled_add(-alpha, &hp);
        let rr_new = r.dot(&r);
        p = &r + &(&p * (rr_new / rr));
        rr = rr_new;
    }
    x
}

fn solve_one(problem: &Problem<'_>, cfg: &SvmConfig, class: usize) -> Result<(Array1<f64>, usize, f64, f64)> {
    let n = problem.x.ncols() + 1;
    let mut theta = Array1::zeros(n);
    let (mut g, mut active) = problem.gradient(theta.view());
    let g0 = g.dot(&g).sqrt();
    let target = cfg.tolerance * g0.max(1.0);
    let mut f = problem.objective(theta.view());
    for iter in 0..cfg.max_newton_iterations {
        let gn = g.dot(&g).sqrt();
        if gn <= target {
            return Ok((theta, iter, gn, f));
        }
        let step = conjugate_gradient(problem, &active, &(-&g), 2 * n);
        let slope = g.dot(&step);
        let step = if slope < 0.0 { step } else { -&g };
        let slope = g.dot(&step);
        let mut t = 1.0;
        loop {
            let cand = &theta + &(&step * t);
            let fc = problem.objective(cand.view());
            if fc <= f + 1e-4 * t * slope {
                theta = cand;
                f = fc;
                break;
            }
            t *= 0.5;
            if t < 1e-20 {
                let gn = g.dot(&g).sqrt();
                return Err(Error::SvmNonConvergence {
                    class,
                    iterations: iter,
                    grad_norm: gn,
                });
            }
        }
        let next = problem.gradient(theta.view());
        g = next.0;
        active = next.1;
    }
    let gn = g.dot(&g).sqrt();
    if gn <= target {
        Ok((theta, cfg.max_newton_iterations, gn, f))
    } else {
        Err(Error::SvmNonConvergence {
            class,
            iterations: cfg.max_newton_iterations,
            grad_norm: gn,
        })
    }
}

/// Fits one binary SVM per class and stacks them into a `(d, C)` weight
/// matrix and a `(C)` bias.
pub fn init_simple_svm(
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    n_classes: usize,
    config: &SvmConfig,
) -> Result<(Array2<f64>, Array1<f64>, SvmDiagnostics)> {
    if features.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} feature rows but {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    for c in 0..n_classes {
        if !labels.contains(&c) {
            return Err(Error::InvalidArgument(format!("class {c} has no examples")));
        }
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    let d = features.ncols();
    let mut w = Array2::zeros((d, n_classes));
    let mut b = Array1::zeros(n_classes);
    let mut diag = SvmDiagnostics {
        iterations: Vec::new(),
        final_grad_norms: Vec::new(),
        objectives: Vec::new(),
    };
    for c in 0..n_classes {
        let y = labels.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect();
        let problem = Problem {
            x: features,
            y,
            c: config.regularization_c,
        };
        let (theta, iters, gn, f) = solve_one(&problem, config, c)?;
        w.column_mut(c).assign(&theta.slice(ndarray::s![..d]));
        b[c] = theta[d];
        diag.iterations.push(iters);
        diag.final_grad_norms.push(gn);
        diag.objectives.push(f);
    }
    Ok((w, b, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::predict;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn accuracy(x: &Array2<f64>, labels: &[usize], w: &Array2<f64>, b: &Array1<f64>) -> f64 {
        let scores = x.dot(w) + b;
        let correct = scores
            .rows()
            .into_iter()
            .zip(labels)
            .filter(|(r, &l)| predict(r.view()) == l)
            .count();
        correct as f64 / labels.len() as f64
    }

    #[test]
    fn separable_clouds_are_fit_exactly() {
        // Two clouds in the plane separated by a gap of 4 along x (margin >= 1
        // on each side of x = 0).
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let side = if i % 2 == 0 { 1.0 } else { -1.0 };
            rows.push([side * rng.random_range(2.0..4.0), rng.random_range(-3.0..3.0)]);
            labels.push(if side > 0.0 { 0 } else { 1 });
        }
        let x = Array2::from_shape_fn((rows.len(), 2), |(i, j)| rows[i][j]);
        let (w, b, diag) = init_simple_svm(x.view(), &labels, 2, &SvmConfig::default()).unwrap();
        assert_eq!(accuracy(&x, &labels, &w, &b), 1.0);
        assert!(diag.final_grad_norms.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn singletons_are_fit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_simple_fn((5, 16), || rng.random_range(-1.0..1.0));
        let labels = [0, 1, 2, 3, 4];
        let (w, b, _) = init_simple_svm(x.view(), &labels, 5, &SvmConfig::default()).unwrap();
        assert_eq!(accuracy(&x, &labels, &w, &b), 1.0);
    }

    #[test]
    fn contradictory_duplicates_do_not_error() {
        let x = array![[1.0, 2.0], [1.0, 2.0], [-1.0, 0.5]];
        let labels = [0, 1, 1];
        let (w, b, _) = init_simple_svm(x.view(), &labels, 2, &SvmConfig::default()).unwrap();
        assert!(accuracy(&x.to_owned(), &labels, &w, &b) < 1.0);
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_simple_fn((12, 6), || rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let a = init_simple_svm(x.view(), &labels, 3, &SvmConfig::default()).unwrap();
        let b = init_simple_svm(x.view(), &labels, 3, &SvmConfig::default()).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_simple_fn((30, 8), || rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let cfg = SvmConfig {
            max_newton_iterations: 0,
            ..SvmConfig::default()
        };
        let err = init_simple_svm(x.view(), &labels, 3, &cfg).unwrap_err();
        assert!(matches!(err, Error::SvmNonConvergence { iterations: 0, .. }));
    }

    #[test]
    fn missing_class_rejected() {
        let x = array![[1.0], [2.0]];
        assert!(init_simple_svm(x.view(), &[0, 0], 2, &SvmConfig::default()).is_err());
    }
}
