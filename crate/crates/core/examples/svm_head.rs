//! Initializes a linear head with a one-vs-rest squared-hinge SVM on
//! Gaussian blobs and reports the solver diagnostics.

use fsf::classifier::{init_simple_svm, predict_rows, SvmConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> fsf::Result<()> {
    let (classes, per_class, d) = (5, 5, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let centers = Array2::from_shape_simple_fn((classes, d), || 3.0 * rng.sample::<f64, _>(StandardNormal));
    let mut x = Array2::zeros((classes * per_class, d));
    let mut labels = Vec::new();
    for c in 0..classes {
        for k in 0..per_class {
            let row = c * per_class + k;
            for j in 0..d {
                x[[row, j]] = centers[[c, j]] + rng.sample::<f64, _>(StandardNormal);
            }
            labels.push(c);
        }
    }

    let (w, b, diag) = init_simple_svm(x.view(), &labels, classes, &SvmConfig::default())?;
    println!("Newton iterations per class: {:?}", diag.iterations);
    println!(
        "final gradient norms: {:?}",
        diag.final_grad_norms
            .iter()
            .map(|g| format!("{g:.1e}"))
            .collect::<Vec<_>>()
    );
    let pred = predict_rows((x.dot(&w) + &b).view());
    let correct = pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
    println!("support accuracy {correct}/{}", labels.len());
    Ok(())
}
