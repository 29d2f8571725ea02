//! Weight imprinting on hand-made features: unit-norm columns, cosine
//! logits and invariance of the argmax to the scale factor.

use fsf::classifier::{imprint_weights, predict_rows, NormalizedClassifier};
use ndarray::{array, Array2};

fn main() -> fsf::Result<()> {
    let per_class = vec![
        ("cat".to_string(), array![[2.0, 0.1, 0.0], [4.0, -0.2, 0.3]]),
        ("dog".to_string(), array![[0.0, 1.0, 0.1], [0.2, 3.0, 0.0]]),
        ("fox".to_string(), array![[0.1, 0.0, 0.5], [0.0, 0.2, 2.0]]),
    ];
    let w: Array2<f64> = imprint_weights(&per_class)?;
    for (c, (name, _)) in per_class.iter().enumerate() {
        let col = w.column(c);
        println!("{name}: column {col:.3}, norm {:.6}", col.dot(&col).sqrt());
    }

    let queries = array![[1.0, 0.0, 0.0], [0.0, 10.0, 1.0], [0.0, 0.1, 0.3]];
    let ids: Vec<String> = per_class.iter().map(|(n, _)| n.clone()).collect();
    for s in [1.0, 10.0, 100.0] {
        let head = NormalizedClassifier::new(w.clone(), s, ids.clone())?;
        let logits = head.logits(queries.view())?;
        println!(
            "s = {s:>5}: predictions {:?}, first row logits {:.2}",
            predict_rows(logits.view()),
            logits.row(0)
        );
    }
    Ok(())
}
