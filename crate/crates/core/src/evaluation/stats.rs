use serde::{Deserialize, Serialize};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;

/// Mean with a normal-approximation 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    /// `1.96 * sd / sqrt(n)` with the `n - 1` sample deviation; zero when `n == 1`.
    pub ci95: f64,
    pub n: usize,
}

impl MeanCi {
    pub fn lower(&self) -> f64 {
        self.mean - self.ci95
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci95
    }

    pub fn excludes_zero(&self) -> bool {
        self.lower() > 0.0 || self.upper() < 0.0
    }
}

/// `None` for an empty sample. Summation runs in slice order.
pub fn mean_ci(values: &[f64]) -> Option<MeanCi> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ci95 = if n < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Z95 * (var / n as f64).sqrt()
    };
    Some(MeanCi { mean, ci95, n })
}

/// Mean and CI of `a[i] - b[i]` over positions where both are present.
pub fn paired_difference(a: &[Option<f64>], b: &[Option<f64>]) -> Option<MeanCi> {
    let diffs: Vec<f64> = a.iter().zip(b).filter_map(|(x, y)| Some((*x)? - (*y)?)).collect();
    mean_ci(&diffs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_case() {
        let s = mean_ci(&[1.0, 0.0]).unwrap();
        assert_eq!(s.mean, 0.5);
        assert!((s.ci95 - 0.98).abs() < 1e-12);
    }

    #[test]
    fn constant_has_zero_width() {
        let s = mean_ci(&[0.8; 7]).unwrap();
        assert!((s.mean - 0.8).abs() < 1e-15);
        assert!(s.ci95.abs() < 1e-15);
        assert!(mean_ci(&[]).is_none());
        assert_eq!(mean_ci(&[0.3]).unwrap().ci95, 0.0);
    }

    #[test]
    fn paired_skips_missing() {
        let d = paired_difference(&[Some(1.0), None, Some(0.5)], &[Some(0.5), Some(0.1), None]).unwrap();
        assert_eq!(d.n, 1);
        assert_eq!(d.mean, 0.5);
    }
}
