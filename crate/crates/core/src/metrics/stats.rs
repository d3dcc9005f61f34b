use serde::{Deserialize, Serialize};

/// Sample mean and its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub std_err: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                n,
                mean: f64::NAN,
                std_dev: f64::NAN,
                std_err: f64::NAN,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std_dev = if n > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            n,
            mean,
            std_dev,
            std_err: std_dev / (n as f64).sqrt(),
        }
    }
}

/// Summary of the per-replication differences `a_i - b_i`.
pub fn paired_summary(a: &[f64], b: &[f64]) -> Summary {
    assert_eq!(a.len(), b.len(), "paired samples must have equal length");
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Summary::of(&d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_error() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        // sample variance 5/3
        assert!((s.std_err - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-12);
        assert_eq!(Summary::of(&[7.0]).std_err, 0.0);
        assert!(Summary::of(&[]).mean.is_nan());
    }

    #[test]
    fn paired_removes_common_noise() {
        let a = [10.0, 20.0, 30.0];
        let b = [9.0, 19.0, 29.0];
        let s = paired_summary(&a, &b);
        assert_eq!((s.mean, s.std_err), (1.0, 0.0));
    }
}
