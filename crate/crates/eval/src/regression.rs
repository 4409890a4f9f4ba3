//! MSE, MAE and Pearson correlation over paired values.

use serde::{Deserialize, Serialize};

use crate::error::EvalError;

/// Paired ground truth `y` and predictions `yhat`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegressionEval {
    y: Vec<f64>,
    yhat: Vec<f64>,
}

impl RegressionEval {
    pub fn new(y: Vec<f64>, yhat: Vec<f64>) -> Result<Self, EvalError> {
        if y.len() != yhat.len() {
            return Err(EvalError::LengthMismatch(y.len(), yhat.len()));
        }
        Ok(RegressionEval { y, yhat })
    }

    pub fn push(&mut self, y: f64, yhat: f64) {
        self.y.push(y);
        self.yhat.push(yhat);
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn yhat(&self) -> &[f64] {
        &self.yhat
    }

    pub fn mean_y(&self) -> f64 {
        mean(&self.y)
    }

    pub fn mean_yhat(&self) -> f64 {
        mean(&self.yhat)
    }

    /// Population standard deviation of y.
    pub fn std_y(&self) -> f64 {
        std(&self.y)
    }

    pub fn std_yhat(&self) -> f64 {
        std(&self.yhat)
    }

    /// The pairs at the given indices.
    pub fn subset(&self, idx: &[usize]) -> RegressionEval {
        RegressionEval {
            y: idx.iter().map(|&i| self.y[i]).collect(),
            yhat: idx.iter().map(|&i| self.yhat[i]).collect(),
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mse: f64,
    pub mae: f64,
    /// Absent for fewer than two pairs or a constant side.
    pub pearson: Option<f64>,
}

/// None when there are no pairs.
pub fn regression_metrics(e: &RegressionEval) -> Option<RegressionMetrics> {
    let n = e.n();
    if n == 0 {
        return None;
    }
    let mse = e.y.iter().zip(&e.yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64;
    let mae = e.y.iter().zip(&e.yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64;
    Some(RegressionMetrics {
        mse,
        mae,
        pearson: pearson(e),
    })
}

/// Covariance over the product of standard deviations.
pub fn pearson(e: &RegressionEval) -> Option<f64> {
    if e.n() < 2 {
        return None;
    }
    let (my, mh) = (e.mean_y(), e.mean_yhat());
    let (sy, sh) = (e.std_y(), e.std_yhat());
    // relative guard: rounding leaves a tiny spread on constant inputs
    let scale = |m: f64| 1e-12 * m.abs().max(1.0);
    if sy <= scale(my) || sh <= scale(mh) {
        return None;
    }
    let cov = e.y.iter().zip(&e.yhat).map(|(a, b)| (a - my) * (b - mh)).sum::<f64>() / e.n() as f64;
    Some((cov / (sy * sh)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_examples() {
        let y = vec![1.0, 2.0, 3.0];
        let m = regression_metrics(&RegressionEval::new(y.clone(), y.clone()).unwrap()).unwrap();
        assert_eq!((m.mse, m.mae, m.pearson), (0.0, 0.0, Some(1.0)));
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        let m = regression_metrics(&RegressionEval::new(y.clone(), neg).unwrap()).unwrap();
        assert!((m.pearson.unwrap() + 1.0).abs() < 1e-12);
        let m = regression_metrics(&RegressionEval::new(y, vec![2.0; 3]).unwrap()).unwrap();
        assert!((m.mse - 2.0 / 3.0).abs() < 1e-12 && (m.mae - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.pearson, None);
        assert_eq!(RegressionEval::new(vec![1.0], vec![]), Err(EvalError::LengthMismatch(1, 0)));
    }
}
