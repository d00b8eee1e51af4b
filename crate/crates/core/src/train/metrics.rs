use ndarray::Array2;

use crate::scalar::Scalar;
use crate::train::TrainError;

/// Fraction of `rows` whose argmax (lowest index on ties) equals the label.
pub fn accuracy<T: Scalar>(pred: &Array2<T>, labels: &[usize], rows: &[usize]) -> Result<f64, TrainError> {
    if rows.is_empty() {
        return Err(TrainError::EmptySplit("accuracy"));
    }
    let correct = rows.iter().filter(|&&i| argmax(pred.row(i).iter().copied()) == labels[i]).count();
    Ok(correct as f64 / rows.len() as f64)
}

pub(crate) fn argmax<T: Scalar>(row: impl Iterator<Item = T>) -> usize {
    let mut best = (0, T::neg_infinity());
    for (j, v) in row.enumerate() {
        if v > best.1 {
            best = (j, v);
        }
    }
    best.0
}

/// Mean of `|pred − target|` over the first column of `pred`.
pub fn mean_absolute_error<T: Scalar>(pred: &Array2<T>, targets: &[f64]) -> Result<f64, TrainError> {
    if targets.is_empty() {
        return Err(TrainError::EmptySplit("mae"));
    }
    let total: f64 = targets.iter().enumerate().map(|(i, &t)| (pred[[i, 0]].to_f64_lossy() - t).abs()).sum();
    Ok(total / targets.len() as f64)
}

/// Mean softmax cross-entropy over `rows`.
pub(crate) fn cross_entropy<T: Scalar>(pred: &Array2<T>, labels: &[usize], rows: &[usize]) -> f64 {
    let mut total = 0.0;
    for &i in rows {
        let row: Vec<f64> = pred.row(i).iter().map(|v| v.to_f64_lossy()).collect();
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[labels[i]];
    }
    total / rows.len().max(1) as f64
}

/// Mean and population (divide by N) standard deviation.
pub fn population_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
