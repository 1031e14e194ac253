//! Batch-mean losses over logits laid out `[batch][classes]`.

use crate::error::{Error, Result};

/// A scalar loss and its gradient with respect to the logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Loss {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Row-wise softmax with the maximum subtracted first.
pub fn softmax(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(classes) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        out.extend(row.iter().map(|v| (v - m).exp()));
        let z: f64 = out[start..].iter().sum();
        out[start..].iter_mut().for_each(|p| *p /= z);
    }
    out
}

fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

fn finite(value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteLoss(value))
    }
}

pub fn cross_entropy(logits: &[f64], labels: &[u32], classes: usize) -> Result<Loss> {
    let batch = labels.len();
    if batch == 0 || logits.len() != batch * classes {
        return Err(Error::Data("logits and labels disagree in shape".into()));
    }
    let probs = softmax(logits, classes);
    let mut value = 0.0;
    let mut grad = probs;
    for (b, &y) in labels.iter().enumerate() {
        let row = &logits[b * classes..(b + 1) * classes];
        value -= log_softmax_row(row)[y as usize];
        grad[b * classes + y as usize] -= 1.0;
    }
    grad.iter_mut().for_each(|g| *g /= batch as f64);
    Ok(Loss {
        value: finite(value / batch as f64)?,
        grad,
    })
}

/// `KL(p_T || p_S)` with `p_T = softmax(teacher)` held fixed; the gradient
/// is with respect to the student logits only.
pub fn kl_divergence(student: &[f64], teacher: &[f64], classes: usize) -> Result<Loss> {
    if student.len() != teacher.len() || student.is_empty() || !student.len().is_multiple_of(classes) {
        return Err(Error::Data("student and teacher logits disagree in shape".into()));
    }
    let batch = student.len() / classes;
    let p_t = softmax(teacher, classes);
    let p_s = softmax(student, classes);
    let mut value = 0.0;
    for b in 0..batch {
        let ls = log_softmax_row(&student[b * classes..(b + 1) * classes]);
        let lt = log_softmax_row(&teacher[b * classes..(b + 1) * classes]);
        for c in 0..classes {
            let p = p_t[b * classes + c];
            if p > 0.0 {
                value += p * (lt[c] - ls[c]);
            }
        }
    }
    let grad = p_s.iter().zip(&p_t).map(|(s, t)| (s - t) / batch as f64).collect();
    Ok(Loss {
        value: finite(value / batch as f64)?,
        grad,
    })
}
