//! Detections shared by every stage: a box, a class distribution, and the
//! confidence derived from it.
//!
//! Class distributions cover the C foreground classes. Their entries may sum
//! to less than one; the remainder is background mass, so a detection's
//! confidence (its largest foreground probability) can fall below `1 / C`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry2d::Box2D;
use crate::geometry3d::Box3D;

/// Tolerance on the probability-vector sum.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbsError {
    #[error("class distribution is empty")]
    Empty,
    #[error("probability {value} at class {index} outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("probabilities sum to {0}, expected at most 1")]
    BadSum(f64),
}

/// Foreground class probabilities; `1 - sum` is the background mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ClassProbs(Vec<f64>);

impl ClassProbs {
    pub fn new(probs: Vec<f64>) -> Result<Self, ProbsError> {
        if probs.is_empty() {
            return Err(ProbsError::Empty);
        }
        if let Some((index, &value)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            return Err(ProbsError::OutOfRange { index, value });
        }
        let sum: f64 = probs.iter().sum();
        if sum > 1.0 + PROB_SUM_TOLERANCE {
            return Err(ProbsError::BadSum(sum));
        }
        Ok(Self(probs))
    }

    pub fn one_hot(num_classes: usize, class: usize) -> Self {
        let mut v = vec![0.0; num_classes];
        v[class] = 1.0;
        Self(v)
    }

    /// Softmax over the foreground logits plus a background logit fixed at
    /// zero.
    pub fn from_logits(logits: &[f64]) -> Self {
        let max = logits.iter().cloned().fold(0.0, f64::max);
        let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exp.iter().sum::<f64>() + (-max).exp();
        Self(exp.into_iter().map(|e| e / sum).collect())
    }

    /// Plain softmax over the foreground logits; the result has no
    /// background mass.
    pub fn softmax(logits: &[f64]) -> Self {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        Self(exp.into_iter().map(|e| e / sum).collect())
    }

    /// The foreground distribution rescaled to sum to one; uniform when all
    /// mass is background.
    pub fn renormalized(&self) -> Self {
        let sum: f64 = self.0.iter().sum();
        if sum <= 0.0 {
            return Self(vec![1.0 / self.0.len() as f64; self.0.len()]);
        }
        Self(self.0.iter().map(|p| p / sum).collect())
    }

    /// Inverse of [`ClassProbs::from_logits`]: `ln(p_k / p_background)`, with
    /// both floored at `floor`.
    pub fn logits(&self, floor: f64) -> Vec<f64> {
        let bg = self.background().max(floor).ln();
        self.0.iter().map(|p| p.max(floor).ln() - bg).collect()
    }

    /// `score` on `class`, the remainder left as background.
    pub fn from_score(num_classes: usize, class: usize, score: f64) -> Self {
        let mut v = vec![0.0; num_classes];
        v[class] = score.clamp(0.0, 1.0);
        Self(v)
    }

    pub fn background(&self) -> f64 {
        (1.0 - self.0.iter().sum::<f64>()).max(0.0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn max(&self) -> f64 {
        self.0[self.argmax()]
    }

    /// Natural log of each entry, floored at `floor`.
    pub fn log(&self, floor: f64) -> Vec<f64> {
        self.0.iter().map(|p| p.max(floor).ln()).collect()
    }
}

impl TryFrom<Vec<f64>> for ClassProbs {
    type Error = ProbsError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ClassProbs> for Vec<f64> {
    fn from(p: ClassProbs) -> Self {
        p.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection2D {
    pub bbox: Box2D,
    pub probs: ClassProbs,
}

impl Detection2D {
    pub fn new(bbox: Box2D, probs: ClassProbs) -> Self {
        Self { bbox, probs }
    }

    pub fn score(&self) -> f64 {
        self.probs.max()
    }

    pub fn class(&self) -> usize {
        self.probs.argmax()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection3D {
    pub bbox: Box3D,
    pub probs: ClassProbs,
}

impl Detection3D {
    pub fn new(bbox: Box3D, probs: ClassProbs) -> Self {
        Self { bbox, probs }
    }

    pub fn score(&self) -> f64 {
        self.probs.max()
    }

    pub fn class(&self) -> usize {
        self.probs.argmax()
    }
}

/// Anything carrying a class distribution.
pub trait Scored {
    fn probs(&self) -> &ClassProbs;

    fn score(&self) -> f64 {
        self.probs().max()
    }
}

impl Scored for Detection2D {
    fn probs(&self) -> &ClassProbs {
        &self.probs
    }
}

impl Scored for Detection3D {
    fn probs(&self) -> &ClassProbs {
        &self.probs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ClassProbs::new(vec![0.5, 0.5]).is_ok());
        assert!(ClassProbs::new(vec![0.2, 0.1]).is_ok());
        assert_eq!(ClassProbs::new(vec![]), Err(ProbsError::Empty));
        assert!(matches!(ClassProbs::new(vec![1.5, -0.5]), Err(ProbsError::OutOfRange { index: 0, .. })));
        assert!(matches!(ClassProbs::new(vec![0.5, 0.6]), Err(ProbsError::BadSum(_))));
    }

    #[test]
    fn argmax_ties_to_lowest() {
        let p = ClassProbs::new(vec![0.4, 0.4, 0.2]).unwrap();
        assert_eq!(p.argmax(), 0);
        let q = ClassProbs::new(vec![0.2, 0.4, 0.4]).unwrap();
        assert_eq!(q.argmax(), 1);
    }

    #[test]
    fn softmax_and_score_expansion() {
        let p = ClassProbs::from_logits(&[1000.0, 1000.0]);
        assert_eq!(p.as_slice(), &[0.5, 0.5]);
        let z = ClassProbs::from_logits(&[0.0, 0.0]);
        assert!((z.get(0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((z.background() - 1.0 / 3.0).abs() < 1e-15);
        let round = ClassProbs::from_logits(&z.logits(1e-12));
        assert!((round.get(1) - z.get(1)).abs() < 1e-15);
        let s = ClassProbs::from_score(3, 1, 0.2);
        assert_eq!(s.get(0), 0.0);
        assert_eq!(s.argmax(), 1);
        assert_eq!(s.max(), 0.2);
        assert!(ClassProbs::new(s.as_slice().to_vec()).is_ok());
    }

    #[test]
    fn serde_validates() {
        let bad: Result<ClassProbs, _> = serde_json::from_str("[0.9, 0.2]");
        assert!(bad.is_err());
        let good: ClassProbs = serde_json::from_str("[0.25, 0.75]").unwrap();
        assert_eq!(good.argmax(), 1);
    }
}
