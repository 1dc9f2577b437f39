//! Dense vector arithmetic and the finite-difference gradient oracle.
//!
//! Every public operation validates its output for NaN/infinity and fails
//! loudly instead of letting a bad value propagate through a training run.

use crate::error::{Error, Result};

/// Flat parameter (or gradient) vector, the common currency of all math here.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        ParamVector(values)
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

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Elementwise difference `self - other`.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        check_same_len("sub", self, other)?;
        Ok(ParamVector(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a - b)
                .collect(),
        ))
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        check_same_len("dot", self, other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn scale(&self, alpha: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|v| alpha * v).collect())
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        ParamVector(values)
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

fn check_same_len(context: &'static str, a: &ParamVector, b: &ParamVector) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            context,
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// Euclidean norm of `a`. Errors on non-finite input.
pub fn vec_norm(a: &ParamVector) -> Result<f64> {
    if !a.is_finite() {
        return Err(Error::InvalidNumber {
            context: "vec_norm input",
        });
    }
    let norm = a.0.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(Error::InvalidNumber {
            context: "vec_norm output",
        });
    }
    Ok(norm)
}

/// `alpha * a + b`, elementwise. Lengths must agree.
pub fn vec_axpy(alpha: f64, a: &ParamVector, b: &ParamVector) -> Result<ParamVector> {
    check_same_len("vec_axpy", a, b)?;
    let out = ParamVector(
        a.0.iter()
            .zip(&b.0)
            .map(|(x, y)| alpha * x + y)
            .collect(),
    );
    if !out.is_finite() {
        return Err(Error::InvalidNumber {
            context: "vec_axpy output",
        });
    }
    Ok(out)
}

/// Central-difference gradient of `loss` at `x` with perturbation `h`.
///
/// This is the independent oracle every analytic gradient in the models
/// module is validated against.
pub fn finite_diff_grad<F>(loss: F, x: &ParamVector, h: f64) -> Result<ParamVector>
where
    F: Fn(&ParamVector) -> Result<f64>,
{
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::config(format!("finite difference step h={h} must be positive")));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let orig = probe.0[j];
        probe.0[j] = orig + h;
        let up = loss(&probe)?;
        probe.0[j] = orig - h;
        let down = loss(&probe)?;
        probe.0[j] = orig;
        let slope = (up - down) / (2.0 * h);
        if !slope.is_finite() {
            return Err(Error::InvalidNumber {
                context: "finite_diff_grad",
            });
        }
        grad.push(slope);
    }
    Ok(ParamVector(grad))
}

/// Relative disagreement between two gradients, scaled by the reference norm.
pub fn relative_error(candidate: &ParamVector, reference: &ParamVector) -> Result<f64> {
    let diff = candidate.sub(reference)?;
    let denom = vec_norm(reference)?.max(1e-8);
    Ok(vec_norm(&diff)? / denom)
}
