//! Cubic B-spline design matrices on equally spaced knots and
//! difference penalty matrices for P-spline smooth terms.

use nalgebra::DMatrix;

use crate::{Error, Result};

/// B-spline basis on an equally spaced knot grid.
///
/// The knot vector has length m + degree + 1; interior knots span
/// [x_min, x_max] with `degree` extra knots replicated at the interior
/// spacing beyond each boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    degree: usize,
    n_basis: usize,
    knots: Vec<f64>,
    x_min: f64,
    x_max: f64,
}

impl SplineBasis {
    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of basis functions m.
    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x_min, self.x_max)
    }

    /// Nonzero basis values at `x`: returns (first active basis index,
    /// the degree+1 values for functions first..first+degree).
    pub fn evaluate(&self, x: f64) -> Result<(usize, Vec<f64>)> {
        self.evaluate_at(x, 0)
    }

    fn evaluate_at(&self, x: f64, obs_index: usize) -> Result<(usize, Vec<f64>)> {
        if !(x >= self.x_min && x <= self.x_max) {
            return Err(Error::OutsideDomain {
                value: x,
                min: self.x_min,
                max: self.x_max,
                index: obs_index,
            });
        }
        let d = self.degree;
        let m = self.n_basis;
        // interval index j with t_j <= x < t_{j+1}; the last interval is
        // closed at x_max
        let h = self.knots[d + 1] - self.knots[d];
        let mut j = d + ((x - self.knots[d]) / h).floor() as usize;
        j = j.min(m - 1);
        while j > d && x < self.knots[j] {
            j -= 1;
        }
        while j < m - 1 && x >= self.knots[j + 1] {
            j += 1;
        }
        // Cox-de Boor triangular scheme for the d+1 functions active on
        // interval j
        let mut values = vec![0.0; d + 1];
        values[0] = 1.0;
        for r in 1..=d {
            let mut saved = 0.0;
            for k in 0..r {
                let left = self.knots[j + 1 + k - r];
                let right = self.knots[j + 1 + k];
                let term = values[k] / (right - left);
                values[k] = saved + (right - x) * term;
                saved = (x - left) * term;
            }
            values[r] = saved;
        }
        Ok((j - d, values))
    }
}

/// Symmetric penalty K = D'D built from the order-th forward difference
/// operator D.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    matrix: DMatrix<f64>,
    order: usize,
}

impl PenaltyMatrix {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dimension(&self) -> usize {
        self.matrix.nrows()
    }

    /// rank(K) = m - order.
    pub fn rank(&self) -> usize {
        self.dimension() - self.order
    }

    /// gamma' K gamma.
    pub fn quadratic_form(&self, gamma: &[f64]) -> f64 {
        let v = nalgebra::DVector::from_column_slice(gamma);
        (v.transpose() * &self.matrix * v)[(0, 0)]
    }
}

/// Build an equally spaced knot grid for `m` basis functions of the
/// given degree over [x_min, x_max].
pub fn knot_sequence(x_min: f64, x_max: f64, m: usize, degree: usize) -> Result<SplineBasis> {
    if !(x_min < x_max) {
        return Err(Error::InvalidBasis(format!(
            "require x_min < x_max, got [{x_min}, {x_max}]"
        )));
    }
    if m <= degree {
        return Err(Error::InvalidBasis(format!(
            "require m > degree, got m = {m}, degree = {degree}"
        )));
    }
    let intervals = m - degree;
    let h = (x_max - x_min) / intervals as f64;
    let knots: Vec<f64> = (0..m + degree + 1)
        .map(|k| x_min + (k as f64 - degree as f64) * h)
        .collect();
    Ok(SplineBasis {
        degree,
        n_basis: m,
        knots,
        x_min,
        x_max,
    })
}

/// Evaluate the basis at every x: an n x m design matrix.
pub fn design_matrix(x: &[f64], basis: &SplineBasis) -> Result<DMatrix<f64>> {
    let m = basis.n_basis();
    let mut mat = DMatrix::zeros(x.len(), m);
    for (i, &xi) in x.iter().enumerate() {
        let (first, values) = basis.evaluate_at(xi, i)?;
        for (k, v) in values.iter().enumerate() {
            mat[(i, first + k)] = *v;
        }
    }
    Ok(mat)
}

/// Difference penalty K = D'D of the given order for m coefficients.
pub fn difference_penalty(m: usize, order: usize) -> Result<PenaltyMatrix> {
    if order < 1 || m <= order {
        return Err(Error::InvalidBasis(format!(
            "require m > order >= 1, got m = {m}, order = {order}"
        )));
    }
    // binomial coefficients with alternating signs
    let mut coeffs = vec![0.0; order + 1];
    for (k, c) in coeffs.iter_mut().enumerate() {
        let binom = (0..k).fold(1.0, |acc, i| acc * (order - i) as f64 / (i + 1) as f64);
        *c = if (order - k) % 2 == 0 { binom } else { -binom };
    }
    let rows = m - order;
    let mut d = DMatrix::zeros(rows, m);
    for r in 0..rows {
        for (k, c) in coeffs.iter().enumerate() {
            d[(r, r + k)] = *c;
        }
    }
    let k = d.transpose() * &d;
    Ok(PenaltyMatrix { matrix: k, order })
}
