//! Dense matrix representations of the spectral operators, for the
//! eigenvalue computations.

use faer::Mat;

use crate::grid::{derivative, Field, Grid1D};

/// Circulant matrix of the spectral derivative of the given order.
pub fn diff_matrix(grid: &Grid1D, order: u32) -> Mat<f64> {
    let n = grid.n();
    let mut e0 = Field::zeros(*grid);
    e0.values_mut()[0] = 1.0;
    let col = derivative(&e0, order).expect("valid derivative order");
    let d = col.values();
    Mat::from_fn(n, n, |i, j| d[(i + n - j) % n])
}

pub fn col_from_slice(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

pub fn col_to_vec(m: &Mat<f64>) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, 0)]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_matches_spectral_derivative() {
        let g = Grid1D::new(10.0, 32).unwrap();
        let f = Field::from_fn(g, |x| (-(x * x)).exp() + 0.2 * (0.6 * x).sin());
        for order in 1..=3 {
            let m = diff_matrix(&g, order);
            let prod = &m * col_from_slice(f.values());
            let direct = f.derivative(order).unwrap();
            for i in 0..32 {
                assert!((prod[(i, 0)] - direct.values()[i]).abs() < 1e-11);
            }
        }
    }
}
