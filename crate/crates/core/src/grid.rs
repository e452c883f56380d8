//! Periodic spectral grid on `[-L/2, L/2)` and real-valued grid functions.
//!
//! Every profile in the crate (solitons, eigenfunctions, remainders) is a
//! [`Field`] sampled on a [`Grid1D`]. Derivatives are taken by Fourier
//! multipliers, integrals by the rectangle rule, which is spectrally accurate
//! for smooth periodic integrands.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    length: f64,
    n: usize,
}

impl Grid1D {
    pub fn new(length: f64, n: usize) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidGrid(format!("length must be positive, got {length}")));
        }
        if n < 16 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "node count must be a power of two >= 16, got {n}"
            )));
        }
        Ok(Self { length, n })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        -0.5 * self.length + i as f64 * self.dx()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    /// Wavenumber of real-FFT bin `m` (0 ..= n/2).
    pub fn wavenumber(&self, m: usize) -> f64 {
        2.0 * PI * m as f64 / self.length
    }

    /// Largest resolved wavenumber (the Nyquist bin).
    pub fn k_max(&self) -> f64 {
        self.wavenumber(self.n / 2)
    }

    pub fn same_as(&self, other: &Grid1D) -> bool {
        self.n == other.n && self.length == other.length
    }

    pub(crate) fn plans(&self) -> Arc<Plans> {
        plans(self.n)
    }

    /// Distance from `center` to the nearest domain edge; negative if the
    /// center lies outside `[-L/2, L/2)`.
    pub fn edge_distance(&self, center: f64) -> f64 {
        let half = 0.5 * self.length;
        (center + half).min(half - center)
    }
}

pub(crate) struct Plans {
    pub r2c: Arc<dyn RealToComplex<f64>>,
    pub c2r: Arc<dyn ComplexToReal<f64>>,
}

pub(crate) fn plans(n: usize) -> Arc<Plans> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Plans>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let mut map = cache.lock().unwrap_or_else(|e| e.into_inner());
    map.entry(n)
        .or_insert_with(|| {
            let mut planner = RealFftPlanner::<f64>::new();
            Arc::new(Plans {
                r2c: planner.plan_fft_forward(n),
                c2r: planner.plan_fft_inverse(n),
            })
        })
        .clone()
}

/// Unnormalized forward real transform of `values` (length n) into n/2+1 bins.
pub(crate) fn forward(plans: &Plans, values: &[f64]) -> Vec<Complex64> {
    let mut input = values.to_vec();
    let mut out = plans.r2c.make_output_vec();
    plans
        .r2c
        .process(&mut input, &mut out)
        .expect("forward transform length mismatch");
    out
}

/// Inverse of [`forward`], including the 1/n normalization.
pub(crate) fn inverse(plans: &Plans, spectrum: &[Complex64], n: usize) -> Vec<f64> {
    let mut input = spectrum.to_vec();
    input[0].im = 0.0;
    if let Some(last) = input.last_mut() {
        last.im = 0.0;
    }
    let mut out = plans.c2r.make_output_vec();
    plans
        .c2r
        .process(&mut input, &mut out)
        .expect("inverse transform length mismatch");
    let scale = 1.0 / n as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid1D,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::InvalidGrid(format!(
                "expected {} samples, got {}",
                grid.n(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { grid, values })
    }

    /// Construction without the finiteness scan, for hot loops whose output
    /// is checked elsewhere.
    pub(crate) fn from_raw(grid: Grid1D, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n());
        Self { grid, values }
    }

    pub fn zeros(grid: Grid1D) -> Self {
        Self::from_raw(grid, vec![0.0; grid.n()])
    }

    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..grid.n()).map(|i| f(grid.x(i))).collect();
        Self::from_raw(grid, values)
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Real-FFT coefficients (n/2+1 bins, unnormalized).
    pub fn spectrum(&self) -> Vec<Complex64> {
        forward(&self.grid.plans(), &self.values)
    }

    pub fn from_spectrum(grid: Grid1D, spectrum: &[Complex64]) -> Self {
        assert_eq!(spectrum.len(), grid.n() / 2 + 1, "spectrum length");
        Self::from_raw(grid, inverse(&grid.plans(), spectrum, grid.n()))
    }

    pub fn derivative(&self, order: u32) -> Result<Field> {
        derivative(self, order)
    }

    /// Returns `x -> f(x - s)` by a Fourier phase shift.
    pub fn shifted(&self, s: f64) -> Field {
        let mut spec = self.spectrum();
        apply_shift(&self.grid, &mut spec, s);
        Field::from_spectrum(self.grid, &spec)
    }

    /// Returns `x -> f(-x)`, exact on the periodic node set.
    pub fn reflected(&self) -> Field {
        let n = self.grid.n();
        let values = (0..n).map(|i| self.values[(n - i) % n]).collect();
        Field::from_raw(self.grid, values)
    }

    /// Trigonometric interpolant evaluated at arbitrary points (periodic).
    pub fn eval_at(&self, points: &[f64]) -> Vec<f64> {
        let spec = self.spectrum();
        eval_spectrum(&self.grid, &spec, points)
    }

    /// Resamples onto another grid through the trigonometric interpolant;
    /// points outside this field's domain receive zero.
    pub fn interpolate_to(&self, target: &Grid1D) -> Field {
        let spec = self.spectrum();
        let half = 0.5 * self.grid.length();
        let nodes = target.nodes();
        let inside: Vec<f64> = nodes
            .iter()
            .map(|&x| if x >= -half && x < half { x } else { 0.0 })
            .collect();
        let mut values = eval_spectrum(&self.grid, &spec, &inside);
        for (v, &x) in values.iter_mut().zip(&nodes) {
            if !(x >= -half && x < half) {
                *v = 0.0;
            }
        }
        Field::from_raw(*target, values)
    }

    pub fn inner(&self, other: &Field) -> Result<f64> {
        inner_l2(self, other)
    }

    pub fn norm_l2(&self) -> f64 {
        norm_l2(self)
    }

    pub fn norm_h1(&self) -> f64 {
        norm_h1(self)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, a: f64) -> Field {
        Field::from_raw(self.grid, self.values.iter().map(|v| a * v).collect())
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &Field) -> Result<()> {
        check_grids(self, other)?;
        for (s, o) in self.values.iter_mut().zip(&other.values) {
            *s += a * o;
        }
        Ok(())
    }

    pub fn pointwise(&self, other: &Field) -> Result<Field> {
        check_grids(self, other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect();
        Ok(Field::from_raw(self.grid, values))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_raw(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.dx()
    }
}

impl Add for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        assert!(self.grid.same_as(&rhs.grid), "grid mismatch in Field addition");
        let values = self.values.iter().zip(&rhs.values).map(|(a, b)| a + b).collect();
        Field::from_raw(self.grid, values)
    }
}

impl Sub for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        assert!(self.grid.same_as(&rhs.grid), "grid mismatch in Field subtraction");
        let values = self.values.iter().zip(&rhs.values).map(|(a, b)| a - b).collect();
        Field::from_raw(self.grid, values)
    }
}

impl Mul<f64> for &Field {
    type Output = Field;
    fn mul(self, rhs: f64) -> Field {
        self.scaled(rhs)
    }
}

fn check_grids(f: &Field, g: &Field) -> Result<()> {
    if f.grid.same_as(&g.grid) {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

/// Multiplier `(ik)^order` for each real-FFT bin. The Nyquist bin is zeroed
/// for odd orders so that real fields stay real.
pub(crate) fn derivative_multipliers(grid: &Grid1D, order: u32) -> Vec<Complex64> {
    let nyq = grid.n() / 2;
    (0..=nyq)
        .map(|m| {
            if m == nyq && order % 2 == 1 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, grid.wavenumber(m)).powu(order)
            }
        })
        .collect()
}

pub fn derivative(f: &Field, order: u32) -> Result<Field> {
    if !(1..=4).contains(&order) {
        return Err(Error::DerivativeOrder(order));
    }
    let mut spec = f.spectrum();
    for (c, m) in spec.iter_mut().zip(derivative_multipliers(&f.grid, order)) {
        *c *= m;
    }
    Ok(Field::from_spectrum(f.grid, &spec))
}

pub fn inner_l2(f: &Field, g: &Field) -> Result<f64> {
    check_grids(f, g)?;
    let s: f64 = f.values.iter().zip(&g.values).map(|(a, b)| a * b).sum();
    Ok(s * f.grid.dx())
}

pub fn norm_l2(f: &Field) -> f64 {
    let s: f64 = f.values.iter().map(|v| v * v).sum();
    (s * f.grid.dx()).sqrt()
}

/// `(∫ f² + f_x²)^{1/2}` with the spectral first derivative.
pub fn norm_h1(f: &Field) -> f64 {
    let fx = derivative(f, 1).expect("order 1 is valid");
    (norm_l2(f).powi(2) + norm_l2(&fx).powi(2)).sqrt()
}

pub(crate) fn apply_shift(grid: &Grid1D, spec: &mut [Complex64], s: f64) {
    let nyq = grid.n() / 2;
    for (m, c) in spec.iter_mut().enumerate() {
        let k = grid.wavenumber(m);
        if m == nyq {
            *c *= (k * s).cos();
        } else {
            *c *= Complex64::from_polar(1.0, -k * s);
        }
    }
}

pub(crate) fn eval_spectrum(grid: &Grid1D, spec: &[Complex64], points: &[f64]) -> Vec<f64> {
    let n = grid.n();
    let nyq = n / 2;
    let x0 = -0.5 * grid.length();
    let dk = grid.wavenumber(1);
    points
        .iter()
        .map(|&x| {
            let theta = x - x0;
            let step = Complex64::from_polar(1.0, dk * theta);
            let mut phase = Complex64::new(1.0, 0.0);
            let mut acc = spec[0].re;
            for (m, c) in spec.iter().enumerate().take(nyq).skip(1) {
                // refresh the recurrence periodically to bound drift
                if m % 64 == 0 {
                    phase = Complex64::from_polar(1.0, dk * m as f64 * theta);
                } else {
                    phase *= step;
                }
                acc += 2.0 * (c * phase).re;
            }
            acc += spec[nyq].re * (grid.wavenumber(nyq) * theta).cos();
            acc / n as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> Grid1D {
        Grid1D::new(20.0, 128).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid1D::new(10.0, 100).is_err());
        assert!(Grid1D::new(10.0, 8).is_err());
        assert!(Grid1D::new(0.0, 64).is_err());
        assert!(Grid1D::new(-1.0, 64).is_err());
    }

    #[test]
    fn nodes_start_at_left_edge() {
        let g = grid();
        assert_eq!(g.x(0), -10.0);
        assert!((g.x(127) - (10.0 - g.dx())).abs() < 1e-14);
    }

    #[test]
    fn first_derivative_of_single_mode() {
        let g = grid();
        let l = g.length();
        let f = Field::from_fn(g, |x| (2.0 * PI * x / l).sin());
        let d = f.derivative(1).unwrap();
        let err = d
            .values()
            .iter()
            .zip(g.nodes())
            .map(|(v, x)| (v - 2.0 * PI / l * (2.0 * PI * x / l).cos()).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-12, "err = {err}");
    }

    #[test]
    fn third_derivative_of_single_mode() {
        let g = grid();
        let l = g.length();
        let k = 6.0 * PI / l;
        let f = Field::from_fn(g, |x| (k * x).cos());
        let d = f.derivative(3).unwrap();
        let err = d
            .values()
            .iter()
            .zip(g.nodes())
            .map(|(v, x)| (v - k.powi(3) * (k * x).sin()).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-11, "err = {err}");
    }

    #[test]
    fn derivative_of_constant_vanishes() {
        let f = Field::from_fn(grid(), |_| 3.5);
        for order in 1..=4 {
            assert!(f.derivative(order).unwrap().max_abs() < 1e-13);
        }
    }

    #[test]
    fn derivative_order_out_of_range() {
        let f = Field::zeros(grid());
        assert!(matches!(f.derivative(0), Err(Error::DerivativeOrder(0))));
        assert!(matches!(f.derivative(5), Err(Error::DerivativeOrder(5))));
    }

    #[test]
    fn inner_product_parity_and_zero() {
        let g = Grid1D::new(40.0, 256).unwrap();
        let q = Field::from_fn(g, |x| (-x * x).exp());
        let qx = q.derivative(1).unwrap();
        assert!(inner_l2(&q, &qx).unwrap().abs() < 1e-12);
        let z = Field::zeros(g);
        assert_eq!(inner_l2(&z, &z).unwrap(), 0.0);
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let a = Field::zeros(grid());
        let b = Field::zeros(Grid1D::new(20.0, 256).unwrap());
        assert!(matches!(inner_l2(&a, &b), Err(Error::GridMismatch)));
    }

    #[test]
    fn h1_norm_of_sine_mode() {
        let g = grid();
        let l = g.length();
        let f = Field::from_fn(g, |x| (2.0 * PI * x / l).sin());
        let expected = (l / 2.0 * (1.0 + (2.0 * PI / l).powi(2))).sqrt();
        assert!((f.norm_h1() - expected).abs() < 1e-12);
        assert_eq!(Field::zeros(g).norm_h1(), 0.0);
    }

    #[test]
    fn shift_matches_closed_form() {
        let g = Grid1D::new(40.0, 256).unwrap();
        let f = Field::from_fn(g, |x| (-(x * x)).exp());
        let s = 1.37;
        let shifted = f.shifted(s);
        let expected = Field::from_fn(g, |x| (-((x - s) * (x - s))).exp());
        assert!((&shifted - &expected).max_abs() < 1e-13);
    }

    #[test]
    fn reflection_is_exact_on_nodes() {
        let g = grid();
        let f = Field::from_fn(g, |x| x.sin() + 0.3 * (2.0 * x).cos());
        let r = f.reflected();
        for (i, x) in g.nodes().into_iter().enumerate().skip(1) {
            assert!((r.values()[i] - ((-x).sin() + 0.3 * (-2.0 * x).cos())).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_reproduces_band_limited_function() {
        let g = Grid1D::new(40.0, 256).unwrap();
        let f = Field::from_fn(g, |x| (-(x * x) / 2.0).exp());
        let pts = [0.123, -3.3, 7.77];
        let vals = f.eval_at(&pts);
        for (p, v) in pts.iter().zip(vals) {
            assert!((v - (-(p * p) / 2.0).exp()).abs() < 1e-13);
        }
        let fine = Grid1D::new(40.0, 512).unwrap();
        let up = f.interpolate_to(&fine);
        let exact = Field::from_fn(fine, |x| (-(x * x) / 2.0).exp());
        assert!((&up - &exact).max_abs() < 1e-13);
    }

    #[test]
    fn periodic_wrap_norms_independent_of_domain() {
        let profile = |x: f64| 1.0 / (x.cosh() * x.cosh());
        let a = Field::from_fn(Grid1D::new(80.0, 1024).unwrap(), profile);
        let b = Field::from_fn(Grid1D::new(160.0, 2048).unwrap(), profile);
        assert!((a.norm_l2() - b.norm_l2()).abs() / a.norm_l2() < 1e-10);
        assert!((a.norm_h1() - b.norm_h1()).abs() / a.norm_h1() < 1e-10);
    }

    fn band_limited(coeffs: &[f64], g: Grid1D) -> Field {
        let l = g.length();
        Field::from_fn(g, |x| {
            coeffs
                .iter()
                .enumerate()
                .map(|(m, c)| c * ((m + 1) as f64 * 2.0 * PI * x / l + 0.3 * m as f64).sin())
                .sum()
        })
    }

    proptest! {
        #[test]
        fn parseval_matches_spectral_inner_product(
            a in proptest::collection::vec(-1.0f64..1.0, 8),
            b in proptest::collection::vec(-1.0f64..1.0, 8),
        ) {
            let g = grid();
            let f = band_limited(&a, g);
            let h = band_limited(&b, g);
            let direct = inner_l2(&f, &h).unwrap();
            let (fs, hs) = (f.spectrum(), h.spectrum());
            let n = g.n();
            let mut s = fs[0].re * hs[0].re + fs[n / 2].re * hs[n / 2].re;
            for m in 1..n / 2 {
                s += 2.0 * (fs[m] * hs[m].conj()).re;
            }
            let spectral = s * g.length() / (n * n) as f64;
            let scale = f.norm_l2() * h.norm_l2() + 1e-300;
            prop_assert!((direct - spectral).abs() <= 1e-12 * scale.max(1.0));
        }

        #[test]
        fn second_derivative_composes(a in proptest::collection::vec(-1.0f64..1.0, 8)) {
            let f = band_limited(&a, grid());
            let twice = f.derivative(1).unwrap().derivative(1).unwrap();
            let direct = f.derivative(2).unwrap();
            prop_assert!((&twice - &direct).max_abs() <= 1e-11);
        }

        #[test]
        fn h1_dominates_l2(v in proptest::collection::vec(-1.0f64..1.0, 128)) {
            let f = Field::new(grid(), v).unwrap();
            prop_assert!(f.norm_h1() >= f.norm_l2());
        }
    }
}
