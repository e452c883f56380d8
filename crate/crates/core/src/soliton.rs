//! Ground states, traveling solitons and their superpositions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{derivative, Field, Grid1D};

/// Largest admissible `|Q_c|` at the domain edges relative to the peak.
pub const WRAP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolitonParams {
    pub c: f64,
    pub x0: f64,
}

impl SolitonParams {
    pub fn new(c: f64, x0: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidParameter(format!("speed must be positive, got {c}")));
        }
        if !x0.is_finite() {
            return Err(Error::InvalidParameter("center must be finite".into()));
        }
        Ok(Self { c, x0 })
    }

    pub fn center(&self, t: f64) -> f64 {
        self.x0 + self.c * t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolitonEnsemble {
    p: u32,
    params: Vec<SolitonParams>,
    min_separation: f64,
}

impl SolitonEnsemble {
    pub fn new(p: u32, params: Vec<SolitonParams>) -> Result<Self> {
        check_p(p)?;
        if params.is_empty() {
            return Err(Error::InvalidParameter("ensemble needs at least one soliton".into()));
        }
        for s in &params {
            SolitonParams::new(s.c, s.x0)?;
        }
        if params.windows(2).any(|w| w[0].c >= w[1].c) {
            return Err(Error::InvalidParameter("speeds must be strictly increasing".into()));
        }
        Ok(Self { p, params, min_separation: 0.0 })
    }

    pub fn single(p: u32, c: f64, x0: f64) -> Result<Self> {
        Self::new(p, vec![SolitonParams::new(c, x0)?])
    }

    /// Sets the pairwise separation enforced by [`ensemble_field`].
    pub fn with_min_separation(mut self, d: f64) -> Self {
        self.min_separation = d.max(0.0);
        self
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn params(&self) -> &[SolitonParams] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn speeds(&self) -> Vec<f64> {
        self.params.iter().map(|s| s.c).collect()
    }

    pub fn centers(&self, t: f64) -> Vec<f64> {
        self.params.iter().map(|s| s.center(t)).collect()
    }

    pub fn min_separation(&self) -> f64 {
        self.min_separation
    }

    /// Smallest distance between neighbouring centers at time `t`.
    pub fn separation(&self, t: f64) -> f64 {
        let mut xs = self.centers(t);
        xs.sort_by(|a, b| a.total_cmp(b));
        xs.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }

    pub fn check_separation(&self, t: f64) -> Result<()> {
        let xs = self.centers(t);
        for i in 0..xs.len() {
            for j in i + 1..xs.len() {
                let d = (xs[j] - xs[i]).abs();
                if d < self.min_separation {
                    return Err(Error::Separation { i, j, distance: d, minimum: self.min_separation });
                }
            }
        }
        Ok(())
    }
}

fn check_p(p: u32) -> Result<()> {
    if p < 2 {
        return Err(Error::InvalidParameter(format!("exponent p must be >= 2, got {p}")));
    }
    Ok(())
}

/// `Q(x) = ((p+1)/(2 cosh²((p-1)x/2)))^{1/(p-1)}`, evaluated in log form so
/// the tails underflow gracefully instead of overflowing `cosh`.
pub fn q_unit(p: u32, x: f64) -> f64 {
    let pm1 = (p - 1) as f64;
    let a = (0.5 * pm1 * x).abs();
    let e = (-2.0 * a).exp();
    // 1/cosh²(a) = 4 e^{-2a} / (1 + e^{-2a})²
    let log_sech2 = (4.0f64).ln() - 2.0 * a - 2.0 * e.ln_1p();
    (((p + 1) as f64 / 2.0).ln() + log_sech2).mul_add(1.0 / pm1, 0.0).exp()
}

/// Values of `Q_c`, `Q_c'` and `Q_c''` at `xi` (distance from the center).
pub fn q_profile(p: u32, c: f64, xi: f64) -> [f64; 3] {
    let sc = c.sqrt();
    let pm1 = (p - 1) as f64;
    let q = c.powf(1.0 / pm1) * q_unit(p, sc * xi);
    let th = (0.5 * pm1 * sc * xi).tanh();
    [q, -sc * th * q, c * q - q.powi(p as i32)]
}

fn peak(p: u32, c: f64) -> f64 {
    q_profile(p, c, 0.0)[0]
}

/// Edge tail of a profile centered at `center`, relative to its peak.
pub fn edge_tail(p: u32, c: f64, grid: &Grid1D, center: f64) -> f64 {
    let d = grid.edge_distance(center);
    if d <= 0.0 {
        return 1.0;
    }
    q_profile(p, c, d)[0] / peak(p, c)
}

/// `Q_c(x - center)` sampled on the grid.
pub fn ground_state(p: u32, c: f64, grid: &Grid1D, center: f64) -> Result<Field> {
    check_p(p)?;
    SolitonParams::new(c, center)?;
    let tail = edge_tail(p, c, grid, center);
    if tail > WRAP_TOL {
        return Err(Error::TailWrap { tail, tol: WRAP_TOL });
    }
    Ok(profile_field(p, c, grid, center, 0))
}

/// Closed-form `Q_c`, `Q_c'` or `Q_c''` (by `order` 0, 1, 2) centered at
/// `center`, without tail checks.
pub fn profile_field(p: u32, c: f64, grid: &Grid1D, center: f64, order: usize) -> Field {
    Field::from_fn(*grid, |x| q_profile(p, c, x - center)[order])
}

/// Traveling wave `R_{c,x0}(t)`.
pub fn soliton_field(p: u32, params: SolitonParams, t: f64, grid: &Grid1D) -> Result<Field> {
    let center = params.center(t);
    if edge_tail(p, params.c, grid, center) > WRAP_TOL {
        return Err(Error::OutsideSafeRegion { center });
    }
    ground_state(p, params.c, grid, center)
}

/// `R(t) = Σ_j R_j(t)`.
pub fn ensemble_field(ens: &SolitonEnsemble, t: f64, grid: &Grid1D) -> Result<Field> {
    ens.check_separation(t)?;
    let mut acc = Field::zeros(*grid);
    for s in ens.params() {
        acc.axpy(1.0, &soliton_field(ens.p(), *s, t, grid)?)?;
    }
    Ok(acc)
}

/// `(∫u², ½∫u_x² - 1/(p+1)∫u^{p+1})`.
pub fn conserved_quantities(u: &Field, p: u32) -> (f64, f64) {
    let ux = derivative(u, 1).expect("order 1 is valid");
    let dx = u.grid().dx();
    let pp1 = (p + 1) as i32;
    let mass: f64 = u.values().iter().map(|v| v * v).sum::<f64>() * dx;
    let kinetic: f64 = ux.values().iter().map(|v| v * v).sum::<f64>() * dx;
    let potential: f64 = u.values().iter().map(|v| v.powi(pp1)).sum::<f64>() * dx;
    (mass, 0.5 * kinetic - potential / (p + 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criticality {
    Subcritical,
    Critical,
    Supercritical,
}

/// Sign class of `d/dc ∫Q_c²` together with the mass exponent `k` in
/// `∫Q_c² = c^k ∫Q²`, `k = (5-p)/(2(p-1))`.
pub fn criticality(p: u32, _c: f64) -> Result<(Criticality, f64)> {
    check_p(p)?;
    let exponent = mass_exponent(p);
    let class = match p.cmp(&5) {
        std::cmp::Ordering::Less => Criticality::Subcritical,
        std::cmp::Ordering::Equal => Criticality::Critical,
        std::cmp::Ordering::Greater => Criticality::Supercritical,
    };
    Ok((class, exponent))
}

pub fn mass_exponent(p: u32) -> f64 {
    (5.0 - p as f64) / (2.0 * (p as f64 - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g() -> Grid1D {
        Grid1D::new(128.0, 4096).unwrap()
    }

    #[test]
    fn peak_value_p6() {
        let q = ground_state(6, 1.0, &g(), 0.0).unwrap();
        assert!((q.values()[2048] - 3.5f64.powf(0.2)).abs() < 1e-14);
        assert!((q.values()[2048] - 1.28473).abs() < 1e-5);
    }

    #[test]
    fn profile_equation_residual() {
        let grid = g();
        for p in 2..=8 {
            for &c in &[0.5, 1.0, 2.0] {
                let q = ground_state(p, c, &grid, 0.0).unwrap();
                let qxx = q.derivative(2).unwrap();
                let res = q
                    .values()
                    .iter()
                    .zip(qxx.values())
                    .map(|(q, qxx)| (qxx + q.powi(p as i32) - c * q).abs())
                    .fold(0.0, f64::max);
                assert!(res <= 1e-10, "p={p} c={c} residual {res}");
            }
        }
    }

    #[test]
    fn closed_form_derivatives_match_spectral() {
        let grid = Grid1D::new(64.0, 2048).unwrap();
        let q = ground_state(6, 1.7, &grid, 3.0).unwrap();
        for order in 1..=2 {
            let exact = profile_field(6, 1.7, &grid, 3.0, order);
            let spec = q.derivative(order as u32).unwrap();
            assert!((&exact - &spec).max_abs() < 1e-10);
        }
    }

    #[test]
    fn scaling_of_peak() {
        let grid = g();
        let q1 = ground_state(6, 1.0, &grid, 0.0).unwrap().max_abs();
        for &c in &[0.5, 2.0] {
            let qc = ground_state(6, c, &grid, 0.0).unwrap().max_abs();
            assert!((qc - c.powf(0.2) * q1).abs() < 1e-12);
        }
    }

    #[test]
    fn tail_wrap_rejected() {
        let grid = Grid1D::new(20.0, 256).unwrap();
        assert!(matches!(ground_state(6, 1.0, &grid, 0.0), Err(Error::TailWrap { .. })));
    }

    #[test]
    fn traveling_wave_is_translation() {
        let grid = g();
        let s = SolitonParams::new(1.3, -5.0).unwrap();
        let r0 = soliton_field(6, s, 0.0, &grid).unwrap();
        assert_eq!(r0, ground_state(6, 1.3, &grid, -5.0).unwrap());
        let r = soliton_field(6, s, 2.5, &grid).unwrap();
        assert!((&r - &r0.shifted(1.3 * 2.5)).max_abs() < 1e-12);
        let (m0, _) = conserved_quantities(&r0, 6);
        let (m1, _) = conserved_quantities(&r, 6);
        assert!((m0 - m1).abs() < 1e-12);
    }

    #[test]
    fn outside_safe_region() {
        let grid = g();
        let s = SolitonParams::new(1.0, 50.0).unwrap();
        assert!(matches!(soliton_field(6, s, 20.0, &grid), Err(Error::OutsideSafeRegion { .. })));
    }

    #[test]
    fn ensemble_is_additive() {
        let grid = g();
        let a = SolitonParams::new(0.7, -20.0).unwrap();
        let b = SolitonParams::new(1.3, 20.0).unwrap();
        let one = SolitonEnsemble::new(6, vec![a]).unwrap();
        let two = SolitonEnsemble::new(6, vec![a, b]).unwrap();
        let r1 = ensemble_field(&one, 0.0, &grid).unwrap();
        assert_eq!(r1, soliton_field(6, a, 0.0, &grid).unwrap());
        let r2 = ensemble_field(&two, 0.0, &grid).unwrap();
        let rb = soliton_field(6, b, 0.0, &grid).unwrap();
        assert!((&(&r2 - &r1) - &rb).max_abs() <= 1e-15);
    }

    #[test]
    fn far_separated_masses_add() {
        let grid = Grid1D::new(256.0, 4096).unwrap();
        let a = SolitonParams::new(0.7, -30.0).unwrap();
        let b = SolitonParams::new(1.3, 20.0).unwrap();
        let ens = SolitonEnsemble::new(6, vec![a, b]).unwrap();
        let sigma_sqrt = (0.15f64).sqrt();
        for &t in &[0.0, 5.0] {
            let r = ensemble_field(&ens, t, &grid).unwrap();
            let (m, _) = conserved_quantities(&r, 6);
            let (ma, _) = conserved_quantities(&soliton_field(6, a, t, &grid).unwrap(), 6);
            let (mb, _) = conserved_quantities(&soliton_field(6, b, t, &grid).unwrap(), 6);
            let tol = (-sigma_sqrt * ens.separation(t)).exp();
            assert!((m - ma - mb).abs() <= tol);
        }
    }

    #[test]
    fn separation_violation() {
        let a = SolitonParams::new(0.7, 0.0).unwrap();
        let b = SolitonParams::new(1.3, 5.0).unwrap();
        let ens = SolitonEnsemble::new(6, vec![a, b]).unwrap().with_min_separation(10.0);
        assert!(matches!(ensemble_field(&ens, 0.0, &g()), Err(Error::Separation { .. })));
    }

    #[test]
    fn ensemble_validation() {
        let a = SolitonParams { c: 1.0, x0: 0.0 };
        assert!(SolitonEnsemble::new(6, vec![a, a]).is_err());
        assert!(SolitonEnsemble::new(1, vec![a]).is_err());
        assert!(SolitonEnsemble::new(6, vec![]).is_err());
        assert!(SolitonParams::new(-1.0, 0.0).is_err());
    }

    #[test]
    fn zero_field_quantities() {
        assert_eq!(conserved_quantities(&Field::zeros(g()), 6), (0.0, 0.0));
    }

    #[test]
    fn quantities_converge_under_refinement() {
        let a = ground_state(6, 1.0, &g(), 0.0).unwrap();
        let b = ground_state(6, 1.0, &Grid1D::new(128.0, 8192).unwrap(), 0.0).unwrap();
        let (ma, ea) = conserved_quantities(&a, 6);
        let (mb, eb) = conserved_quantities(&b, 6);
        assert!(ma > 0.0);
        assert!((ma - mb).abs() / ma < 1e-10);
        assert!((ea - eb).abs() / ea.abs() < 1e-10);
        assert!((a.inner(&a).unwrap() - ma).abs() < 1e-14);
    }

    #[test]
    fn mass_and_energy_scaling() {
        let grid = g();
        for p in [3u32, 5, 6] {
            let (m1, e1) = conserved_quantities(&ground_state(p, 1.0, &grid, 0.0).unwrap(), p);
            for &c in &[0.5, 2.0] {
                let (mc, ec) = conserved_quantities(&ground_state(p, c, &grid, 0.0).unwrap(), p);
                let k = mass_exponent(p);
                assert!((mc / m1 - c.powf(k)).abs() / c.powf(k) < 1e-9, "p={p} c={c}");
                if p == 6 {
                    let ke = c.powf(k + 1.0);
                    assert!((ec / e1 - ke).abs() / ke < 1e-9);
                }
            }
        }
    }

    #[test]
    fn criticality_classes() {
        assert_eq!(criticality(3, 1.0).unwrap().0, Criticality::Subcritical);
        let (class, k) = criticality(5, 1.0).unwrap();
        assert_eq!(class, Criticality::Critical);
        assert_eq!(k, 0.0);
        let (class, k) = criticality(6, 1.0).unwrap();
        assert_eq!(class, Criticality::Supercritical);
        assert!(k < 0.0);
    }
}
