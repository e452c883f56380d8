//! Translation modulation of a field near a soliton sum, the unstable and
//! stable coefficients `a±`, and the final-data map `â⁺ ↦ b`.

use faer::prelude::*;
use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{inner_l2, norm_l2, Field, Grid1D};
use crate::linop::{EdgeSpectrum, ScaledDual, Sign};
use crate::soliton::{ensemble_field, mass_exponent, q_profile, SolitonEnsemble};

const MAX_NEWTON: usize = 25;
const RESIDUAL_TOL: f64 = 1e-11;
const RELATIVE_TOL: f64 = 1e-10;
const STEP_TOL: f64 = 1e-14;
const MAX_HALVINGS: usize = 12;
/// Default modulation radius as a fraction of the smallest soliton mass norm.
pub const RADIUS_FRACTION: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct ModulationState {
    pub t: f64,
    pub y: Vec<f64>,
    pub v: Field,
    pub a_plus: Vec<f64>,
    pub a_minus: Vec<f64>,
    /// `max_j |∫v R̃_{j,x}|`
    pub residual: f64,
    /// Residual relative to `‖v‖ ‖R̃_{j,x}‖`.
    pub orthogonality: f64,
    pub iterations: usize,
}

/// Serializable summary for time-series logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationRecord {
    pub t: f64,
    pub y: Vec<f64>,
    pub a_plus: Vec<f64>,
    pub a_minus: Vec<f64>,
    pub v_l2: f64,
    pub v_h1: f64,
    pub residual: f64,
}

impl ModulationState {
    pub fn record(&self) -> ModulationRecord {
        ModulationRecord {
            t: self.t,
            y: self.y.clone(),
            a_plus: self.a_plus.clone(),
            a_minus: self.a_minus.clone(),
            v_l2: self.v.norm_l2(),
            v_h1: self.v.norm_h1(),
            residual: self.residual,
        }
    }
}

/// Modulation machinery for one ensemble on one grid, with the dual
/// eigenfunctions precomputed.
#[derive(Debug, Clone)]
pub struct Modulator {
    ens: SolitonEnsemble,
    grid: Grid1D,
    duals: Vec<[ScaledDual; 2]>,
    radius: f64,
    gram: f64,
}

impl Modulator {
    pub fn new(ens: &SolitonEnsemble, spectrum: &EdgeSpectrum, grid: &Grid1D) -> Result<Self> {
        if spectrum.p != ens.p() {
            return Err(Error::InvalidParameter(format!(
                "spectrum computed for p = {}, ensemble has p = {}",
                spectrum.p,
                ens.p()
            )));
        }
        let duals = ens
            .params()
            .iter()
            .map(|s| {
                [
                    ScaledDual::new(spectrum, s.c, s.x0, Sign::Plus, grid),
                    ScaledDual::new(spectrum, s.c, s.x0, Sign::Minus, grid),
                ]
            })
            .collect();
        let p = ens.p();
        let radius = RADIUS_FRACTION
            * ens
                .params()
                .iter()
                .map(|s| soliton_mass_norm(p, s.c, grid))
                .fold(f64::INFINITY, f64::min);
        Ok(Self { ens: ens.clone(), grid: *grid, duals, radius, gram: spectrum.gram() })
    }

    pub fn with_radius(mut self, radius: f64) -> Self {
        self.radius = radius;
        self
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn ensemble(&self) -> &SolitonEnsemble {
        &self.ens
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    /// Backward growth rates `e₀ c_j^{3/2}` of `a⁺_j`.
    pub fn growth_rates(&self) -> Vec<f64> {
        self.duals.iter().map(|d| d[0].eigenvalue.abs()).collect()
    }

    /// `∫Z⁺Z⁻` of the unit-normalized base duals.
    pub fn gram(&self) -> f64 {
        self.gram
    }

    fn centers(&self, t: f64, y: &[f64]) -> Vec<f64> {
        self.ens.params().iter().zip(y).map(|(s, yj)| s.center(t) + yj).collect()
    }

    /// Modulated sum `R̃` and the per-soliton derivatives `R̃_{j,x}`, `R̃_{j,xx}`.
    pub fn profiles(&self, t: f64, y: &[f64]) -> (Field, Vec<Field>, Vec<Field>) {
        let p = self.ens.p();
        let n = self.grid.n();
        let mut sum = vec![0.0; n];
        let mut dx = Vec::with_capacity(y.len());
        let mut dxx = Vec::with_capacity(y.len());
        for (s, center) in self.ens.params().iter().zip(self.centers(t, y)) {
            let mut d1 = vec![0.0; n];
            let mut d2 = vec![0.0; n];
            for i in 0..n {
                let [q, q1, q2] = q_profile(p, s.c, self.grid.x(i) - center);
                sum[i] += q;
                d1[i] = q1;
                d2[i] = q2;
            }
            dx.push(Field::from_raw(self.grid, d1));
            dxx.push(Field::from_raw(self.grid, d2));
        }
        (Field::from_raw(self.grid, sum), dx, dxx)
    }

    /// Orthogonality functionals `Φ_j = ∫(u - R̃) R̃_{j,x}`.
    pub fn residual(&self, u: &Field, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        let (r, dx, _) = self.profiles(t, y);
        let v = u - &r;
        dx.iter().map(|d| inner_l2(&v, d)).collect()
    }

    /// `∂Φ_j/∂y_k = ∫R̃_{k,x} R̃_{j,x} - δ_{jk} ∫v R̃_{j,xx}`
    pub fn jacobian(&self, u: &Field, t: f64, y: &[f64]) -> Result<Mat<f64>> {
        let (r, dx, dxx) = self.profiles(t, y);
        let v = u - &r;
        jacobian_from(&v, &dx, &dxx)
    }

    pub fn duals_at(&self, t: f64, y: &[f64]) -> Vec<[Field; 2]> {
        self.duals
            .iter()
            .zip(y)
            .map(|([zp, zm], yj)| [zp.at(t, *yj), zm.at(t, *yj)])
            .collect()
    }

    /// `a±_j = ∫v Z̃±_j`
    pub fn coeffs(&self, v: &Field, t: f64, y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut plus = Vec::with_capacity(y.len());
        let mut minus = Vec::with_capacity(y.len());
        for [zp, zm] in self.duals_at(t, y) {
            plus.push(inner_l2(v, &zp)?);
            minus.push(inner_l2(v, &zm)?);
        }
        Ok((plus, minus))
    }

    /// Solves `Φ(y) = 0` by damped Newton from `y_guess`.
    pub fn decompose(&self, u: &Field, t: f64, y_guess: &[f64]) -> Result<ModulationState> {
        if !u.grid().same_as(&self.grid) {
            return Err(Error::GridMismatch);
        }
        if y_guess.len() != self.ens.len() {
            return Err(Error::InvalidParameter("one offset guess per soliton required".into()));
        }
        let r0 = ensemble_field(&self.ens, t, &self.grid)?;
        let distance = norm_l2(&(u - &r0));
        if !(distance <= self.radius) {
            return Err(Error::OutOfRadius { distance, radius: self.radius });
        }
        let mut y = y_guess.to_vec();
        let mut iterations = 0;
        loop {
            let (r, dx, dxx) = self.profiles(t, &y);
            let v = u - &r;
            let phi: Vec<f64> = dx.iter().map(|d| inner_l2(&v, d)).collect::<Result<_>>()?;
            let res = max_abs(&phi);
            let scale = v.norm_l2() * dx.iter().map(norm_l2).fold(f64::INFINITY, f64::min);
            if res <= RESIDUAL_TOL && res <= RELATIVE_TOL * scale {
                return self.finish(u, t, y, v, &dx, res, iterations);
            }
            if iterations >= MAX_NEWTON {
                return Err(Error::NewtonDivergence { iterations, residual: res });
            }
            iterations += 1;
            let jac = jacobian_from(&v, &dx, &dxx)?;
            let step = solve(&jac, &phi);
            // full step, halved while the residual grows
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..MAX_HALVINGS {
                let trial: Vec<f64> = y.iter().zip(&step).map(|(a, s)| a - lambda * s).collect();
                let trial_res = max_abs(&self.residual(u, t, &trial)?);
                if trial_res < res || trial_res <= RESIDUAL_TOL {
                    y = trial;
                    accepted = true;
                    break;
                }
                lambda *= 0.5;
            }
            let step_size = lambda * max_abs(&step);
            if !accepted || step_size <= STEP_TOL {
                if res <= RESIDUAL_TOL {
                    if accepted {
                        let (r, dx, _) = self.profiles(t, &y);
                        let v = u - &r;
                        let phi: Vec<f64> = dx.iter().map(|d| inner_l2(&v, d)).collect::<Result<_>>()?;
                        return self.finish(u, t, y, v, &dx, max_abs(&phi), iterations);
                    }
                    return self.finish(u, t, y, v, &dx, res, iterations);
                }
                return Err(Error::NewtonDivergence { iterations, residual: res });
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        _u: &Field,
        t: f64,
        y: Vec<f64>,
        v: Field,
        dx: &[Field],
        residual: f64,
        iterations: usize,
    ) -> Result<ModulationState> {
        let (a_plus, a_minus) = self.coeffs(&v, t, &y)?;
        let vn = v.norm_l2();
        let orthogonality = dx
            .iter()
            .map(|d| {
                let denom = vn * norm_l2(d);
                let r = inner_l2(&v, d).unwrap_or(f64::NAN).abs();
                if denom > 0.0 { r / denom } else { r }
            })
            .fold(0.0, f64::max);
        Ok(ModulationState { t, y, v, a_plus, a_minus, residual, orthogonality, iterations })
    }

    /// Block Gram matrix `P = [[A, gA], [gA, A]]` with `A = diag(‖Z̃_j‖²)`.
    pub fn gram_jacobian(&self) -> Mat<f64> {
        let n = self.ens.len();
        let p = self.ens.p();
        let a: Vec<f64> = self.ens.params().iter().map(|s| s.c.powf(mass_exponent(p))).collect();
        Mat::from_fn(2 * n, 2 * n, |i, j| {
            if i % n != j % n {
                0.0
            } else if (i < n) == (j < n) {
                a[i % n]
            } else {
                self.gram * a[i % n]
            }
        })
    }

    /// Largest entry of `FD(b ↦ (a⁺, a⁻)) - P` at `Sn`, central differences
    /// with step `h`.
    pub fn final_jacobian_defect(&self, sn: f64, h: f64) -> Result<f64> {
        let p = self.gram_jacobian();
        let n = 2 * self.ens.len();
        let mut worst = 0.0f64;
        for k in 0..n {
            let mut b = vec![0.0; n];
            b[k] = h;
            let (plus, _) = self.final_coeffs(sn, &b)?;
            b[k] = -h;
            let (minus, _) = self.final_coeffs(sn, &b)?;
            for i in 0..n {
                worst = worst.max(((plus[i] - minus[i]) / (2.0 * h) - p[(i, k)]).abs());
            }
        }
        Ok(worst)
    }

    /// `R(Sn) + Σ b⁺_j Z⁺_j(Sn) + b⁻_j Z⁻_j(Sn)` with `b = (b⁺, b⁻)`.
    pub fn final_field(&self, sn: f64, b: &[f64]) -> Result<Field> {
        let n = self.ens.len();
        let mut u = ensemble_field(&self.ens, sn, &self.grid)?;
        let zero = vec![0.0; n];
        for (j, [zp, zm]) in self.duals_at(sn, &zero).iter().enumerate() {
            u.axpy(b[j], zp)?;
            u.axpy(b[n + j], zm)?;
        }
        Ok(u)
    }

    /// `b ↦ (a⁺, a⁻)` of the decomposed final field.
    pub fn final_coeffs(&self, sn: f64, b: &[f64]) -> Result<(Vec<f64>, ModulationState)> {
        let u = self.final_field(sn, b)?;
        let state = self.decompose(&u, sn, &vec![0.0; self.ens.len()])?;
        let mut out = state.a_plus.clone();
        out.extend_from_slice(&state.a_minus);
        Ok((out, state))
    }

    /// Final data with `a⁺(Sn) = â⁺` and `a⁻(Sn) = 0`. `ball` is the nominal
    /// radius for `‖â⁺‖`; up to ten times it is accepted with a warning flag.
    pub fn final_data(&self, a_hat_plus: &[f64], sn: f64, ball: f64) -> Result<FinalData> {
        let n = self.ens.len();
        if a_hat_plus.len() != n {
            return Err(Error::InvalidParameter("one coefficient per soliton required".into()));
        }
        let norm = euclid(a_hat_plus);
        if norm > 10.0 * ball {
            return Err(Error::InvalidParameter(format!(
                "|a+| = {norm:.3e} is more than ten times the ball radius {ball:.3e}"
            )));
        }
        let mut target = a_hat_plus.to_vec();
        target.extend(std::iter::repeat_n(0.0, n));
        // quasi-Newton: Gram-matrix Jacobian with Broyden updates
        let mut jac = self.gram_jacobian();
        let mut b = solve(&jac, &target);
        let (mut g, mut state) = self.final_coeffs(sn, &b)?;
        let mut f: Vec<f64> = g.iter().zip(&target).map(|(a, t)| a - t).collect();
        let mut iterations = 1;
        while max_abs(&f) > RESIDUAL_TOL {
            if iterations > MAX_NEWTON {
                return Err(Error::FinalDataDivergence(max_abs(&f)));
            }
            let step = solve(&jac, &f);
            let b_new: Vec<f64> = b.iter().zip(&step).map(|(x, s)| x - s).collect();
            let (g_new, s_new) = self.final_coeffs(sn, &b_new)?;
            let f_new: Vec<f64> = g_new.iter().zip(&target).map(|(a, t)| a - t).collect();
            let db: Vec<f64> = b_new.iter().zip(&b).map(|(a, c)| a - c).collect();
            let df: Vec<f64> = f_new.iter().zip(&f).map(|(a, c)| a - c).collect();
            broyden_update(&mut jac, &db, &df);
            b = b_new;
            g = g_new;
            f = f_new;
            state = s_new;
            iterations += 1;
        }
        let _ = g;
        let u = self.final_field(sn, &b)?;
        Ok(FinalData {
            sn,
            b,
            u,
            a_hat_plus: a_hat_plus.to_vec(),
            state,
            residual: max_abs(&f),
            iterations,
            outside_ball: norm > ball,
        })
    }
}

#[derive(Debug, Clone)]
pub struct FinalData {
    pub sn: f64,
    /// `(b⁺_1..b⁺_N, b⁻_1..b⁻_N)`
    pub b: Vec<f64>,
    pub u: Field,
    pub a_hat_plus: Vec<f64>,
    /// Decomposition of `u` at `Sn`.
    pub state: ModulationState,
    pub residual: f64,
    pub iterations: usize,
    /// `‖â⁺‖` exceeded the nominal ball (but not ten times it).
    pub outside_ball: bool,
}

/// One-shot decomposition without keeping the [`Modulator`].
pub fn decompose(
    u: &Field,
    ens: &SolitonEnsemble,
    t: f64,
    y_guess: &[f64],
    spectrum: &EdgeSpectrum,
) -> Result<ModulationState> {
    Modulator::new(ens, spectrum, u.grid())?.decompose(u, t, y_guess)
}

pub fn unstable_coeffs(
    v: &Field,
    ens: &SolitonEnsemble,
    y: &[f64],
    t: f64,
    spectrum: &EdgeSpectrum,
) -> Result<(Vec<f64>, Vec<f64>)> {
    Modulator::new(ens, spectrum, v.grid())?.coeffs(v, t, y)
}

pub fn final_data(
    a_hat_plus: &[f64],
    ens: &SolitonEnsemble,
    sn: f64,
    spectrum: &EdgeSpectrum,
    grid: &Grid1D,
    ball: f64,
) -> Result<FinalData> {
    Modulator::new(ens, spectrum, grid)?.final_data(a_hat_plus, sn, ball)
}

/// `‖Q_c‖_{L²}` by quadrature on `grid`.
fn soliton_mass_norm(p: u32, c: f64, grid: &Grid1D) -> f64 {
    let s: f64 = (0..grid.n()).map(|i| q_profile(p, c, grid.x(i))[0].powi(2)).sum();
    (s * grid.dx()).sqrt()
}

fn jacobian_from(v: &Field, dx: &[Field], dxx: &[Field]) -> Result<Mat<f64>> {
    let n = dx.len();
    let mut jac = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        for k in 0..n {
            jac[(j, k)] = inner_l2(&dx[k], &dx[j])?;
        }
        jac[(j, j)] -= inner_l2(v, &dxx[j])?;
    }
    Ok(jac)
}

fn solve(a: &Mat<f64>, b: &[f64]) -> Vec<f64> {
    let lu = a.partial_piv_lu();
    let mut rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
    lu.solve_in_place(&mut rhs);
    (0..b.len()).map(|i| rhs[(i, 0)]).collect()
}

/// Good Broyden rank-one update `J += (df - J db) dbᵀ / (dbᵀ db)`.
pub(crate) fn broyden_update(jac: &mut Mat<f64>, db: &[f64], df: &[f64]) {
    let dd: f64 = db.iter().map(|x| x * x).sum();
    if dd == 0.0 {
        return;
    }
    let n = db.len();
    let jdb: Vec<f64> = (0..n).map(|i| (0..n).map(|k| jac[(i, k)] * db[k]).sum()).collect();
    for i in 0..n {
        let r = (df[i] - jdb[i]) / dd;
        for k in 0..n {
            jac[(i, k)] += r * db[k];
        }
    }
}

pub(crate) fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub(crate) fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::soliton::{profile_field, SolitonParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use crate::testing::spec6;

    fn grid() -> Grid1D {
        Grid1D::new(64.0, 1024).unwrap()
    }

    fn single(c: f64) -> Modulator {
        Modulator::new(&SolitonEnsemble::single(6, c, 0.0).unwrap(), spec6(), &grid()).unwrap()
    }

    fn pair() -> (SolitonEnsemble, Modulator, Grid1D) {
        let g = Grid1D::new(128.0, 2048).unwrap();
        let ens = SolitonEnsemble::new(
            6,
            vec![SolitonParams { c: 0.7, x0: -20.0 }, SolitonParams { c: 1.3, x0: 20.0 }],
        )
        .unwrap();
        let m = Modulator::new(&ens, spec6(), &g).unwrap();
        (ens, m, g)
    }

    #[test]
    fn exact_sum_decomposes_to_zero() {
        let m = single(1.0);
        let u = ensemble_field(m.ensemble(), 0.0, &grid()).unwrap();
        let s = m.decompose(&u, 0.0, &[0.0]).unwrap();
        assert_eq!(s.y, vec![0.0]);
        assert!(s.v.max_abs() == 0.0);
        assert_eq!(s.a_plus, vec![0.0]);
    }

    #[test]
    fn recovers_translation() {
        let m = single(1.0);
        let g = grid();
        let u = profile_field(6, 1.0, &g, 0.1, 0);
        let s = m.decompose(&u, 0.0, &[0.0]).unwrap();
        assert!((s.y[0] - 0.1).abs() <= 1e-8, "{:?}", s.y);
        assert!(s.v.norm_h1() <= 1e-8);
        let (r, _, _) = m.profiles(0.0, &s.y);
        assert!((&(&r + &s.v) - &u).max_abs() <= 1e-13);
    }

    #[test]
    fn unstable_perturbation_is_second_order_in_y() {
        let m = single(1.0);
        let g = grid();
        let r = ensemble_field(m.ensemble(), 0.0, &g).unwrap();
        let zp = m.duals_at(0.0, &[0.0])[0][0].clone();
        let probe = |eps: f64| {
            let mut u = r.clone();
            u.axpy(eps, &zp).unwrap();
            let s = m.decompose(&u, 0.0, &[0.0]).unwrap();
            let mut d = s.v.clone();
            d.axpy(-eps, &zp).unwrap();
            (s.y[0].abs(), d.norm_l2())
        };
        for eps in [1e-3, 5e-4] {
            let (y, d) = probe(eps);
            assert!(y <= 10.0 * eps * eps && d <= 10.0 * eps * eps, "{eps}: {y} {d}");
        }
    }

    #[test]
    fn coefficients_of_duals() {
        let m = single(1.0);
        let zp = m.duals_at(0.0, &[0.0])[0][0].clone();
        let (ap, am) = m.coeffs(&zp, 0.0, &[0.0]).unwrap();
        assert!((ap[0] - 1.0).abs() <= 1e-10, "{}", ap[0]);
        assert!((am[0] - spec6().gram()).abs() <= 1e-10);

        let m2 = single(2.0);
        let zp2 = m2.duals_at(0.0, &[0.0])[0][0].clone();
        let (ap2, _) = m2.coeffs(&zp2, 0.0, &[0.0]).unwrap();
        assert!((ap2[0] - 2f64.powf(-0.1)).abs() <= 1e-9, "{}", ap2[0]);
    }

    #[test]
    fn projected_random_fields_have_zero_coefficients() {
        let (_, m, g) = pair();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let duals: Vec<Field> = m.duals_at(0.0, &[0.0, 0.0]).into_iter().flatten().collect();
        let set = crate::coercivity::ConstraintSet::new("duals", duals).unwrap();
        let bumps: Vec<(f64, f64)> =
            (0..5).map(|_| (rng.gen_range(-30.0..30.0), rng.gen_range(-1.0..1.0))).collect();
        let v = Field::from_fn(g, |x| bumps.iter().map(|(m, a)| a * (-(x - m).powi(2) / 10.0).exp()).sum());
        let v = set.project_out(&v).unwrap();
        let (ap, am) = m.coeffs(&v, 0.0, &[0.0, 0.0]).unwrap();
        assert!(max_abs(&ap) <= 1e-12 && max_abs(&am) <= 1e-12);
    }

    #[test]
    fn jacobian_is_diagonally_dominant_for_separated_pair() {
        let (ens, m, g) = pair();
        let u = ensemble_field(&ens, 0.0, &g).unwrap();
        let jac = m.jacobian(&u, 0.0, &[0.0, 0.0]).unwrap();
        for (j, s) in ens.params().iter().enumerate() {
            let qx = profile_field(6, s.c, &g, s.center(0.0), 1);
            assert!((jac[(j, j)] - qx.norm_l2().powi(2)).abs() <= 1e-12);
        }
        assert!(jac[(0, 1)].abs() <= 1e-10);
    }

    #[test]
    fn lipschitz_bound_over_random_perturbations() {
        let (ens, m, g) = pair();
        let r = ensemble_field(&ens, 0.0, &g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let (a, x, w) = (rng.gen_range(-1.0..1.0), rng.gen_range(-30.0..30.0), rng.gen_range(0.5..4.0));
            let pert = Field::from_fn(g, |s| a * (-((s - x) / w).powi(2)).exp());
            let pert = pert.scaled(0.5 * m.radius() * rng.gen_range(0.01..1.0) / pert.norm_l2());
            let u = &r + &pert;
            let s = m.decompose(&u, 0.0, &[0.0, 0.0]).unwrap();
            assert!(s.orthogonality <= 1e-10);
            let ratio = (s.v.norm_l2() + s.y.iter().map(|y| y.abs()).sum::<f64>()) / pert.norm_l2();
            worst = worst.max(ratio);
        }
        assert!(worst < 10.0, "{worst}");
    }

    #[test]
    fn out_of_radius_is_rejected() {
        let m = single(1.0);
        let u = Field::zeros(grid());
        assert!(matches!(m.decompose(&u, 0.0, &[0.0]), Err(Error::OutOfRadius { .. })));
    }

    #[test]
    fn final_data_zero_and_round_trip() {
        let (_, m, _) = pair();
        let sn = 0.0;
        let fd = m.final_data(&[0.0, 0.0], sn, 1e-2).unwrap();
        assert!(max_abs(&fd.b) == 0.0);

        let a_hat = [1e-2, 0.0];
        let fd = m.final_data(&a_hat, sn, 1e-2).unwrap();
        let s = m.decompose(&fd.u, sn, &[0.0, 0.0]).unwrap();
        assert!((s.a_plus[0] - a_hat[0]).abs() <= 1e-10 && s.a_plus[1].abs() <= 1e-10);
        assert!(max_abs(&s.a_minus) <= 1e-10);
        assert!(euclid(&fd.b) <= 20.0 * euclid(&a_hat));
        assert!(!fd.outside_ball);
        assert!(m.final_data(&[1.0, 0.0], sn, 1e-2).is_err());
        assert!(m.final_data(&[2e-2, 0.0], sn, 1e-2).unwrap().outside_ball);
    }

    #[test]
    fn final_map_jacobian_matches_gram_structure() {
        let (_, m, _) = pair();
        let defect = m.final_jacobian_defect(0.0, 1e-6).unwrap();
        assert!(defect <= 1e-6, "{defect}");
    }

    #[test]
    fn final_data_is_locally_injective() {
        let (_, m, _) = pair();
        let a = m.final_data(&[1e-3, 0.0], 0.0, 1e-2).unwrap();
        let b = m.final_data(&[1e-3 + 1e-8, 0.0], 0.0, 1e-2).unwrap();
        let d = (b.state.a_plus[0] - a.state.a_plus[0]) - 1e-8;
        assert!(d.abs() <= 1e-10);
        assert!(euclid(&a.b) != euclid(&b.b));
    }
}
