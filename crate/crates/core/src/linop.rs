//! The linearized operator `L_c v = -v_xx - p Q_c^{p-1} v + c v` and the
//! edge eigenstructure of `∂ₓL`.

use std::fs;
use std::path::{Path, PathBuf};

use faer::prelude::*;
use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::dense::{col_from_slice, col_to_vec, diff_matrix};
use crate::error::{Error, Result};
use crate::fit::linear_fit;
use crate::grid::{derivative, eval_spectrum, inner_l2, norm_l2, Field, Grid1D};
use crate::snapshot;
use crate::soliton::{profile_field, q_profile};

/// Eigenvalues below this are treated as discretization artifacts of the
/// generalized kernel rather than a genuine unstable mode.
pub const E0_MIN: f64 = 1e-3;
/// Relative agreement required between the two refinement resolutions.
pub const CONVERGENCE_TOL: f64 = 1e-6;
const IMAG_TOL: f64 = 1e-10;
const CORE_RADIUS: f64 = 20.0;
const CORE_MASS: f64 = 0.999;
const MAX_DENSE: usize = 1024;
const SPURIOUS_DRIFT: f64 = 0.1;
const TAPER_WIDTH: f64 = 10.0;
const TAIL_WINDOW: (f64, f64) = (1e-10, 1e-4);

fn potential(p: u32, c: f64, grid: &Grid1D, center: f64) -> Vec<f64> {
    let pf = p as f64;
    (0..grid.n())
        .map(|i| pf * q_profile(p, c, grid.x(i) - center)[0].powi(p as i32 - 1))
        .collect()
}

/// `L_c v` for the soliton of speed `c` centered at `center`.
pub fn apply_l(v: &Field, p: u32, c: f64, center: f64) -> Field {
    let w = potential(p, c, v.grid(), center);
    apply_with_potential(v, &w, c)
}

fn apply_with_potential(v: &Field, w: &[f64], c: f64) -> Field {
    let vxx = derivative(v, 2).expect("order 2 is valid");
    let values = v
        .values()
        .iter()
        .zip(vxx.values())
        .zip(w)
        .map(|((v, vxx), w)| -vxx - w * v + c * v)
        .collect();
    Field::from_raw(*v.grid(), values)
}

/// `∂ₓL` (eigenfunctions Y±) or `L∂ₓ` (eigenfunctions Z±), c = 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pencil {
    DxL,
    LDx,
}

fn operator_matrix(p: u32, grid: &Grid1D, kind: Pencil) -> Mat<f64> {
    let n = grid.n();
    let d1 = diff_matrix(grid, 1);
    let d3 = diff_matrix(grid, 3);
    let w = potential(p, 1.0, grid, 0.0);
    match kind {
        Pencil::DxL => Mat::from_fn(n, n, |i, j| -d3[(i, j)] + d1[(i, j)] * (1.0 - w[j])),
        Pencil::LDx => Mat::from_fn(n, n, |i, j| -d3[(i, j)] + (1.0 - w[i]) * d1[(i, j)]),
    }
}

fn apply_operator(y: &Field, w: &[f64], kind: Pencil) -> Result<Field> {
    Ok(match kind {
        Pencil::DxL => derivative(&apply_with_potential(y, w, 1.0), 1)?,
        Pencil::LDx => apply_with_potential(&derivative(y, 1)?, w, 1.0),
    })
}

#[derive(Debug, Clone)]
pub struct EdgeSpectrum {
    pub p: u32,
    pub e0: f64,
    pub y_plus: Field,
    pub y_minus: Field,
    pub z_plus: Field,
    pub z_minus: Field,
    pub eta0: f64,
    pub grid: Grid1D,
    pub report: SpectrumReport,
}

/// Scalar diagnostics of an edge-spectrum computation; also the JSON
/// sidecar of the on-disk cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub p: u32,
    pub length: f64,
    pub n: usize,
    pub e0: f64,
    pub e0_double_resolution: f64,
    pub e0_dense: f64,
    pub n_dense: usize,
    pub eta0: f64,
    pub eigen_residual_plus: f64,
    pub eigen_residual_minus: f64,
    pub dual_residual_plus: f64,
    pub dual_residual_minus: f64,
    pub ortho: f64,
    pub gram: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

impl EdgeSpectrum {
    pub fn z(&self, sign: Sign) -> &Field {
        match sign {
            Sign::Plus => &self.z_plus,
            Sign::Minus => &self.z_minus,
        }
    }

    pub fn y(&self, sign: Sign) -> &Field {
        match sign {
            Sign::Plus => &self.y_plus,
            Sign::Minus => &self.y_minus,
        }
    }

    /// `∫Z⁺Z⁻`
    pub fn gram(&self) -> f64 {
        inner_l2(&self.z_plus, &self.z_minus).expect("same grid")
    }

    /// `‖(LY)_x ∓ e₀Y‖ / ‖Y‖`
    pub fn eigen_residual(&self, sign: Sign) -> f64 {
        let y = self.y(sign);
        let ly = apply_l(y, self.p, 1.0, 0.0);
        let mut r = derivative(&ly, 1).expect("order 1");
        r.axpy(-sign.value() * self.e0, y).expect("same grid");
        norm_l2(&r) / norm_l2(y)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for (name, f) in self.named_fields() {
            snapshot::save_snapshot(f, 0.0, dir.join(format!("{name}.bin")))?;
        }
        fs::write(dir.join("spectrum.json"), serde_json::to_string_pretty(&self.report)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let report: SpectrumReport = serde_json::from_str(&fs::read_to_string(dir.join("spectrum.json"))?)?;
        let load = |name: &str| -> Result<Field> {
            Ok(snapshot::load_snapshot(dir.join(format!("{name}.bin")))?.0)
        };
        let grid = Grid1D::new(report.length, report.n)?;
        let spec = EdgeSpectrum {
            p: report.p,
            e0: report.e0,
            y_plus: load("yplus")?,
            y_minus: load("yminus")?,
            z_plus: load("zplus")?,
            z_minus: load("zminus")?,
            eta0: report.eta0,
            grid,
            report,
        };
        if [&spec.y_plus, &spec.y_minus, &spec.z_plus, &spec.z_minus]
            .iter()
            .any(|f| !f.grid().same_as(&grid))
        {
            return Err(Error::GridMismatch);
        }
        Ok(spec)
    }

    fn named_fields(&self) -> [(&'static str, &Field); 4] {
        [
            ("yplus", &self.y_plus),
            ("yminus", &self.y_minus),
            ("zplus", &self.z_plus),
            ("zminus", &self.z_minus),
        ]
    }
}

/// Cache directory name for a `(p, L, n)` spectrum.
pub fn cache_key(p: u32, grid: &Grid1D) -> String {
    format!("spectrum_p{}_L{}_n{}", p, grid.length(), grid.n())
}

/// Loads the spectrum from `cache_dir` if present, otherwise computes and
/// stores it.
pub fn cached_edge_eigenpair(p: u32, grid: &Grid1D, cache_dir: impl AsRef<Path>) -> Result<EdgeSpectrum> {
    let dir: PathBuf = cache_dir.as_ref().join(cache_key(p, grid));
    if dir.join("spectrum.json").exists() {
        if let Ok(spec) = EdgeSpectrum::load(&dir) {
            if spec.p == p && spec.grid.same_as(grid) {
                return Ok(spec);
            }
        }
    }
    let spec = edge_eigenpair(p, grid)?;
    spec.save(&dir)?;
    Ok(spec)
}

/// Positive real eigenvalue of `∂ₓL` with its eigenfunctions and the dual
/// eigenfunctions `Z± = LY±`, computed at c = 1 on `grid`.
pub fn edge_eigenpair(p: u32, grid: &Grid1D) -> Result<EdgeSpectrum> {
    if p < 2 {
        return Err(Error::InvalidParameter(format!("exponent p must be >= 2, got {p}")));
    }
    let n = grid.n();
    if n < 32 {
        return Err(Error::InvalidGrid("edge spectrum needs n >= 32".into()));
    }
    let n_dense = n.min(MAX_DENSE);
    let coarse = Grid1D::new(grid.length(), n_dense)?;
    let fine = Grid1D::new(grid.length(), 2 * n)?;
    let mut accepted = None;
    for (e_dense, v_dense) in dense_candidates(p, &coarse)? {
        let (e_plus, y_plus) = inverse_iteration(p, grid, Pencil::DxL, e_dense, &v_dense.interpolate_to(grid))?;
        let (e_fine, _) = inverse_iteration(p, &fine, Pencil::DxL, e_plus, &y_plus.interpolate_to(&fine))?;
        let drift = (e_plus - e_fine).abs() / e_plus.abs();
        if drift > SPURIOUS_DRIFT || e_plus <= E0_MIN {
            // a discretization mode of the generalized kernel: it moves
            // with the resolution instead of converging
            continue;
        }
        if drift > CONVERGENCE_TOL {
            return Err(Error::NotConverged { coarse: e_plus, fine: e_fine, n_coarse: n, n_fine: 2 * n });
        }
        accepted = Some((e_dense, e_plus, e_fine, y_plus));
        break;
    }
    let (e_dense, e_plus, e_fine, y_plus) = accepted.ok_or(Error::NoPositiveEigenvalue)?;
    let (e_minus, y_minus) = inverse_iteration(p, grid, Pencil::DxL, -e_plus, &y_plus.reflected())?;
    if (e_minus + e_plus).abs() > CONVERGENCE_TOL * e_plus {
        return Err(Error::Eigensolver(format!(
            "eigenvalue pair is not symmetric: {e_plus} and {e_minus}"
        )));
    }

    let (y_plus, z_plus) = normalize_pair(p, y_plus, e_plus)?;
    let (y_minus, z_minus) = normalize_pair(p, y_minus, e_minus)?;
    let eta0 = fit_decay_rate(&z_plus)?;

    let mut spec = EdgeSpectrum {
        p,
        e0: e_plus,
        y_plus,
        y_minus,
        z_plus,
        z_minus,
        eta0,
        grid: *grid,
        report: SpectrumReport {
            p,
            length: grid.length(),
            n,
            e0: e_plus,
            e0_double_resolution: e_fine,
            e0_dense: e_dense,
            n_dense,
            eta0,
            eigen_residual_plus: 0.0,
            eigen_residual_minus: 0.0,
            dual_residual_plus: 0.0,
            dual_residual_minus: 0.0,
            ortho: 0.0,
            gram: 0.0,
        },
    };
    let (rp, rm, ortho) = dual_residuals(&spec);
    spec.report.eigen_residual_plus = spec.eigen_residual(Sign::Plus);
    spec.report.eigen_residual_minus = spec.eigen_residual(Sign::Minus);
    spec.report.dual_residual_plus = rp;
    spec.report.dual_residual_minus = rm;
    spec.report.ortho = ortho;
    spec.report.gram = spec.gram();
    Ok(spec)
}

/// Full nonsymmetric eigendecomposition on a moderate grid; returns the
/// admissible real eigenvalues, largest first, with their (real)
/// eigenvectors.
fn dense_candidates(p: u32, grid: &Grid1D) -> Result<Vec<(f64, Field)>> {
    let m = operator_matrix(p, grid, Pencil::DxL);
    let eig = m.eigen().map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
    let s = eig.S();
    let u = eig.U();
    let n = grid.n();
    let nodes = grid.nodes();
    let mut found = Vec::new();
    for k in 0..n {
        let lam = s[k];
        if !(lam.re > E0_MIN && lam.im.abs() <= IMAG_TOL * lam.re.max(1.0)) {
            continue;
        }
        // rotate the complex eigenvector so its largest entry is real
        let (imax, _) = (0..n).fold((0, 0.0), |(bi, bv), i| {
            let a = u[(i, k)].norm();
            if a > bv {
                (i, a)
            } else {
                (bi, bv)
            }
        });
        let phase = u[(imax, k)].conj() / u[(imax, k)].norm();
        let values: Vec<f64> = (0..n).map(|i| (u[(i, k)] * phase).re).collect();
        let total: f64 = values.iter().map(|v| v * v).sum();
        let core: f64 = values
            .iter()
            .zip(&nodes)
            .filter(|(_, x)| x.abs() <= CORE_RADIUS)
            .map(|(v, _)| v * v)
            .sum();
        if total > 0.0 && core / total >= CORE_MASS {
            found.push((lam.re, Field::from_raw(*grid, values)));
        }
    }
    found.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(found)
}

/// Shifted inverse iteration for `∂ₓL` on `grid`; returns the eigenvalue
/// (Rayleigh quotient) and the eigenvector.
fn inverse_iteration(p: u32, grid: &Grid1D, kind: Pencil, shift: f64, seed: &Field) -> Result<(f64, Field)> {
    let n = grid.n();
    let mut a = operator_matrix(p, grid, kind);
    for i in 0..n {
        a[(i, i)] -= shift;
    }
    let lu = a.partial_piv_lu();
    let mut y = col_from_slice(seed.values());
    for _ in 0..8 {
        lu.solve_in_place(&mut y);
        let scale = (0..n).fold(0.0f64, |m, i| m.max(y[(i, 0)].abs()));
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Eigensolver("inverse iteration broke down".into()));
        }
        for i in 0..n {
            y[(i, 0)] /= scale;
        }
    }
    let mut y = Field::from_raw(*grid, col_to_vec(&y));
    let w = potential(p, 1.0, grid, 0.0);
    let op = |y: &Field| apply_operator(y, &w, kind);
    let mut lam = inner_l2(&y, &op(&y)?)? / inner_l2(&y, &y)?;
    // residual correction: (M - σ)e = -(My - λy), dropping the component of
    // e along y, which only rescales the eigenvector
    for _ in 0..3 {
        let mut r = op(&y)?;
        r.axpy(-lam, &y)?;
        let mut e = col_from_slice(r.values());
        lu.solve_in_place(&mut e);
        let mut e = Field::from_raw(*grid, col_to_vec(&e));
        let along = inner_l2(&e, &y)? / inner_l2(&y, &y)?;
        e.axpy(-along, &y)?;
        y.axpy(-1.0, &e)?;
        lam = inner_l2(&y, &op(&y)?)? / inner_l2(&y, &y)?;
    }
    if kind == Pencil::LDx {
        return Ok((lam, y));
    }
    // The constant and Nyquist modes lie outside the range of ∂ₓL; whatever
    // the solve left there is round-off.
    let mut spec = y.spectrum();
    spec[0] = Default::default();
    spec[n / 2] = Default::default();
    Ok((lam, Field::from_spectrum(*grid, &spec)))
}

/// Computes `Z = LY` refined as an eigenfunction of `L∂ₓ`, scaled to unit
/// norm, with `Y` scaled alongside and positive at its extremum.
fn normalize_pair(p: u32, y: Field, e: f64) -> Result<(Field, Field)> {
    let z0 = apply_l(&y, p, 1.0, 0.0);
    let (_, z) = inverse_iteration(p, y.grid(), Pencil::LDx, e, &z0)?;
    // fix the scale of the refined Z against LY before normalizing
    let z = z.scaled(inner_l2(&z0, &z)? / inner_l2(&z, &z)?);
    let mut s = 1.0 / norm_l2(&z);
    let extreme = y.values().iter().fold(0.0f64, |m, &v| if v.abs() > m.abs() { v } else { m });
    if extreme < 0.0 {
        s = -s;
    }
    Ok((y.scaled(s), z.scaled(s)))
}

/// Exponential decay rate of `z`: least-squares slope of the log of the
/// envelope `|z| + |z_x|` over each tail, restricted to where it lies in
/// `[1e-10, 1e-4]`; the slower of the two tails is returned.
pub fn fit_decay_rate(z: &Field) -> Result<f64> {
    // the alternating Nyquist mode carries aliasing residue that would
    // otherwise set a false floor in the tails
    let mut spec = z.spectrum();
    spec[z.grid().n() / 2] = Default::default();
    let z = &Field::from_spectrum(*z.grid(), &spec);
    let zx = derivative(z, 1)?;
    let env: Vec<f64> = z.values().iter().zip(zx.values()).map(|(a, b)| a.abs() + b.abs()).collect();
    let grid = z.grid();
    let imax = env
        .iter()
        .enumerate()
        .fold(0, |bi, (i, v)| if *v > env[bi] { i } else { bi });
    let mut rates = Vec::new();
    for right in [false, true] {
        let mut idx: Vec<usize> = if right { (imax..grid.n()).collect() } else { (0..=imax).rev().collect() };
        // stop where the tail bottoms out (noise floor or periodic wrap)
        let bottom = idx
            .iter()
            .enumerate()
            .fold(0, |b, (k, &i)| if env[i] < env[idx[b]] { k } else { b });
        idx.truncate(bottom + 1);
        let (xs, ys): (Vec<f64>, Vec<f64>) = idx
            .into_iter()
            .filter(|&i| env[i] >= TAIL_WINDOW.0 && env[i] <= TAIL_WINDOW.1)
            .map(|i| (grid.x(i), env[i].ln()))
            .unzip();
        let fit = linear_fit(&xs, &ys)
            .ok_or_else(|| Error::DecayFit("tail window contains too few points; enlarge L".into()))?;
        rates.push(if right { -fit.slope } else { fit.slope });
    }
    let eta = rates.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::DecayFit(format!("non-positive decay rate {eta}")));
    }
    Ok(eta)
}

/// `(‖L(Z⁺_x) - e₀Z⁺‖, ‖L(Z⁻_x) + e₀Z⁻‖, max |∫Q_x Z±|)`.
pub fn dual_residuals(spec: &EdgeSpectrum) -> (f64, f64, f64) {
    let qx = profile_field(spec.p, 1.0, &spec.grid, 0.0, 1);
    let res = |sign: Sign| {
        let z = spec.z(sign);
        let zx = derivative(z, 1).expect("order 1");
        let mut r = apply_l(&zx, spec.p, 1.0, 0.0);
        r.axpy(-sign.value() * spec.e0, z).expect("same grid");
        norm_l2(&r)
    };
    let ortho = [Sign::Plus, Sign::Minus]
        .iter()
        .map(|&s| inner_l2(&qx, spec.z(s)).expect("same grid").abs())
        .fold(0.0, f64::max);
    (res(Sign::Plus), res(Sign::Minus), ortho)
}

/// `c^{1/(p-1)} Z±(√c (x - c t - x0))` on `grid`, by trigonometric
/// interpolation of the base eigenfunction; zero outside its domain.
pub fn scaled_dual(spec: &EdgeSpectrum, c: f64, x0: f64, t: f64, grid: &Grid1D, sign: Sign) -> Result<Field> {
    let center = x0 + c * t;
    if grid.edge_distance(center) <= 0.0 {
        return Err(Error::OutsideSafeRegion { center });
    }
    Ok(scaled_profile(spec.z(sign), spec.p, c, center, grid))
}

pub(crate) fn scaled_profile(base: &Field, p: u32, c: f64, center: f64, grid: &Grid1D) -> Field {
    let sc = c.sqrt();
    let amp = c.powf(1.0 / (p as f64 - 1.0));
    let half = 0.5 * base.grid().length();
    let xi: Vec<f64> = grid.nodes().iter().map(|x| sc * (x - center)).collect();
    let inside: Vec<f64> = xi.iter().map(|&s| if s >= -half && s < half { s } else { 0.0 }).collect();
    let mut spec = base.spectrum();
    // the base Nyquist mode is aliasing residue; on a finer target grid it
    // would turn into a genuine high-frequency cosine
    spec[base.grid().n() / 2] = Default::default();
    let mut vals = eval_spectrum(base.grid(), &spec, &inside);
    // cut off smoothly only when the target reaches past the base domain
    let covered = xi.iter().all(|s| *s >= -half && *s < half);
    for (v, s) in vals.iter_mut().zip(&xi) {
        *v *= if covered { amp } else { amp * edge_taper(s.abs(), half) };
    }
    Field::from_raw(*grid, vals)
}

/// Smooth cutoff: 1 for `r <= half - TAPER_WIDTH`, 0 for `r >= half`.
fn edge_taper(r: f64, half: f64) -> f64 {
    let a = half - TAPER_WIDTH.min(0.5 * half);
    if r <= a {
        return 1.0;
    }
    if r >= half {
        return 0.0;
    }
    let t = (r - a) / (half - a);
    let f = |s: f64| if s > 0.0 { (-1.0 / s).exp() } else { 0.0 };
    f(1.0 - t) / (f(1.0 - t) + f(t))
}

/// A dual eigenfunction attached to one soliton of speed `c`, precomputed
/// on a run grid so that translated copies are cheap.
#[derive(Debug, Clone)]
pub struct ScaledDual {
    pub c: f64,
    pub x0: f64,
    pub sign: Sign,
    /// `±e₀ c^{3/2}`
    pub eigenvalue: f64,
    centered: Field,
}

impl ScaledDual {
    pub fn new(spec: &EdgeSpectrum, c: f64, x0: f64, sign: Sign, grid: &Grid1D) -> Self {
        Self {
            c,
            x0,
            sign,
            eigenvalue: sign.value() * spec.e0 * c.powf(1.5),
            centered: scaled_profile(spec.z(sign), spec.p, c, 0.0, grid),
        }
    }

    /// Profile at time `t`, translated by an extra offset `y`.
    pub fn at(&self, t: f64, y: f64) -> Field {
        self.centered.shifted(self.x0 + self.c * t + y)
    }

    pub fn centered(&self) -> &Field {
        &self.centered
    }
}

/// Real roots of `k³ - k + e₀ = 0` and the real part of the complex pair
/// (if any): the exponential rates of solutions of the far-field equation.
pub fn tail_characteristic_roots(e0: f64) -> (Vec<f64>, Option<f64>) {
    // depressed cubic k³ + pk + q with p = -1, q = e0
    let (pc, qc) = (-1.0f64, e0);
    let disc = (qc / 2.0).powi(2) + (pc / 3.0).powi(3);
    if disc > 0.0 {
        let s = disc.sqrt();
        let k = (-qc / 2.0 + s).cbrt() + (-qc / 2.0 - s).cbrt();
        (vec![k], Some(-k / 2.0))
    } else {
        let r = (-pc / 3.0).sqrt();
        let phi = (-qc / (2.0 * r.powi(3))).clamp(-1.0, 1.0).acos();
        let roots = (0..3)
            .map(|m| 2.0 * r * ((phi - 2.0 * std::f64::consts::PI * m as f64) / 3.0).cos())
            .collect();
        (roots, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::soliton::ground_state;
    use crate::testing::spec6;

    #[test]
    fn kernel_direction() {
        let g = Grid1D::new(64.0, 1024).unwrap();
        let qx = profile_field(6, 1.0, &g, 0.0, 1);
        let r = apply_l(&qx, 6, 1.0, 0.0);
        assert!(r.max_abs() <= 1e-10 * norm_l2(&qx));
    }

    #[test]
    fn translation_equivariance() {
        let g = Grid1D::new(64.0, 1024).unwrap();
        let v = Field::from_fn(g, |x| (-(x - 1.0) * (x - 1.0) / 3.0).exp());
        let a = apply_l(&v.shifted(2.5), 6, 1.3, 2.5);
        let b = apply_l(&v, 6, 1.3, 0.0).shifted(2.5);
        assert!((&a - &b).max_abs() < 1e-12);
    }

    #[test]
    fn power_of_ground_state_is_eigenfunction() {
        let g = Grid1D::new(64.0, 2048).unwrap();
        let q = ground_state(6, 1.0, &g, 0.0).unwrap();
        let v = q.map(|q| q.powf(3.5));
        let lv = apply_l(&v, 6, 1.0, 0.0);
        let floor = 1e-3 * v.max_abs();
        let mu = crate::golden::MU0_P6;
        let spread = v
            .values()
            .iter()
            .zip(lv.values())
            .filter(|(v, _)| **v > floor)
            .map(|(v, l)| (l / v - mu).abs())
            .fold(0.0, f64::max);
        assert!(spread < 1e-9, "{spread}");
    }

    #[test]
    fn p6_edge_eigenpair() {
        let s = spec6();
        assert!(s.e0 > 0.0);
        assert!((s.e0 - crate::golden::E0_P6).abs() < crate::golden::EIG_TOL, "e0 = {}", s.e0);
        assert!((s.gram() - crate::golden::GRAM_P6).abs() < 1e-5);
        assert!(s.report.eigen_residual_plus <= 1e-8);
        assert!(s.report.eigen_residual_minus <= 1e-8);
        assert!((norm_l2(&s.z_plus) - 1.0).abs() <= 1e-12);
        assert!((norm_l2(&s.z_minus) - 1.0).abs() <= 1e-12);
        assert!((&s.y_minus - &s.y_plus.reflected()).max_abs() <= 1e-10);
        let (rp, rm, ortho) = dual_residuals(s);
        assert!(rp <= 1e-8 && rm <= 1e-8, "{rp} {rm}");
        assert!(ortho <= 1e-10, "{ortho}");
        let gram = s.gram();
        assert!(gram.abs() < 1.0);
        assert!(1.0 - gram * gram > 1e-6);
    }

    #[test]
    fn decay_rate_matches_characteristic_roots() {
        let s = spec6();
        let (_, slow) = tail_characteristic_roots(s.e0);
        let slow = slow.unwrap();
        assert!((s.eta0 - slow).abs() / slow < 0.05, "eta0 {} vs {}", s.eta0, slow);
    }

    #[test]
    fn y_is_isotropic_for_l() {
        let s = spec6();
        for sign in [Sign::Plus, Sign::Minus] {
            let y = s.y(sign);
            let ly = apply_l(y, 6, 1.0, 0.0);
            let h1 = y.norm_h1();
            assert!(inner_l2(&ly, y).unwrap().abs() <= 1e-8 * h1 * h1);
        }
    }

    #[test]
    fn subcritical_has_no_edge_eigenvalue() {
        let g = Grid1D::new(64.0, 512).unwrap();
        for p in [2, 3, 4] {
            let r = edge_eigenpair(p, &g);
            assert!(matches!(r, Err(Error::NoPositiveEigenvalue)), "p={p} {:?}", r.map(|s| s.report));
        }
    }

    #[test]
    fn scaled_dual_identity_and_norm() {
        let s = spec6();
        let same = scaled_dual(s, 1.0, 0.0, 0.0, &s.grid, Sign::Plus).unwrap();
        assert!((&same - &s.z_plus).max_abs() < 1e-12);

        let g = Grid1D::new(80.0, 2048).unwrap();
        let c = 2.0f64;
        let z = scaled_dual(s, c, 1.0, 0.5, &g, Sign::Plus).unwrap();
        let expected = c.powf(0.2 - 0.25);
        assert!((norm_l2(&z) - expected).abs() < 1e-10, "{}", norm_l2(&z));
        let zx = z.derivative(1).unwrap();
        let mut r = apply_l(&zx, 6, c, 2.0);
        r.axpy(-s.e0 * c.powf(1.5), &z).unwrap();
        assert!(norm_l2(&r) <= 1e-7, "{}", norm_l2(&r));
    }

    #[test]
    fn scaled_dual_precomputed_matches_direct() {
        let s = spec6();
        let g = Grid1D::new(160.0, 4096).unwrap();
        let d = ScaledDual::new(s, 1.3, -10.0, Sign::Minus, &g);
        let direct = scaled_dual(s, 1.3, -10.0, 2.0, &g, Sign::Minus).unwrap();
        assert!((&d.at(2.0, 0.0) - &direct).max_abs() < 1e-9);
        assert!(d.eigenvalue < 0.0);
    }

    #[test]
    fn cache_round_trip() {
        let s = spec6();
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join(cache_key(6, &s.grid));
        s.save(&sub).unwrap();
        let t = cached_edge_eigenpair(6, &s.grid, dir.path()).unwrap();
        assert_eq!(t.e0, s.e0);
        assert_eq!(t.z_plus, s.z_plus);
        assert_eq!(t.report, s.report);
    }

    #[test]
    fn characteristic_roots() {
        let (real, pair) = tail_characteristic_roots(0.6345);
        assert_eq!(real.len(), 1);
        let k = real[0];
        assert!((k * k * k - k + 0.6345).abs() < 1e-12);
        assert!(pair.unwrap() > 0.0);
    }
}
