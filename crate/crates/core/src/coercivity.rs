//! Coercivity of the quadratic form `(L_c v, v)` against the H¹ norm on
//! constrained subspaces, and the localized forms used along trajectories.

use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dense::diff_matrix;
use crate::error::{Error, Result};
use crate::grid::{derivative, inner_l2, norm_l2, Field, Grid1D};
use crate::linop::{scaled_dual, EdgeSpectrum, Sign};
use crate::soliton::{profile_field, q_profile, SolitonEnsemble};

const GRAM_MIN: f64 = 1e-10;
const PENALTY: f64 = 1e3;
const PARTITION_TOL: f64 = 1e-12;

/// Directions a test function must be L²-orthogonal to.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    label: String,
    fields: Vec<Field>,
}

impl ConstraintSet {
    pub fn new(label: impl Into<String>, fields: Vec<Field>) -> Result<Self> {
        if let Some(first) = fields.first() {
            if fields.iter().any(|f| !f.grid().same_as(first.grid())) {
                return Err(Error::GridMismatch);
            }
        }
        let det = normalized_gram_det(&fields)?;
        if fields.len() > 1 && det <= GRAM_MIN {
            return Err(Error::DegenerateConstraints(det));
        }
        Ok(Self { label: label.into(), fields })
    }

    /// `{Z̃⁺, Z̃⁻, Q_c'}`
    pub fn unstable_and_kernel(spec: &EdgeSpectrum, c: f64, center: f64, grid: &Grid1D) -> Result<Self> {
        Self::new(
            "Z+,Z-,Qx",
            vec![
                scaled_dual(spec, c, center, 0.0, grid, Sign::Plus)?,
                scaled_dual(spec, c, center, 0.0, grid, Sign::Minus)?,
                profile_field(spec.p, c, grid, center, 1),
            ],
        )
    }

    /// `{Q_c'}`
    pub fn kernel(p: u32, c: f64, center: f64, grid: &Grid1D) -> Result<Self> {
        Self::new("Qx", vec![profile_field(p, c, grid, center, 1)])
    }

    /// `{Q_c^{(p+1)/2}, Q_c'}`
    pub fn negative_and_kernel(p: u32, c: f64, center: f64, grid: &Grid1D) -> Result<Self> {
        Self::new(
            "Q^((p+1)/2),Qx",
            vec![ground_power(p, c, center, grid), profile_field(p, c, grid, center, 1)],
        )
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    /// A copy without the constraint at `index`.
    pub fn without(&self, index: usize) -> Result<Self> {
        let mut fields = self.fields.clone();
        fields.remove(index);
        Self::new(format!("{} minus #{index}", self.label), fields)
    }

    /// L² projection of `v` onto the orthogonal complement of the set.
    pub fn project_out(&self, v: &Field) -> Result<Field> {
        let basis = orthonormal_basis(&self.fields)?;
        let mut out = v.clone();
        for b in &basis {
            let a = inner_l2(&out, b)?;
            out.axpy(-a, b)?;
        }
        Ok(out)
    }
}

/// `Q_c^{(p+1)/2}` centered at `center`.
pub fn ground_power(p: u32, c: f64, center: f64, grid: &Grid1D) -> Field {
    let e = (p as f64 + 1.0) / 2.0;
    Field::from_fn(*grid, |x| q_profile(p, c, x - center)[0].powf(e))
}

fn orthonormal_basis(fields: &[Field]) -> Result<Vec<Field>> {
    let mut basis: Vec<Field> = Vec::with_capacity(fields.len());
    for f in fields {
        let mut g = f.clone();
        // two passes of Gram-Schmidt for numerical orthogonality
        for _ in 0..2 {
            for b in &basis {
                let a = inner_l2(&g, b)?;
                g.axpy(-a, b)?;
            }
        }
        let n = norm_l2(&g);
        if n <= GRAM_MIN.sqrt() * norm_l2(f) {
            return Err(Error::DegenerateConstraints(n));
        }
        basis.push(g.scaled(1.0 / n));
    }
    Ok(basis)
}

fn normalized_gram_det(fields: &[Field]) -> Result<f64> {
    let m = fields.len();
    let norms: Vec<f64> = fields.iter().map(norm_l2).collect();
    if norms.contains(&0.0) {
        return Ok(0.0);
    }
    let g = Mat::<f64>::from_fn(m, m, |i, j| {
        inner_l2(&fields[i], &fields[j]).unwrap_or(f64::NAN) / (norms[i] * norms[j])
    });
    if m == 0 {
        return Ok(1.0);
    }
    Ok(g.determinant())
}

/// Circulant `B^{-1/2}` with `B` the discrete H¹ form
/// `dx (I + D₁ᵀD₁)`.
fn h1_inverse_sqrt(grid: &Grid1D) -> Mat<f64> {
    let n = grid.n();
    let nyq = n / 2;
    let dx = grid.dx();
    let spec: Vec<num_complex::Complex64> = (0..=nyq)
        .map(|m| {
            let k = if m == nyq { 0.0 } else { grid.wavenumber(m) };
            num_complex::Complex64::new((1.0 + k * k).powf(-0.5) / dx.sqrt(), 0.0)
        })
        .collect();
    let col = Field::from_spectrum(*grid, &spec);
    let s = col.values();
    Mat::from_fn(n, n, |i, j| s[(i + n - j) % n])
}

/// Minimum of `(L_c v, v) / ‖v‖²_{H¹}` over `v` L²-orthogonal to the
/// constraints, with a minimizer normalized to unit H¹ norm.
pub fn constrained_min_rayleigh(
    p: u32,
    c: f64,
    center: f64,
    constraints: &ConstraintSet,
    grid: &Grid1D,
) -> Result<(f64, Field)> {
    if constraints.fields().iter().any(|f| !f.grid().same_as(grid)) {
        return Err(Error::GridMismatch);
    }
    let n = grid.n();
    let dx = grid.dx();
    let d2 = diff_matrix(grid, 2);
    let w: Vec<f64> = (0..n)
        .map(|i| p as f64 * q_profile(p, c, grid.x(i) - center)[0].powi(p as i32 - 1))
        .collect();
    let a = Mat::<f64>::from_fn(n, n, |i, j| {
        dx * (-d2[(i, j)] + if i == j { c - w[i] } else { 0.0 })
    });
    let s = h1_inverse_sqrt(grid);
    let sa = &s * &a;
    let mut m = &sa * &s;

    // transformed constraints S c_i, orthonormalized in the Euclidean sense
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for f in constraints.fields() {
        let col = &s * crate::dense::col_from_slice(f.values());
        let mut v: Vec<f64> = (0..n).map(|i| col[(i, 0)]).collect();
        let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= GRAM_MIN.sqrt() * norm0 {
            return Err(Error::DegenerateConstraints(norm / norm0));
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }

    // P M P + s C Cᵀ: the constrained directions become eigenvectors with
    // eigenvalue s, far above the spectrum of interest
    if !basis.is_empty() {
        let cmat = Mat::<f64>::from_fn(n, basis.len(), |i, k| basis[k][i]);
        let ct_m = cmat.transpose() * &m;
        let m_c = &m * &cmat;
        let ct_m_c = &ct_m * &cmat;
        let mut pmp = m.clone();
        pmp -= &cmat * &ct_m;
        pmp -= &m_c * cmat.transpose();
        pmp += &cmat * &ct_m_c * cmat.transpose();
        pmp += (&cmat * cmat.transpose()) * faer::Scale(PENALTY);
        m = pmp;
    }
    // symmetrize against round-off
    let m = Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
    let eig = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
    let lam = eig.S()[0];
    let u = eig.U();
    let wvec = Mat::<f64>::from_fn(n, 1, |i, _| u[(i, 0)]);
    let v = &s * &wvec;
    let v = Field::from_raw(*grid, (0..n).map(|i| v[(i, 0)]).collect());
    let h1 = v.norm_h1();
    Ok((lam, v.scaled(1.0 / h1)))
}

/// `(L_c v, v) / ‖v‖²_{H¹}`
pub fn rayleigh_quotient(v: &Field, p: u32, c: f64, center: f64) -> Result<f64> {
    let lv = crate::linop::apply_l(v, p, c, center);
    let h1 = v.norm_h1();
    Ok(inner_l2(&lv, v)? / (h1 * h1))
}

/// Constrained minima at `n/2` and `n` nodes (same length).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergedMinimum {
    pub coarse: f64,
    pub fine: f64,
    pub n_coarse: usize,
    pub n_fine: usize,
}

impl ConvergedMinimum {
    pub fn relative_change(&self) -> f64 {
        (self.fine - self.coarse).abs() / self.fine.abs()
    }
}

/// Runs [`constrained_min_rayleigh`] on `grid` and on the half-resolution
/// grid, rebuilding the constraints with `build` on each.
pub fn two_resolution_min(
    p: u32,
    c: f64,
    center: f64,
    grid: &Grid1D,
    build: impl Fn(&Grid1D) -> Result<ConstraintSet>,
) -> Result<ConvergedMinimum> {
    let half = Grid1D::new(grid.length(), grid.n() / 2)?;
    let (coarse, _) = constrained_min_rayleigh(p, c, center, &build(&half)?, &half)?;
    let (fine, _) = constrained_min_rayleigh(p, c, center, &build(grid)?, grid)?;
    Ok(ConvergedMinimum { coarse, fine, n_coarse: half.n(), n_fine: grid.n() })
}

/// `H_j = ∫(v_x² - p R̃_j^{p-1} v² + c_j v²) φ_j` for each soliton, with
/// `R̃_j` the modulated soliton shifted by `y_j`.
pub fn localized_form_h(
    v: &Field,
    ens: &SolitonEnsemble,
    y: &[f64],
    weights: &[Field],
    t: f64,
) -> Result<Vec<f64>> {
    if weights.len() != ens.len() || y.len() != ens.len() {
        return Err(Error::InvalidParameter("one offset and one weight per soliton required".into()));
    }
    check_partition(weights)?;
    let grid = v.grid();
    let vx = derivative(v, 1)?;
    let p = ens.p();
    let dx = grid.dx();
    let mut out = Vec::with_capacity(ens.len());
    for ((s, yj), phi) in ens.params().iter().zip(y).zip(weights) {
        if !phi.grid().same_as(grid) {
            return Err(Error::GridMismatch);
        }
        let center = s.center(t) + yj;
        let mut acc = 0.0;
        for i in 0..grid.n() {
            let r = q_profile(p, s.c, grid.x(i) - center)[0];
            let vi = v.values()[i];
            let density = vx.values()[i].powi(2) - p as f64 * r.powi(p as i32 - 1) * vi * vi + s.c * vi * vi;
            acc += density * phi.values()[i];
        }
        out.push(acc * dx);
    }
    Ok(out)
}

pub fn check_partition(weights: &[Field]) -> Result<()> {
    let Some(first) = weights.first() else {
        return Err(Error::Partition(1.0));
    };
    let n = first.grid().n();
    let dev = (0..n)
        .map(|i| (weights.iter().map(|w| w.values()[i]).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    if dev > PARTITION_TOL {
        return Err(Error::Partition(dev));
    }
    Ok(())
}

/// Constant in `‖v‖²_{H¹} ≤ K ΣH_j + K² Σ(a±_j)²`, from the measured
/// coercivity constant at unit speed and the slowest speed.
pub fn coercivity_k(lambda_star: f64, c_min: f64) -> f64 {
    2.0 / (lambda_star * c_min.min(1.0))
}

/// Sum of six random Gaussian bumps within `|x| < 6` of `center`.
pub fn random_bump_field(g: &Grid1D, center: f64, rng: &mut impl Rng) -> Field {
    let terms: Vec<(f64, f64, f64)> = (0..6)
        .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-6.0..6.0), rng.gen_range(0.5..3.0)))
        .collect();
    Field::from_fn(*g, |x| terms.iter().map(|(a, m, w)| a * (-((x - center - m) / w).powi(2)).exp()).sum())
}

/// Smallest Rayleigh quotient over `samples` random bump fields projected
/// onto the constrained subspace; an upper bound for the constrained minimum.
pub fn random_probe(p: u32, c: f64, center: f64, constraints: &ConstraintSet, samples: usize, seed: u64) -> Result<f64> {
    let Some(grid) = constraints.fields().first().map(|f| *f.grid()) else {
        return Err(Error::InvalidParameter("probe needs at least one constraint".into()));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::INFINITY;
    for _ in 0..samples {
        let v = constraints.project_out(&random_bump_field(&grid, center, &mut rng))?;
        best = best.min(rayleigh_quotient(&v, p, c, center)?);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::soliton::SolitonParams;
    use crate::testing::spec6;

    fn grid() -> Grid1D {
        Grid1D::new(64.0, 1024).unwrap()
    }

    #[test]
    fn kernel_only_is_negative() {
        let g = grid();
        let set = ConstraintSet::kernel(6, 1.0, 0.0, &g).unwrap();
        let (lam, _) = constrained_min_rayleigh(6, 1.0, 0.0, &set, &g).unwrap();
        assert!(lam < 0.0);
        assert!((lam - (1.0 - 6.0)).abs() < 1e-10, "{lam}");
        let witness = ground_power(6, 1.0, 0.0, &g);
        assert!(rayleigh_quotient(&witness, 6, 1.0, 0.0).unwrap() < 0.0);
    }

    #[test]
    fn unstable_kernel_constraints_are_coercive_and_nested() {
        let g = grid();
        let full = ConstraintSet::unstable_and_kernel(spec6(), 1.0, 0.0, &g).unwrap();
        let (lam, v) = constrained_min_rayleigh(6, 1.0, 0.0, &full, &g).unwrap();
        assert!(lam > 0.0, "{lam}");
        assert!((lam - crate::golden::LAMBDA_STAR_P6).abs() < crate::golden::EIG_TOL, "{lam}");
        for f in full.fields() {
            assert!(inner_l2(&v, f).unwrap().abs() < 1e-8);
        }
        assert!((rayleigh_quotient(&v, 6, 1.0, 0.0).unwrap() - lam).abs() < 1e-8);
        for k in 0..full.len() {
            let (sub, _) = constrained_min_rayleigh(6, 1.0, 0.0, &full.without(k).unwrap(), &g).unwrap();
            assert!(sub <= lam + 1e-10);
        }
    }

    #[test]
    fn negative_direction_constraint_is_coercive() {
        let g = grid();
        let set = ConstraintSet::negative_and_kernel(6, 1.0, 0.0, &g).unwrap();
        let (nu, _) = constrained_min_rayleigh(6, 1.0, 0.0, &set, &g).unwrap();
        assert!(nu > 0.0, "{nu}");
        assert!((nu - crate::golden::NU_P6).abs() < crate::golden::EIG_TOL, "{nu}");
    }

    #[test]
    fn degenerate_constraints_rejected() {
        let g = grid();
        let qx = profile_field(6, 1.0, &g, 0.0, 1);
        let r = ConstraintSet::new("dup", vec![qx.clone(), qx.scaled(2.0)]);
        assert!(matches!(r, Err(Error::DegenerateConstraints(_))));
    }

    #[test]
    fn localized_form_basics() {
        let g = Grid1D::new(64.0, 1024).unwrap();
        let ens = SolitonEnsemble::single(6, 1.0, 0.0).unwrap();
        let ones = vec![Field::from_fn(g, |_| 1.0)];
        let h = localized_form_h(&Field::zeros(g), &ens, &[0.0], &ones, 0.0).unwrap();
        assert_eq!(h, vec![0.0]);
        let rx = profile_field(6, 1.0, &g, 0.3, 1);
        let h = localized_form_h(&rx, &ens, &[0.3], &ones, 0.0).unwrap();
        let h1 = rx.norm_h1();
        assert!(h[0].abs() <= 1e-6 * h1 * h1);
        let bad = vec![Field::from_fn(g, |_| 0.9)];
        assert!(matches!(localized_form_h(&rx, &ens, &[0.0], &bad, 0.0), Err(Error::Partition(_))));
    }

    #[test]
    fn localized_form_bounds_constrained_random_fields() {
        let g = Grid1D::new(64.0, 512).unwrap();
        let set = ConstraintSet::unstable_and_kernel(spec6(), 1.0, 0.0, &g).unwrap();
        let (lam, _) = constrained_min_rayleigh(6, 1.0, 0.0, &set, &g).unwrap();
        let ens = SolitonEnsemble::new(6, vec![SolitonParams { c: 1.0, x0: 0.0 }]).unwrap();
        let ones = vec![Field::from_fn(g, |_| 1.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let v = random_bump_field(&g, 0.0, &mut rng);
            let v = set.project_out(&v).unwrap();
            let h = localized_form_h(&v, &ens, &[0.0], &ones, 0.0).unwrap()[0];
            let h1 = v.norm_h1();
            assert!(h >= lam * h1 * h1 - 1e-9 * h1 * h1, "{h} vs {}", lam * h1 * h1);
        }
    }

    #[test]
    fn probe_bounds_minimum_and_is_seeded() {
        let g = Grid1D::new(64.0, 512).unwrap();
        let set = ConstraintSet::unstable_and_kernel(spec6(), 1.0, 0.0, &g).unwrap();
        let (lam, _) = constrained_min_rayleigh(6, 1.0, 0.0, &set, &g).unwrap();
        let a = random_probe(6, 1.0, 0.0, &set, 10, 3).unwrap();
        assert!(a >= lam - 1e-9, "{a} vs {lam}");
        assert_eq!(a, random_probe(6, 1.0, 0.0, &set, 10, 3).unwrap());
        assert_ne!(a, random_probe(6, 1.0, 0.0, &set, 10, 4).unwrap());
    }
}