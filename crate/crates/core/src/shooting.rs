//! Backward shooting from final data at `Sn` down to `T0`: the tube
//! conditions, exit times, and the search for the unstable coefficient
//! `â⁺` whose trajectory stays in the tube.

use std::io::Write;
use std::path::Path;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::coercivity::{coercivity_k, localized_form_h};
use crate::error::{Error, Result};
use crate::evolver::{check_drift, check_health, spectral_tail, stable_dt, EvolveOptions, Stepper, RESOLVED_TAIL};
use crate::fit::{linear_fit, LinearFit};
use crate::golden;
use crate::grid::{derivative, norm_h1, Field, Grid1D};
use crate::linop::EdgeSpectrum;
use crate::modulation::{broyden_update, euclid, ModulationState, Modulator};
use crate::soliton::{conserved_quantities, ensemble_field, SolitonEnsemble};

/// `¼ min{η₀, e₀^{2/3} c₁, c₁, c₂ - c₁, …}`
pub fn compute_sigma0(ens: &SolitonEnsemble, spectrum: &EdgeSpectrum) -> f64 {
    let c = ens.speeds();
    let mut m = spectrum.eta0.min(spectrum.e0.powf(2.0 / 3.0) * c[0]).min(c[0]);
    for w in c.windows(2) {
        m = m.min(w[1] - w[0]);
    }
    0.25 * m
}

/// `max(4, 2/σ₀^{3/2})`
pub fn default_t0(sigma0: f64) -> f64 {
    4f64.max(2.0 / sigma0.powf(1.5))
}

/// Minimum separation at the final time, `20/√σ₀`.
pub fn default_separation(sigma0: f64) -> f64 {
    20.0 / sigma0.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeRadii {
    pub v: f64,
    pub y: f64,
    pub a_minus: f64,
    pub a_plus: f64,
}

impl Default for TubeRadii {
    fn default() -> Self {
        Self { v: 1.0, y: 1.0, a_minus: 1.0, a_plus: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeSpec {
    pub sigma0: f64,
    pub eps: f64,
    pub t0: f64,
    pub sn: f64,
    pub radii: TubeRadii,
}

impl TubeSpec {
    pub fn new(sigma0: f64, eps: f64, t0: f64, sn: f64, radii: TubeRadii) -> Result<Self> {
        let s = Self { sigma0, eps, t0, sn, radii };
        s.validate()?;
        Ok(s)
    }

    /// `σ₀` from the spectrum and `T0` from [`default_t0`]; `Sn = T0 + window`.
    pub fn auto(ens: &SolitonEnsemble, spectrum: &EdgeSpectrum, window: f64, eps: f64) -> Result<Self> {
        let sigma0 = compute_sigma0(ens, spectrum);
        let t0 = default_t0(sigma0);
        Self::new(sigma0, eps, t0, t0 + window, TubeRadii::default())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0 > 0.0 && self.eps > 0.0) {
            return Err(Error::InvalidParameter("sigma0 and eps must be positive".into()));
        }
        if !(self.t0 < self.sn) {
            return Err(Error::InvalidParameter(format!("need T0 < Sn, got {} >= {}", self.t0, self.sn)));
        }
        let r = self.radii;
        if !(r.v > 0.0 && r.y > 0.0 && r.a_minus > 0.0 && r.a_plus > 0.0) {
            return Err(Error::InvalidParameter("tube radii must be positive".into()));
        }
        Ok(())
    }

    /// `σ₀^{3/2}`
    pub fn rate(&self) -> f64 {
        self.sigma0.powf(1.5)
    }

    /// Radius of the admissible `â⁺` ball, `e^{-(3/2)σ₀^{3/2} Sn}`.
    pub fn ball(&self) -> f64 {
        self.radii.a_plus * (-1.5 * self.rate() * self.sn).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TubeCondition {
    None,
    Closeness,
    VBall,
    YBall,
    AMinusBall,
    APlusSphere,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeStatus {
    pub inside: bool,
    pub failed_condition: TubeCondition,
    /// Smallest relative slack `1 - value/radius` over the five conditions.
    pub margin: f64,
    /// Scaled values in the order closeness, v, y, a⁻, a⁺.
    pub values: [f64; 5],
}

/// Evaluates the tube conditions from precomputed norms.
pub fn tube_status(t: f64, dist_h1: f64, v_h1: f64, y: &[f64], a_minus: &[f64], a_plus: &[f64], spec: &TubeSpec) -> TubeStatus {
    let g = (spec.rate() * t).exp();
    let g32 = (1.5 * spec.rate() * t).exp();
    let r = spec.radii;
    let values = [dist_h1, g * v_h1, g * euclid(y), g32 * euclid(a_minus), g32 * euclid(a_plus)];
    let radii = [spec.eps, r.v, r.y, r.a_minus, r.a_plus];
    let conds = [
        TubeCondition::Closeness,
        TubeCondition::VBall,
        TubeCondition::YBall,
        TubeCondition::AMinusBall,
        TubeCondition::APlusSphere,
    ];
    let mut failed = TubeCondition::None;
    let mut margin = f64::INFINITY;
    for i in 0..5 {
        let slack = 1.0 - values[i] / radii[i];
        margin = margin.min(slack);
        if !(values[i] <= radii[i]) && failed == TubeCondition::None {
            failed = conds[i];
        }
    }
    TubeStatus { inside: failed == TubeCondition::None, failed_condition: failed, margin, values }
}

/// Tube check of a decomposed state against the unmodulated sum `R(t)`.
pub fn tube_check(state: &ModulationState, u: &Field, ens: &SolitonEnsemble, spec: &TubeSpec) -> Result<TubeStatus> {
    let r = ensemble_field(ens, state.t, u.grid())?;
    let dist = norm_h1(&(u - &r));
    Ok(tube_status(state.t, dist, state.v.norm_h1(), &state.y, &state.a_minus, &state.a_plus, spec))
}

/// `ψ(x) = (2/π) arctan(e^{-a x})` and its first and third derivatives.
pub fn psi(x: f64, a: f64) -> [f64; 3] {
    let s = 1.0 / (a * x).cosh();
    let v = if a * x > 0.0 {
        std::f64::consts::FRAC_2_PI * (-a * x).exp().atan()
    } else {
        1.0 - std::f64::consts::FRAC_2_PI * (a * x).exp().atan()
    };
    let d1 = -a / std::f64::consts::PI * s;
    let d3 = -a.powi(3) / std::f64::consts::PI * s * (1.0 - 2.0 * s * s);
    [v, d1, d3]
}

/// Partition weights around soliton `j`.
#[derive(Debug, Clone)]
pub struct Weight {
    pub psi: Field,
    pub phi: Field,
}

/// Midpoints `m_j` between consecutive modulated centers.
pub fn weight_centers(ens: &SolitonEnsemble, y: &[f64], t: f64) -> Vec<f64> {
    let c: Vec<f64> = ens.params().iter().zip(y).map(|(s, yj)| s.center(t) + yj).collect();
    c.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

/// `ψ_j = ψ(· - m_j)` for `j < N`, `ψ_N ≡ 1`, `φ_1 = ψ_1`, `φ_j = ψ_j - ψ_{j-1}`.
pub fn diagnostics_weights(ens: &SolitonEnsemble, y: &[f64], t: f64, sigma0: f64, grid: &Grid1D) -> Vec<Weight> {
    let a = sigma0.sqrt();
    let mut psis: Vec<Field> = weight_centers(ens, y, t)
        .into_iter()
        .map(|m| Field::from_fn(*grid, |x| psi(x - m, a)[0]))
        .collect();
    psis.push(Field::from_fn(*grid, |_| 1.0));
    let mut out = Vec::with_capacity(psis.len());
    for j in 0..psis.len() {
        let phi = if j == 0 { psis[0].clone() } else { &psis[j] - &psis[j - 1] };
        out.push(Weight { psi: psis[j].clone(), phi });
    }
    out
}

/// `M_j = ∫u² φ_j`, `E_j = ∫(½u_x² - u^{p+1}/(p+1)) φ_j`
pub fn localized_functionals(u: &Field, weights: &[Weight], p: u32) -> Result<(Vec<f64>, Vec<f64>)> {
    let ux = derivative(u, 1)?;
    let dx = u.grid().dx();
    let pp1 = p as i32 + 1;
    let mut masses = Vec::with_capacity(weights.len());
    let mut energies = Vec::with_capacity(weights.len());
    for w in weights {
        if !w.phi.grid().same_as(u.grid()) {
            return Err(Error::GridMismatch);
        }
        let (mut m, mut e) = (0.0, 0.0);
        for i in 0..u.grid().n() {
            let (v, vx, f) = (u.values()[i], ux.values()[i], w.phi.values()[i]);
            m += v * v * f;
            e += (0.5 * vx * vx - v.powi(pp1) / pp1 as f64) * f;
        }
        masses.push(m * dx);
        energies.push(e * dx);
    }
    Ok((masses, energies))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShootOptions {
    pub evolve: EvolveOptions,
    /// Time between decompositions and tube checks.
    pub check_interval: f64,
    /// Bisection stops when the bracket is narrower than this times the ball.
    pub bisection_tol: f64,
    pub max_bisection: usize,
    /// Broyden stops when `e^{(3/2)σ₀^{3/2} T0} ‖a⁺(T0)‖` falls below this.
    pub broyden_tol: f64,
    pub max_broyden: usize,
    /// Allowed `‖â⁺‖` as a multiple of the ball radius.
    pub ball_multiple: f64,
    /// Coercivity constant for the reconstruction check; the frozen value is
    /// used for `p = 6` when absent.
    pub coercivity_k: Option<f64>,
}

impl Default for ShootOptions {
    fn default() -> Self {
        Self {
            evolve: EvolveOptions::default(),
            check_interval: 0.05,
            bisection_tol: 1e-9,
            max_bisection: 60,
            broyden_tol: 1e-6,
            max_broyden: 20,
            ball_multiple: 1.0,
            coercivity_k: None,
        }
    }
}

/// One logged tube check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub t: f64,
    /// `‖u - R(t)‖_{H¹}`
    pub dist_h1: f64,
    pub v_h1: f64,
    pub y: Vec<f64>,
    pub a_plus: Vec<f64>,
    pub a_minus: Vec<f64>,
    pub status: TubeStatus,
    /// `‖e^{(3/2)σ₀^{3/2}t} a⁺‖²`
    pub n_value: f64,
    pub mass: Vec<f64>,
    pub energy: Vec<f64>,
    pub h: Vec<f64>,
    /// `‖v‖²_{H¹}` and `K ΣH_j + K² Σ(a±_j)²`
    pub variation_lhs: f64,
    pub variation_rhs: f64,
    pub total_mass: f64,
    pub total_energy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShootResult {
    pub a_hat_plus: Vec<f64>,
    pub b: Vec<f64>,
    pub tube: TubeSpec,
    pub rows: Vec<Row>,
    pub t_exit: f64,
    pub exit_condition: TubeCondition,
    pub success: bool,
    /// `a⁺` at the last evaluated time (`T0` unless stopped at exit).
    pub a_plus_end: Vec<f64>,
    pub decay_fit: Option<LinearFit>,
    pub dt: f64,
    pub runs: usize,
    #[serde(skip)]
    pub u_end: Option<Field>,
}

impl ShootResult {
    pub fn last_row(&self) -> &Row {
        self.rows.last().expect("at least the final-time row is logged")
    }

    /// Finite-difference `dN/dt` at the exit check (backward-time exit is
    /// outward when negative).
    pub fn exit_slope(&self) -> Option<f64> {
        let k = self.rows.iter().position(|r| !r.status.inside)?;
        if k == 0 {
            return None;
        }
        let (a, b) = (&self.rows[k - 1], &self.rows[k]);
        Some((b.n_value - a.n_value) / (b.t - a.t))
    }

    pub fn write_series_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let n = self.a_hat_plus.len();
        let mut header = vec!["t".to_string(), "dist_h1".into(), "v_h1".into()];
        for prefix in ["y", "a_plus", "a_minus"] {
            header.extend((1..=n).map(|j| format!("{prefix}_{j}")));
        }
        header.extend(["inside".into(), "failed".into(), "margin".into(), "n_value".into()]);
        for prefix in ["mass", "energy", "h"] {
            header.extend((1..=n).map(|j| format!("{prefix}_{j}")));
        }
        header.extend(["variation_lhs".into(), "variation_rhs".into(), "total_mass".into(), "total_energy".into()]);
        writeln!(f, "{}", header.join(","))?;
        let fmt = |x: f64| format!("{x:.16e}");
        for r in &self.rows {
            let mut cells = vec![fmt(r.t), fmt(r.dist_h1), fmt(r.v_h1)];
            for v in [&r.y, &r.a_plus, &r.a_minus] {
                cells.extend(v.iter().map(|x| fmt(*x)));
            }
            cells.push((r.status.inside as u8).to_string());
            cells.push(format!("{:?}", r.status.failed_condition));
            cells.push(fmt(r.status.margin));
            cells.push(fmt(r.n_value));
            for v in [&r.mass, &r.energy, &r.h] {
                cells.extend(v.iter().map(|x| fmt(*x)));
            }
            cells.extend([r.variation_lhs, r.variation_rhs, r.total_mass, r.total_energy].map(fmt));
            writeln!(f, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Least-squares slope of `log ‖u - R‖_{H¹}` over `[T0 + 2, Sn - 2]`.
pub fn decay_fit(rows: &[Row], spec: &TubeSpec) -> Option<LinearFit> {
    let (lo, hi) = (spec.t0 + 2.0, spec.sn - 2.0);
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.t >= lo && r.t <= hi && r.dist_h1 > 0.0)
        .map(|r| (r.t, r.dist_h1.ln()))
        .unzip();
    linear_fit(&xs, &ys)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    /// Stop at the first tube exit.
    Tube,
    /// Continue to `T0`; abort only when `‖u - R‖_{H¹} > 10ε`.
    FixedHorizon,
}

struct Shooter<'a> {
    modulator: &'a Modulator,
    spec: &'a TubeSpec,
    opts: &'a ShootOptions,
    k: Option<f64>,
}

impl<'a> Shooter<'a> {
    fn new(modulator: &'a Modulator, spec: &'a TubeSpec, opts: &'a ShootOptions) -> Self {
        let k = opts.coercivity_k.or_else(|| {
            (modulator.ensemble().p() == 6).then(|| {
                coercivity_k(golden::LAMBDA_STAR_P6, modulator.ensemble().speeds()[0])
            })
        });
        Self { modulator, spec, opts, k }
    }

    fn row(&self, u: &Field, state: &ModulationState, dist: f64) -> Result<Row> {
        let ens = self.modulator.ensemble();
        let spec = self.spec;
        let v_h1 = state.v.norm_h1();
        let status = tube_status(state.t, dist, v_h1, &state.y, &state.a_minus, &state.a_plus, spec);
        let weights = diagnostics_weights(ens, &state.y, state.t, spec.sigma0, u.grid());
        let (mass, energy) = localized_functionals(u, &weights, ens.p())?;
        let phis: Vec<Field> = weights.iter().map(|w| w.phi.clone()).collect();
        let h = localized_form_h(&state.v, ens, &state.y, &phis, state.t)?;
        let (total_mass, total_energy) = conserved_quantities(u, ens.p());
        let (variation_lhs, variation_rhs) = match self.k {
            Some(k) => {
                let a2: f64 = state.a_plus.iter().chain(&state.a_minus).map(|a| a * a).sum();
                (v_h1 * v_h1, k * h.iter().sum::<f64>() + k * k * a2)
            }
            None => (f64::NAN, f64::NAN),
        };
        let g32 = (1.5 * spec.rate() * state.t).exp();
        Ok(Row {
            t: state.t,
            dist_h1: dist,
            v_h1,
            y: state.y.clone(),
            a_plus: state.a_plus.clone(),
            a_minus: state.a_minus.clone(),
            status,
            n_value: (g32 * euclid(&state.a_plus)).powi(2),
            mass,
            energy,
            h,
            variation_lhs,
            variation_rhs,
            total_mass,
            total_energy,
        })
    }

    fn exit_row(&self, t: f64, dist: f64, n: usize) -> Row {
        let nan = vec![f64::NAN; n];
        Row {
            t,
            dist_h1: dist,
            v_h1: f64::NAN,
            y: nan.clone(),
            a_plus: nan.clone(),
            a_minus: nan.clone(),
            status: TubeStatus {
                inside: false,
                failed_condition: TubeCondition::Closeness,
                margin: 1.0 - dist / self.spec.eps,
                values: [dist, f64::NAN, f64::NAN, f64::NAN, f64::NAN],
            },
            n_value: f64::NAN,
            mass: nan.clone(),
            energy: nan.clone(),
            h: nan,
            variation_lhs: f64::NAN,
            variation_rhs: f64::NAN,
            total_mass: f64::NAN,
            total_energy: f64::NAN,
        }
    }

    /// Integrates `u_sn` from `Sn` down to `T0`.
    fn run(&self, u_sn: Field, a_hat: &[f64], b: Vec<f64>, mode: Mode) -> Result<ShootResult> {
        let spec = self.spec;
        let ens = self.modulator.ensemble();
        let nsol = ens.len();
        let p = ens.p();
        let grid = *u_sn.grid();
        let eopts = &self.opts.evolve;
        let cap = stable_dt(&u_sn, p, eopts.dt);
        let span = spec.sn - spec.t0;
        let steps = (span / cap).ceil().max(1.0) as usize;
        if steps > eopts.max_steps {
            return Err(Error::StepBudget(eopts.max_steps));
        }
        let h = -span / steps as f64;
        let stride = ((self.opts.check_interval / h.abs()).floor() as usize).max(1);
        let modulator = match mode {
            Mode::Tube => self.modulator.clone(),
            Mode::FixedHorizon => {
                let r = self.modulator.radius().max(10.0 * spec.eps);
                self.modulator.clone().with_radius(r)
            }
        };
        let (m0, e0) = conserved_quantities(&u_sn, p);
        let mut rows = Vec::new();
        let mut y = vec![0.0; nsol];
        let mut first_exit: Option<(f64, TubeCondition)> = None;
        let mut last_inside = spec.sn;
        let mut a_plus_end = vec![f64::NAN; nsol];
        let mut stepper = Stepper::new(&u_sn, p, spec.sn, h, eopts.dealias);
        let mut u = u_sn;
        let mut i = 0;
        loop {
            let t = if i == steps { spec.t0 } else { spec.sn + i as f64 * h };
            let r = ensemble_field(ens, t, &grid)?;
            let dist = norm_h1(&(&u - &r));
            let state = if mode == Mode::Tube && !(dist <= spec.eps) {
                None
            } else if mode == Mode::FixedHorizon && !(dist <= 10.0 * spec.eps) {
                return Err(Error::TubeValidation(format!(
                    "trajectory left the 10-eps neighbourhood at t = {t:.4}"
                )));
            } else {
                match modulator.decompose(&u, t, &y) {
                    Ok(s) => Some(s),
                    Err(e @ (Error::NewtonDivergence { .. } | Error::OutOfRadius { .. })) => {
                        if mode == Mode::FixedHorizon {
                            return Err(e);
                        }
                        None
                    }
                    Err(e) => return Err(e),
                }
            };
            let row = match &state {
                Some(s) => {
                    y = s.y.clone();
                    a_plus_end = s.a_plus.clone();
                    self.row(&u, s, dist)?
                }
                None => self.exit_row(t, dist, nsol),
            };
            let inside = row.status.inside;
            let cond = row.status.failed_condition;
            rows.push(row);
            if inside && first_exit.is_none() {
                last_inside = t;
            }
            if !inside && first_exit.is_none() {
                first_exit = Some((t, cond));
                if mode == Mode::Tube {
                    break;
                }
            }
            if i == steps {
                break;
            }
            let next = (i + stride).min(steps);
            while i < next {
                stepper.step();
                i += 1;
            }
            u = stepper.field();
            let t_now = if i == steps { spec.t0 } else { stepper.t() };
            check_health(&u, t_now, eopts.h1_ceiling)?;
            if !eopts.dealias {
                let tail = spectral_tail(&u);
                if tail > RESOLVED_TAIL {
                    return Err(Error::Underresolved { t: t_now, tail });
                }
            }
            check_drift(conserved_quantities(&u, p), (m0, e0), t_now - spec.sn, eopts, t_now)?;
        }
        let success = first_exit.is_none();
        let (t_exit, exit_condition) = match first_exit {
            None => (spec.t0, TubeCondition::None),
            Some((_, c)) => (last_inside, c),
        };
        let decay = decay_fit(&rows, spec);
        Ok(ShootResult {
            a_hat_plus: a_hat.to_vec(),
            b,
            tube: *spec,
            rows,
            t_exit,
            exit_condition,
            success,
            a_plus_end,
            decay_fit: decay,
            dt: h,
            runs: 1,
            u_end: Some(u),
        })
    }

    fn shoot(&self, a_hat: &[f64], mode: Mode) -> Result<ShootResult> {
        let ball = self.spec.ball() * self.opts.ball_multiple;
        let fd = self.modulator.final_data(a_hat, self.spec.sn, ball)?;
        self.run(fd.u, a_hat, fd.b, mode)
    }

    /// Sign of `a⁺` where the run stopped (exit or `T0`).
    fn end_sign(r: &ShootResult) -> f64 {
        let k = r.rows.iter().rposition(|row| row.a_plus[0].is_finite());
        match k {
            Some(k) if r.rows[k].a_plus[0] != 0.0 => r.rows[k].a_plus[0].signum(),
            _ => 0.0,
        }
    }

    fn bisect(&self, seed: Option<f64>) -> Result<ShootResult> {
        let ball = self.spec.ball() * self.opts.ball_multiple;
        let mut runs = 0;
        let probe = |a: f64| self.shoot(&[a], Mode::Tube);
        let (mut lo, mut hi) = match seed {
            Some(s) => (s - 0.1 * ball, s + 0.1 * ball),
            None => (-ball, ball),
        };
        let (rl, rh) = rayon::join(|| probe(lo), || probe(hi));
        runs += 2;
        let (mut rl, mut rh) = (rl?, rh?);
        if Self::end_sign(&rl) * Self::end_sign(&rh) >= 0.0 && seed.is_some() {
            lo = -ball;
            hi = ball;
            let (a, b) = rayon::join(|| probe(lo), || probe(hi));
            runs += 2;
            rl = a?;
            rh = b?;
        }
        let (sl, sh) = (Self::end_sign(&rl), Self::end_sign(&rh));
        if sl * sh >= 0.0 {
            return Err(Error::BracketNotFound(format!(
                "a+ at exit has signs {sl} and {sh} at {lo:.3e} and {hi:.3e}"
            )));
        }
        let mut best: Option<ShootResult> = [rl, rh].into_iter().find(|r| r.success);
        for _ in 0..self.opts.max_bisection {
            if hi - lo <= self.opts.bisection_tol * ball && best.is_some() {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let r = probe(mid)?;
            runs += 1;
            let s = Self::end_sign(&r);
            if s == 0.0 {
                best = Some(r);
                break;
            }
            if s == sl {
                lo = mid;
            } else {
                hi = mid;
            }
            if r.success {
                best = Some(r);
            }
        }
        let mut out = match best {
            Some(r) => r,
            None => probe(0.5 * (lo + hi))?,
        };
        out.runs = runs;
        Ok(out)
    }

    fn broyden(&self, seed: Option<Vec<f64>>) -> Result<ShootResult> {
        let ens = self.modulator.ensemble();
        let n = ens.len();
        let spec = self.spec;
        let scale = (1.5 * spec.rate() * spec.t0).exp();
        let rates = self.modulator.growth_rates();
        let mut jac = Mat::<f64>::from_fn(n, n, |i, j| {
            if i == j {
                (rates[i] * (spec.sn - spec.t0)).exp()
            } else {
                0.0
            }
        });
        let mut a = seed.unwrap_or_else(|| vec![0.0; n]);
        let mut runs = 0;
        let eval = |a: &[f64]| -> Result<(Vec<f64>, ShootResult)> {
            let r = self.shoot(a, Mode::FixedHorizon)?;
            Ok((r.a_plus_end.clone(), r))
        };
        let (mut g, mut last) = eval(&a)?;
        runs += 1;
        let mut stalls = 0;
        for _ in 0..self.opts.max_broyden {
            let res = scale * euclid(&g);
            if res <= self.opts.broyden_tol {
                break;
            }
            let step = lu_solve(&jac, &g);
            let mut lambda = 1.0;
            let mut accepted = None;
            for _ in 0..6 {
                let trial: Vec<f64> = a.iter().zip(&step).map(|(x, s)| x - lambda * s).collect();
                runs += 1;
                match eval(&trial) {
                    Ok((gt, rt)) if euclid(&gt) < euclid(&g) => {
                        accepted = Some((trial, gt, rt));
                        break;
                    }
                    Ok((gt, _)) => {
                        let db: Vec<f64> = trial.iter().zip(&a).map(|(x, y)| x - y).collect();
                        let df: Vec<f64> = gt.iter().zip(&g).map(|(x, y)| x - y).collect();
                        broyden_update(&mut jac, &db, &df);
                    }
                    Err(Error::TubeValidation(_)) => {}
                    Err(e) => return Err(e),
                }
                lambda *= 0.5;
            }
            match accepted {
                Some((trial, gt, rt)) => {
                    let db: Vec<f64> = trial.iter().zip(&a).map(|(x, y)| x - y).collect();
                    let df: Vec<f64> = gt.iter().zip(&g).map(|(x, y)| x - y).collect();
                    broyden_update(&mut jac, &db, &df);
                    a = trial;
                    g = gt;
                    last = rt;
                    stalls = 0;
                }
                None => {
                    stalls += 1;
                    if stalls >= 2 {
                        break;
                    }
                }
            }
        }
        let res = scale * euclid(&g);
        if res > 1.0 {
            return Err(Error::BroydenStagnation(res));
        }
        // the fixed-horizon run already carries the tube log; it validates
        // if it never exited
        if !last.success {
            let r = self.shoot(&a, Mode::Tube)?;
            runs += 1;
            if !r.success {
                return Err(Error::TubeValidation(format!(
                    "exit via {:?} at t = {:.4}",
                    r.exit_condition, r.t_exit
                )));
            }
            last = r;
        }
        last.runs = runs;
        Ok(last)
    }
}

/// Backward run from the final data built for `a_hat_plus`; stops at the
/// first tube exit.
pub fn backward_run(a_hat_plus: &[f64], modulator: &Modulator, spec: &TubeSpec, opts: &ShootOptions) -> Result<ShootResult> {
    Shooter::new(modulator, spec, opts).shoot(a_hat_plus, Mode::Tube)
}

/// Backward run from the unperturbed sum `R(Sn)`.
pub fn control_run(modulator: &Modulator, spec: &TubeSpec, opts: &ShootOptions) -> Result<ShootResult> {
    let n = modulator.ensemble().len();
    let u = ensemble_field(modulator.ensemble(), spec.sn, modulator.grid())?;
    Shooter::new(modulator, spec, opts).run(u, &vec![0.0; n], vec![0.0; 2 * n], Mode::Tube)
}

/// Searches for `â⁺` whose backward trajectory stays in the tube down to
/// `T0`: bisection for one soliton, Broyden on `a⁺(T0)` otherwise.
pub fn find_a_hat(modulator: &Modulator, spec: &TubeSpec, opts: &ShootOptions, seed: Option<Vec<f64>>) -> Result<ShootResult> {
    let shooter = Shooter::new(modulator, spec, opts);
    if modulator.ensemble().len() == 1 {
        shooter.bisect(seed.map(|s| s[0]))
    } else {
        shooter.broyden(seed)
    }
}

/// Solves successive windows `Sn ∈ sn_list` (fixed `T0`), seeding each with
/// the previous `â⁺` rescaled by `e^{-(3/2)σ₀^{3/2} ΔSn}`.
pub fn continuation(modulator: &Modulator, spec: &TubeSpec, sn_list: &[f64], opts: &ShootOptions) -> Result<Vec<ShootResult>> {
    let mut out: Vec<ShootResult> = Vec::with_capacity(sn_list.len());
    for &sn in sn_list {
        let s = TubeSpec { sn, ..*spec };
        s.validate()?;
        let seed = out.last().map(|prev| {
            let f = (-1.5 * s.rate() * (sn - prev.tube.sn)).exp();
            prev.a_hat_plus.iter().map(|a| a * f).collect()
        });
        out.push(find_a_hat(modulator, &s, opts, seed)?);
    }
    Ok(out)
}

/// Backward separation of two runs whose final data differ by `δ Z⁺_1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthReport {
    pub times: Vec<f64>,
    /// `‖u₂ - u₁‖_{L²}`
    pub separation: Vec<f64>,
    /// `∫(u₂ - u₁) Z⁺_1(t)` with the unmodulated dual.
    pub unstable: Vec<f64>,
    pub separation_fit: Option<LinearFit>,
    pub unstable_fit: Option<LinearFit>,
    /// `e₀ c^{3/2}`
    pub expected: f64,
}

/// Integrates `R(Sn)` and `R(Sn) + δ Z⁺_1(Sn)` backward over `span` and fits
/// the backward growth of `‖u₂ - u₁‖_{L²}` and of the unstable coordinate,
/// each while its magnitude lies in `window` (up to the first exceedance).
pub fn instability_growth(
    modulator: &Modulator,
    spectrum: &EdgeSpectrum,
    sn: f64,
    span: f64,
    delta: f64,
    window: (f64, f64),
    opts: &ShootOptions,
) -> Result<GrowthReport> {
    let ens = modulator.ensemble();
    let grid = modulator.grid();
    let p = ens.p();
    let zeros = vec![0.0; ens.len()];
    let base = ensemble_field(ens, sn, grid)?;
    let zp = modulator.duals_at(sn, &zeros)[0][0].clone();
    let mut pert = base.clone();
    pert.axpy(delta, &zp)?;
    let cap = stable_dt(&pert, p, opts.evolve.dt);
    let steps = (span / cap).ceil() as usize;
    let h = -span / steps as f64;
    let stride = ((opts.check_interval / h.abs()).floor() as usize).max(1);
    let mut s1 = Stepper::new(&base, p, sn, h, opts.evolve.dealias);
    let mut s2 = Stepper::new(&pert, p, sn, h, opts.evolve.dealias);
    let diff = &pert - &base;
    let mut times = vec![sn];
    let mut separation = vec![diff.norm_l2()];
    let mut unstable = vec![crate::grid::inner_l2(&diff, &zp)?];
    let mut i = 0;
    while i < steps {
        let next = (i + stride).min(steps);
        rayon::join(
            || (i..next).for_each(|_| s1.step()),
            || (i..next).for_each(|_| s2.step()),
        );
        i = next;
        let (u1, u2) = (s1.field(), s2.field());
        check_health(&u2, s2.t(), opts.evolve.h1_ceiling)?;
        let d = &u2 - &u1;
        let z = modulator.duals_at(s1.t(), &zeros)[0][0].clone();
        times.push(s1.t());
        separation.push(d.norm_l2());
        unstable.push(crate::grid::inner_l2(&d, &z)?);
    }
    let fit = |series: &[f64]| {
        let (xs, ys): (Vec<f64>, Vec<f64>) = times
            .iter()
            .zip(series)
            .take_while(|(_, a)| a.abs() <= window.1)
            .filter(|(_, a)| a.abs() >= window.0)
            .map(|(t, a)| (sn - t, a.abs().ln()))
            .unzip();
        linear_fit(&xs, &ys)
    };
    let c = ens.speeds()[0];
    Ok(GrowthReport {
        separation_fit: fit(&separation),
        unstable_fit: fit(&unstable),
        times,
        separation,
        unstable,
        expected: spectrum.e0 * c.powf(1.5),
    })
}

impl GrowthReport {
    pub fn separation_rate(&self) -> f64 {
        self.separation_fit.map_or(f64::NAN, |f| f.slope)
    }

    pub fn unstable_rate(&self) -> f64 {
        self.unstable_fit.map_or(f64::NAN, |f| f.slope)
    }
}

fn lu_solve(a: &Mat<f64>, b: &[f64]) -> Vec<f64> {
    use faer::prelude::*;
    let lu = a.partial_piv_lu();
    let mut rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
    lu.solve_in_place(&mut rhs);
    (0..b.len()).map(|i| rhs[(i, 0)]).collect()
}
