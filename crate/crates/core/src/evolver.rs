//! Time integration of `u_t + (u_xx + u^p)_x = 0` on the periodic grid.
//!
//! The dispersive term is propagated exactly in Fourier space and the
//! nonlinear flux by fourth-order exponential time differencing (ETDRK4). Steps are fixed
//! so that trajectories are deterministic; negative steps integrate
//! backward.

use std::sync::Arc;

use num_complex::Complex64;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{derivative, forward, inverse, plans, Field, Grid1D, Plans};
use crate::soliton::conserved_quantities;

/// Fraction of the highest bins used to judge whether data is resolved.
const TAIL_FRACTION: f64 = 0.1;
pub const RESOLVED_TAIL: f64 = 1e-10;
const CONSERVATION_STRIDE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolveOptions {
    /// Largest step; the stability cap may shrink it.
    pub dt: f64,
    /// Relative drift allowed per unit of elapsed time (at least one unit).
    pub tol_mass: f64,
    pub tol_energy: f64,
    pub dealias: bool,
    pub max_steps: usize,
    /// `‖u‖_{H¹}` above which the run is reported as blow-up.
    pub h1_ceiling: f64,
    /// Keep every k-th step in the trajectory (0 keeps only the endpoints).
    pub record_every: usize,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            dt: 2.5e-4,
            tol_mass: 1e-10,
            tol_energy: 1e-9,
            dealias: true,
            max_steps: 50_000_000,
            h1_ceiling: 1e6,
            record_every: 0,
        }
    }
}

impl EvolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.tol_mass > 0.0 && self.tol_energy > 0.0) {
            return Err(Error::InvalidParameter("drift tolerances must be positive".into()));
        }
        if !(self.h1_ceiling > 0.0) {
            return Err(Error::InvalidParameter("h1_ceiling must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub t: f64,
    pub u: Field,
    pub mass: f64,
    pub energy: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    /// Step actually used (signed).
    pub dt: f64,
    pub steps: usize,
    pub max_mass_drift: f64,
    pub max_energy_drift: f64,
}

impl Trajectory {
    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory has at least one sample")
    }

    pub fn final_field(&self) -> &Field {
        &self.last().u
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }
}

/// Step size actually used for `u0`: `min(dt, 0.1 dx / max|u0|^{(p-1)/2})`.
pub fn stable_dt(u0: &Field, p: u32, dt: f64) -> f64 {
    let amp = u0.max_abs().powf((p as f64 - 1.0) / 2.0);
    if amp > 0.0 {
        dt.min(0.1 * u0.grid().dx() / amp)
    } else {
        dt
    }
}

/// Largest coefficient magnitude in the top bins relative to the largest
/// overall.
pub fn spectral_tail(u: &Field) -> f64 {
    let spec = u.spectrum();
    let peak = spec.iter().fold(0.0f64, |m, c| m.max(c.norm()));
    if peak == 0.0 {
        return 0.0;
    }
    let nyq = spec.len() - 1;
    let start = ((1.0 - TAIL_FRACTION) * nyq as f64) as usize;
    spec[start..nyq].iter().fold(0.0f64, |m, c| m.max(c.norm())) / peak
}

/// Single-step integrator holding the spectral state.
pub struct Stepper {
    grid: Grid1D,
    p: u32,
    h: f64,
    t: f64,
    state: Vec<Complex64>,
    coef: Coefficients,
    flux: Vec<Complex64>,
    dealias: Option<Padded>,
    base: Arc<Plans>,
}

#[derive(Default)]
struct Coefficients {
    e: Vec<Complex64>,
    e2: Vec<Complex64>,
    q: Vec<Complex64>,
    f1: Vec<Complex64>,
    f2: Vec<Complex64>,
    f3: Vec<Complex64>,
}

struct Padded {
    m: usize,
    plans: Arc<PaddedPlans>,
}

struct PaddedPlans {
    r2c: Arc<dyn realfft::RealToComplex<f64>>,
    c2r: Arc<dyn realfft::ComplexToReal<f64>>,
}

impl Padded {
    fn new(n: usize, p: u32) -> Self {
        // products of degree p stay alias-free on (p+1)n/2 points
        let m = ((p as usize + 1) * n).div_ceil(2).next_multiple_of(2);
        let mut planner = RealFftPlanner::<f64>::new();
        Self {
            m,
            plans: Arc::new(PaddedPlans {
                r2c: planner.plan_fft_forward(m),
                c2r: planner.plan_fft_inverse(m),
            }),
        }
    }
}

/// ETDRK4 coefficients for one mode with `z = h·ik³`, by contour averaging
/// around `z` (stable for small `|z|`).
fn etd_coefficients(z: Complex64, h: f64) -> [Complex64; 5] {
    const POINTS: usize = 32;
    let mut acc = [Complex64::new(0.0, 0.0); 4];
    for j in 0..POINTS {
        let theta = std::f64::consts::PI * (j as f64 + 0.5) / POINTS as f64 * 2.0;
        let r = z + Complex64::from_polar(1.0, theta);
        let er = r.exp();
        let r3 = r * r * r;
        acc[0] += ((0.5 * r).exp() - 1.0) / r;
        acc[1] += (-4.0 - r + er * (4.0 - 3.0 * r + r * r)) / r3;
        acc[2] += (2.0 + r + er * (r - 2.0)) / r3;
        acc[3] += (-4.0 - 3.0 * r - r * r + er * (4.0 - r)) / r3;
    }
    let m = h / POINTS as f64;
    [z.exp(), acc[0] * m, acc[1] * m, acc[2] * m, acc[3] * m]
}

impl Stepper {
    pub fn new(u0: &Field, p: u32, t0: f64, h: f64, dealias: bool) -> Self {
        let grid = *u0.grid();
        let nyq = grid.n() / 2;
        let mut coef = Coefficients::default();
        for m in 0..=nyq {
            // the Nyquist bin is frozen
            let k = if m == nyq { 0.0 } else { grid.wavenumber(m) };
            let z = Complex64::new(0.0, k * k * k * h);
            let [e, q, f1, f2, f3] = etd_coefficients(z, h);
            coef.e.push(e);
            coef.e2.push((0.5 * z).exp());
            coef.q.push(q);
            coef.f1.push(f1);
            coef.f2.push(f2);
            coef.f3.push(f3);
        }
        let flux = (0..=nyq)
            .map(|m| if m == nyq { Complex64::new(0.0, 0.0) } else { Complex64::new(0.0, -grid.wavenumber(m)) })
            .collect();
        Self {
            grid,
            p,
            h,
            t: t0,
            state: u0.spectrum(),
            coef,
            flux,
            dealias: dealias.then(|| Padded::new(grid.n(), p)),
            base: plans(grid.n()),
        }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn field(&self) -> Field {
        Field::from_spectrum(self.grid, &self.state)
    }

    /// `-ik F[u^p]` for the field with spectrum `s`.
    fn nonlinear(&self, s: &[Complex64]) -> Vec<Complex64> {
        let n = self.grid.n();
        let nyq = n / 2;
        let p = self.p as i32;
        let mut out = match &self.dealias {
            Some(pad) => {
                let m = pad.m;
                let mut padded = vec![Complex64::new(0.0, 0.0); m / 2 + 1];
                let scale = m as f64 / n as f64;
                for (dst, src) in padded.iter_mut().zip(&s[..nyq]) {
                    *dst = src * scale;
                }
                padded[0].im = 0.0;
                let mut phys = pad.plans.c2r.make_output_vec();
                pad.plans
                    .c2r
                    .process(&mut padded, &mut phys)
                    .expect("padded inverse length");
                let inv = 1.0 / m as f64;
                phys.iter_mut().for_each(|v| *v = (*v * inv).powi(p));
                let mut spec = pad.plans.r2c.make_output_vec();
                pad.plans.r2c.process(&mut phys, &mut spec).expect("padded forward length");
                let back = n as f64 / m as f64;
                spec.truncate(nyq + 1);
                spec.iter_mut().for_each(|c| *c *= back);
                spec
            }
            None => {
                let u = inverse(&self.base, s, n);
                let up: Vec<f64> = u.iter().map(|v| v.powi(p)).collect();
                forward(&self.base, &up)
            }
        };
        for (o, k) in out.iter_mut().zip(&self.flux) {
            *o *= k;
        }
        out
    }

    pub fn step(&mut self) {
        let c = &self.coef;
        let v = &self.state;
        let len = v.len();
        let nv = self.nonlinear(v);
        let a: Vec<Complex64> = (0..len).map(|i| c.e2[i] * v[i] + c.q[i] * nv[i]).collect();
        let na = self.nonlinear(&a);
        let b: Vec<Complex64> = (0..len).map(|i| c.e2[i] * v[i] + c.q[i] * na[i]).collect();
        let nb = self.nonlinear(&b);
        let cc: Vec<Complex64> =
            (0..len).map(|i| c.e2[i] * a[i] + c.q[i] * (2.0 * nb[i] - nv[i])).collect();
        let nc = self.nonlinear(&cc);
        let next: Vec<Complex64> = (0..len)
            .map(|i| c.e[i] * v[i] + c.f1[i] * nv[i] + 2.0 * c.f2[i] * (na[i] + nb[i]) + c.f3[i] * nc[i])
            .collect();
        self.state = next;
        self.t += self.h;
    }
}

/// Number of steps and signed step for integrating from `t0` to `t1`.
pub fn step_plan(u0: &Field, p: u32, t0: f64, t1: f64, dt: f64) -> (usize, f64) {
    let span = t1 - t0;
    if span == 0.0 {
        return (0, 0.0);
    }
    let cap = stable_dt(u0, p, dt);
    let steps = (span.abs() / cap).ceil().max(1.0) as usize;
    (steps, span / steps as f64)
}

fn drift(now: f64, start: f64) -> f64 {
    if start != 0.0 {
        ((now - start) / start).abs()
    } else {
        (now - start).abs()
    }
}

/// Relative drifts of mass and energy, or an error once either exceeds its
/// tolerance scaled by `max(1, elapsed)`.
pub(crate) fn check_drift(now: (f64, f64), start: (f64, f64), elapsed: f64, opts: &EvolveOptions, t: f64) -> Result<(f64, f64)> {
    let (dm, de) = (drift(now.0, start.0), drift(now.1, start.1));
    let scale = elapsed.abs().max(1.0);
    if dm > opts.tol_mass * scale {
        return Err(Error::ConservationDrift { quantity: "mass", drift: dm, tol: opts.tol_mass * scale, t });
    }
    if de > opts.tol_energy * scale {
        return Err(Error::ConservationDrift { quantity: "energy", drift: de, tol: opts.tol_energy * scale, t });
    }
    Ok((dm, de))
}

/// Integrates `u0` from `t0` to `t1` (either direction).
pub fn evolve(u0: &Field, p: u32, t0: f64, t1: f64, opts: &EvolveOptions) -> Result<Trajectory> {
    opts.validate()?;
    if !u0.is_finite() {
        return Err(Error::BlowUp { t: t0, norm: f64::NAN });
    }
    let tail = spectral_tail(u0);
    if tail > RESOLVED_TAIL {
        return Err(Error::InvalidParameter(format!(
            "initial data is under-resolved: spectral tail {tail:.3e}"
        )));
    }
    let (steps, h) = step_plan(u0, p, t0, t1, opts.dt);
    if steps > opts.max_steps {
        return Err(Error::StepBudget(opts.max_steps));
    }
    let (m0, e0) = conserved_quantities(u0, p);
    let mut traj = Trajectory {
        samples: vec![Sample { t: t0, u: u0.clone(), mass: m0, energy: e0 }],
        dt: h,
        steps,
        max_mass_drift: 0.0,
        max_energy_drift: 0.0,
    };
    let mut stepper = Stepper::new(u0, p, t0, h, opts.dealias);
    for i in 1..=steps {
        stepper.step();
        let last = i == steps;
        let record = last || (opts.record_every > 0 && i % opts.record_every == 0);
        if record || i % CONSERVATION_STRIDE == 0 {
            let t = if last { t1 } else { stepper.t() };
            let u = stepper.field();
            check_health(&u, t, opts.h1_ceiling)?;
            let (m, e) = conserved_quantities(&u, p);
            let (dm, de) = check_drift((m, e), (m0, e0), t - t0, opts, t)?;
            traj.max_mass_drift = traj.max_mass_drift.max(dm);
            traj.max_energy_drift = traj.max_energy_drift.max(de);
            if record {
                traj.samples.push(Sample { t, u, mass: m, energy: e });
            }
        }
    }
    Ok(traj)
}

pub(crate) fn check_health(u: &Field, t: f64, ceiling: f64) -> Result<()> {
    if !u.is_finite() {
        return Err(Error::BlowUp { t, norm: f64::NAN });
    }
    let h1 = u.norm_h1();
    if !(h1 <= ceiling) {
        return Err(Error::BlowUp { t, norm: h1 });
    }
    Ok(())
}

/// Right-hand side of `d/dt ∫u² f = -3∫u_x² f_x + ∫u² f_xxx
/// + (2p/(p+1))∫u^{p+1} f_x`.
pub fn kato_rate(u: &Field, p: u32, f: &Field, f_x: &Field, f_xxx: &Field) -> Result<f64> {
    let g = u.grid();
    for w in [f, f_x, f_xxx] {
        if !w.grid().same_as(g) {
            return Err(Error::GridMismatch);
        }
    }
    let ux = derivative(u, 1)?;
    let coef = 2.0 * p as f64 / (p as f64 + 1.0);
    let mut acc = 0.0;
    for i in 0..g.n() {
        let v = u.values()[i];
        let vx = ux.values()[i];
        acc += -3.0 * vx * vx * f_x.values()[i]
            + v * v * f_xxx.values()[i]
            + coef * v.powi(p as i32 + 1) * f_x.values()[i];
    }
    Ok(acc * g.dx())
}
