//! JSON run configuration. Absent fields take defaults; [`RunConfig::resolve`]
//! fills the derived quantities (σ₀, ε, T0, Sn) so a run directory can echo
//! a complete, self-describing config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolver::EvolveOptions;
use crate::grid::Grid1D;
use crate::linop::EdgeSpectrum;
use crate::modulation::Modulator;
use crate::shooting::{compute_sigma0, default_separation, default_t0, ShootOptions, TubeRadii, TubeSpec};
use crate::soliton::{edge_tail, SolitonEnsemble, SolitonParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "L")]
    pub length: f64,
    pub n: usize,
}

impl GridConfig {
    pub fn build(&self) -> Result<Grid1D> {
        Grid1D::new(self.length, self.n).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    #[serde(rename = "T0")]
    pub t0: Option<f64>,
    #[serde(rename = "Sn")]
    pub sn: Option<f64>,
    /// `Sn - T0` when `Sn` is absent.
    pub length: Option<f64>,
    /// Continuation targets; overrides `Sn` for `construct`.
    #[serde(rename = "Sn_list")]
    pub sn_list: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct TubeOverrides {
    pub sigma0: Option<f64>,
    pub eps: Option<f64>,
    pub radii: Option<TubeRadii>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveSpan {
    pub t_start: f64,
    pub t_end: f64,
}

impl Default for EvolveSpan {
    fn default() -> Self {
        Self { t_start: 0.0, t_end: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub p: u32,
    pub ensemble: Vec<SolitonParams>,
    pub grid: GridConfig,
    /// Grid of the dense edge-spectrum computation.
    pub spectrum_grid: GridConfig,
    /// Grid of the `coercivity` command.
    pub coercivity_grid: GridConfig,
    pub window: WindowConfig,
    pub tube: TubeOverrides,
    pub evolver: EvolveOptions,
    pub shooting: ShootOptions,
    pub evolve_span: EvolveSpan,
    /// Minimum separation of the centers at `Sn`; `20/√σ₀` when absent.
    pub min_separation: Option<f64>,
    pub seed: u64,
    pub cache_dir: PathBuf,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            p: 6,
            ensemble: vec![SolitonParams { c: 1.0, x0: -40.0 }],
            grid: GridConfig { length: 128.0, n: 2048 },
            spectrum_grid: GridConfig { length: 80.0, n: 2048 },
            coercivity_grid: GridConfig { length: 64.0, n: 1024 },
            window: WindowConfig::default(),
            tube: TubeOverrides::default(),
            evolver: EvolveOptions::default(),
            shooting: ShootOptions::default(),
            evolve_span: EvolveSpan::default(),
            min_separation: None,
            seed: 0,
            cache_dir: PathBuf::from(".gkdv-cache"),
            output: PathBuf::from("gkdv-out"),
        }
    }
}

pub const DEFAULT_WINDOW: f64 = 8.0;

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks that do not need the spectrum.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.p < 2 {
            return bad(format!("p must be an integer >= 2, got {}", self.p));
        }
        if self.ensemble.is_empty() {
            return bad("ensemble must contain at least one soliton".into());
        }
        for s in &self.ensemble {
            if !(s.c > 0.0 && s.c.is_finite() && s.x0.is_finite()) {
                return bad(format!("invalid soliton parameters {s:?}"));
            }
        }
        if self.ensemble.windows(2).any(|w| !(w[0].c < w[1].c)) {
            return bad("speeds must be strictly increasing".into());
        }
        self.grid.build()?;
        self.spectrum_grid.build()?;
        self.coercivity_grid.build()?;
        self.evolver.validate().map_err(|e| Error::Config(e.to_string()))?;
        let w = &self.window;
        if let (Some(t0), Some(sn)) = (w.t0, w.sn) {
            if !(t0 < sn) {
                return bad(format!("window needs T0 < Sn, got {t0} >= {sn}"));
            }
        }
        if let Some(l) = w.length {
            if !(l > 0.0) {
                return bad("window length must be positive".into());
            }
        }
        if let Some(list) = &w.sn_list {
            if list.is_empty() || list.windows(2).any(|p| !(p[0] < p[1])) {
                return bad("Sn_list must be non-empty and increasing".into());
            }
        }
        if let Some(s) = self.tube.sigma0 {
            if !(s > 0.0) {
                return bad("sigma0 must be positive".into());
            }
        }
        if let Some(e) = self.tube.eps {
            if !(e > 0.0) {
                return bad("eps must be positive".into());
            }
        }
        let sh = &self.shooting;
        if !(sh.check_interval > 0.0 && sh.bisection_tol > 0.0 && sh.broyden_tol > 0.0 && sh.ball_multiple > 0.0) {
            return bad("shooting tolerances must be positive".into());
        }
        if !(self.evolve_span.t_start.is_finite() && self.evolve_span.t_end.is_finite()) {
            return bad("evolve span must be finite".into());
        }
        Ok(())
    }

    pub fn ensemble(&self) -> Result<SolitonEnsemble> {
        SolitonEnsemble::new(self.p, self.ensemble.clone())
    }

    /// Shooting options with the configured evolver options.
    pub fn shoot_options(&self) -> ShootOptions {
        ShootOptions { evolve: self.evolver, ..self.shooting }
    }

    /// Fills σ₀, ε, `T0`, `Sn` and the minimum separation, then checks the
    /// ensemble against the grid over the whole window.
    pub fn resolve(&self, spectrum: &EdgeSpectrum) -> Result<RunConfig> {
        let mut out = self.clone();
        let ens = self.ensemble()?;
        let grid = self.grid.build()?;
        let sigma0 = self.tube.sigma0.unwrap_or_else(|| compute_sigma0(&ens, spectrum));
        let eps = match self.tube.eps {
            Some(e) => e,
            None => Modulator::new(&ens, spectrum, &grid)?.radius(),
        };
        let w = &self.window;
        let t0 = w.t0.unwrap_or_else(|| default_t0(sigma0));
        let sn = match (w.sn, &w.sn_list) {
            (Some(sn), _) => sn,
            (None, Some(list)) => list[0],
            (None, None) => t0 + w.length.unwrap_or(DEFAULT_WINDOW),
        };
        out.tube = TubeOverrides {
            sigma0: Some(sigma0),
            eps: Some(eps),
            radii: Some(self.tube.radii.unwrap_or_default()),
        };
        out.window = WindowConfig { t0: Some(t0), sn: Some(sn), length: Some(sn - t0), sn_list: w.sn_list.clone() };
        let min_sep = self.min_separation.unwrap_or_else(|| default_separation(sigma0));
        out.min_separation = Some(min_sep);
        out.shooting = self.shoot_options();
        out.validate()?;
        let tube = out.tube_spec()?;
        let last = w.sn_list.as_ref().and_then(|l| l.last().copied()).unwrap_or(sn).max(sn);
        if ens.len() > 1 && ens.separation(tube.sn) < min_sep {
            return Err(Error::Config(format!(
                "separation {:.3} at Sn is below the minimum {min_sep:.3}",
                ens.separation(tube.sn)
            )));
        }
        for t in [tube.t0, last] {
            for s in ens.params() {
                let center = s.center(t);
                if edge_tail(self.p, s.c, &grid, center) > crate::soliton::WRAP_TOL {
                    return Err(Error::Config(format!(
                        "soliton c = {} is centered at {center:.3} at t = {t}, outside the safe region",
                        s.c
                    )));
                }
            }
        }
        Ok(out)
    }

    /// Tube of a resolved config.
    pub fn tube_spec(&self) -> Result<TubeSpec> {
        let (Some(sigma0), Some(eps), Some(t0), Some(sn)) = (self.tube.sigma0, self.tube.eps, self.window.t0, self.window.sn)
        else {
            return Err(Error::Config("config is not resolved".into()));
        };
        TubeSpec::new(sigma0, eps, t0, sn, self.tube.radii.unwrap_or_default()).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let again = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn partial_config_keeps_defaults() {
        let cfg = RunConfig::from_json(
            r#"{"p": 7, "ensemble": [{"c": 0.7, "x0": -60}, {"c": 1.3, "x0": 0}], "grid": {"L": 256, "n": 4096}}"#,
        )
        .unwrap();
        assert_eq!(cfg.p, 7);
        assert_eq!(cfg.ensemble.len(), 2);
        assert_eq!(cfg.evolver, EvolveOptions::default());
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            r#"{"p": 1}"#,
            r#"{"ensemble": []}"#,
            r#"{"ensemble": [{"c": 1.3, "x0": 0}, {"c": 0.7, "x0": 50}]}"#,
            r#"{"grid": {"L": 100, "n": 1000}}"#,
            r#"{"window": {"T0": 5, "Sn": 4}}"#,
            r#"{"unknown": 1}"#,
            r#"{"evolver": {"dt": -1}}"#,
            "not json",
        ] {
            assert!(matches!(RunConfig::from_json(text), Err(Error::Config(_))), "{text}");
        }
    }
}
