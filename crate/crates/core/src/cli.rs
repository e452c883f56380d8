//! Command dispatch for the `gkdv` binary.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::coercivity::{random_probe, two_resolution_min, ConstraintSet};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evolver::{evolve, EvolveOptions};
use crate::linop::{cached_edge_eigenpair, EdgeSpectrum, Sign};
use crate::modulation::Modulator;
use crate::shooting::{continuation, find_a_hat, ShootResult};
use crate::snapshot::save_snapshot;
use crate::soliton::{conserved_quantities, criticality, ensemble_field, ground_state, profile_field};
use crate::verify::{Suite, CRITERIA};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Environment variable overriding the worker thread count.
pub const THREADS_ENV: &str = "GKDV_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Profile,
    Spectrum,
    Coercivity,
    Evolve,
    Construct,
    Verify,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Profile => "profile",
            Command::Spectrum => "spectrum",
            Command::Coercivity => "coercivity",
            Command::Evolve => "evolve",
            Command::Construct => "construct",
            Command::Verify => "verify",
        }
    }
}

/// Runs `command` and maps the outcome to an exit code: 0 success, 1 failed
/// verification or unsuccessful construction, 2 configuration error,
/// 3 numerical failure (a `diagnostic.json` is written to the output
/// directory).
pub fn dispatch(command: Command, config_path: Option<&Path>, out: Option<&Path>) -> i32 {
    let cfg = match config_path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    };
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output.clone());
    match run(command, &cfg, &out) {
        Ok(code) => code,
        Err(e) if !e.is_numerical() => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let Err(w) = write_diagnostic(&out, command, &e) {
                eprintln!("could not write diagnostic file: {w}");
            }
            EXIT_NUMERICAL
        }
    }
}

#[derive(Serialize)]
struct Diagnostic<'a> {
    command: &'a str,
    error: String,
    detail: String,
}

fn write_diagnostic(out: &Path, command: Command, e: &Error) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let d = Diagnostic { command: command.name(), error: e.to_string(), detail: format!("{e:?}") };
    std::fs::write(out.join("diagnostic.json"), serde_json::to_string_pretty(&d)?)?;
    Ok(())
}

fn run(command: Command, cfg: &RunConfig, out: &Path) -> Result<i32> {
    match command {
        Command::Profile => profile(cfg, out),
        Command::Spectrum => spectrum(cfg, out).map(|_| EXIT_OK),
        Command::Coercivity => coercivity(cfg, out),
        Command::Evolve => evolve_cmd(cfg, out),
        Command::Construct => construct(cfg, out),
        Command::Verify => Ok(verify(cfg)),
    }
}

fn create(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

fn csv_writer(path: PathBuf) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

fn profile(cfg: &RunConfig, out: &Path) -> Result<i32> {
    create(out)?;
    let grid = cfg.grid.build()?;
    let (class, k) = criticality(cfg.p, 1.0)?;
    let mut summary = csv_writer(out.join("profile_summary.csv"))?;
    writeln!(summary, "p,c,criticality,mass_exponent,mass,energy,residual")?;
    println!("p = {}, {class:?}, mass exponent {k}", cfg.p);
    for s in &cfg.ensemble {
        let q = ground_state(cfg.p, s.c, &grid, 0.0)?;
        let qxx = q.derivative(2)?;
        let residual = q
            .values()
            .iter()
            .zip(qxx.values())
            .map(|(q, qxx)| (qxx + q.powi(cfg.p as i32) - s.c * q).abs())
            .fold(0.0, f64::max);
        let (mass, energy) = conserved_quantities(&q, cfg.p);
        writeln!(summary, "{},{:.16e},{class:?},{k:.16e},{mass:.16e},{energy:.16e},{residual:.16e}", cfg.p, s.c)?;
        println!("c = {}: mass {mass:.12}, energy {energy:.12}, residual {residual:.2e}", s.c);
        let d1 = profile_field(cfg.p, s.c, &grid, 0.0, 1);
        let d2 = profile_field(cfg.p, s.c, &grid, 0.0, 2);
        let mut table = csv_writer(out.join(format!("profile_c{}.csv", s.c)))?;
        writeln!(table, "x,Q,Q_x,Q_xx")?;
        for i in 0..grid.n() {
            writeln!(
                table,
                "{:.16e},{:.16e},{:.16e},{:.16e}",
                grid.x(i),
                q.values()[i],
                d1.values()[i],
                d2.values()[i]
            )?;
        }
    }
    Ok(EXIT_OK)
}

fn load_spectrum(cfg: &RunConfig) -> Result<EdgeSpectrum> {
    cached_edge_eigenpair(cfg.p, &cfg.spectrum_grid.build()?, &cfg.cache_dir)
}

fn spectrum(cfg: &RunConfig, out: &Path) -> Result<EdgeSpectrum> {
    let s = load_spectrum(cfg)?;
    create(out)?;
    std::fs::write(out.join("spectrum.json"), serde_json::to_string_pretty(&s.report)?)?;
    let mut table = csv_writer(out.join("eigenfunctions.csv"))?;
    writeln!(table, "x,Y_plus,Y_minus,Z_plus,Z_minus")?;
    for i in 0..s.grid.n() {
        writeln!(
            table,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            s.grid.x(i),
            s.y(Sign::Plus).values()[i],
            s.y(Sign::Minus).values()[i],
            s.z(Sign::Plus).values()[i],
            s.z(Sign::Minus).values()[i]
        )?;
    }
    println!("p = {}: e0 = {:.12}, eta0 = {:.6}, gram = {:.9}", s.p, s.e0, s.eta0, s.gram());
    Ok(s)
}

type SetBuilder<'a> = Box<dyn Fn(&crate::grid::Grid1D) -> Result<ConstraintSet> + 'a>;

/// Random constrained fields per set in `coercivity`, drawn from `seed`.
const PROBE_SAMPLES: usize = 20;

fn coercivity(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let s = load_spectrum(cfg)?;
    let grid = cfg.coercivity_grid.build()?;
    let p = cfg.p;
    create(out)?;
    let mut table = csv_writer(out.join("coercivity.csv"))?;
    let header = "p,set,lambda_min,n,probe_min";
    writeln!(table, "{header}")?;
    println!("{header}");
    let sets: [(&str, SetBuilder); 3] = [
        ("unstable+kernel", Box::new(|g| ConstraintSet::unstable_and_kernel(&s, 1.0, 0.0, g))),
        ("kernel", Box::new(|g| ConstraintSet::kernel(p, 1.0, 0.0, g))),
        ("negative+kernel", Box::new(|g| ConstraintSet::negative_and_kernel(p, 1.0, 0.0, g))),
    ];
    for (label, build) in &sets {
        let m = two_resolution_min(p, 1.0, 0.0, &grid, build)?;
        let probe = random_probe(p, 1.0, 0.0, &build(&grid)?, PROBE_SAMPLES, cfg.seed)?;
        for (lambda, n) in [(m.coarse, m.n_coarse), (m.fine, m.n_fine)] {
            let line = format!("{p},{label},{lambda:.16e},{n},{probe:.16e}");
            writeln!(table, "{line}")?;
            println!("{line}");
        }
    }
    Ok(EXIT_OK)
}

fn evolve_cmd(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let grid = cfg.grid.build()?;
    let ens = cfg.ensemble()?;
    let span = cfg.evolve_span;
    let u0 = ensemble_field(&ens, span.t_start, &grid)?;
    let opts = EvolveOptions { ..cfg.evolver };
    let tr = evolve(&u0, cfg.p, span.t_start, span.t_end, &opts)?;
    create(out)?;
    std::fs::write(out.join("config.resolved.json"), cfg.to_json())?;
    let snaps = out.join("snapshots");
    std::fs::create_dir_all(&snaps)?;
    let mut table = csv_writer(out.join("trajectory.csv"))?;
    writeln!(table, "t,mass,energy,h1,snapshot")?;
    for (k, s) in tr.samples.iter().enumerate() {
        let name = format!("u_{k:05}.snap");
        save_snapshot(&s.u, s.t, snaps.join(&name))?;
        writeln!(table, "{:.16e},{:.16e},{:.16e},{:.16e},{name}", s.t, s.mass, s.energy, s.u.norm_h1())?;
    }
    println!(
        "{} steps of {:.3e}; max mass drift {:.2e}, max energy drift {:.2e}",
        tr.steps, tr.dt, tr.max_mass_drift, tr.max_energy_drift
    );
    Ok(EXIT_OK)
}

fn write_run(dir: &Path, cfg: &RunConfig, r: &ShootResult) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.resolved.json"), cfg.to_json())?;
    std::fs::write(dir.join("result.json"), serde_json::to_string_pretty(r)?)?;
    r.write_series_csv(dir.join("series.csv"))?;
    if let Some(u) = &r.u_end {
        let t = r.rows.last().map_or(r.tube.t0, |row| row.t);
        save_snapshot(u, t, dir.join("u_end.snap"))?;
    }
    Ok(())
}

fn construct(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let s = load_spectrum(cfg)?;
    let resolved = cfg.resolve(&s)?;
    create(out)?;
    std::fs::write(out.join("config.resolved.json"), resolved.to_json())?;
    let grid = resolved.grid.build()?;
    let ens = resolved.ensemble()?;
    let modulator = Modulator::new(&ens, &s, &grid)?;
    let tube = resolved.tube_spec()?;
    let opts = resolved.shoot_options();
    let results = match &resolved.window.sn_list {
        Some(list) => continuation(&modulator, &tube, list, &opts)?,
        None => vec![find_a_hat(&modulator, &tube, &opts, None)?],
    };
    let single = results.len() == 1;
    for (k, r) in results.iter().enumerate() {
        let dir = if single { out.to_path_buf() } else { out.join(format!("sn_{k:02}")) };
        let mut c = resolved.clone();
        c.window.sn = Some(r.tube.sn);
        c.window.length = Some(r.tube.sn - r.tube.t0);
        write_run(&dir, &c, r)?;
        println!(
            "Sn = {:.4}: success {}, a+ = {:?}, T_exit = {:.4}, {} runs",
            r.tube.sn, r.success, r.a_hat_plus, r.t_exit, r.runs
        );
    }
    Ok(if results.iter().all(|r| r.success) { EXIT_OK } else { EXIT_VERIFY })
}

fn verify(cfg: &RunConfig) -> i32 {
    let suite = Suite::new(&cfg.cache_dir);
    let mut blocking = false;
    for id in CRITERIA {
        let o = suite.check(id);
        println!("{}", o.line());
        blocking |= o.blocking();
    }
    if blocking {
        EXIT_VERIFY
    } else {
        EXIT_OK
    }
}
