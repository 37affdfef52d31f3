//! Orchestration: run directories, stage sequencing, sweeps and the
//! verification suite.

use crate::annulus::{annulus_error, fit_expansion, harmonic_remainder, AnnulusLattice};
use crate::config::RunConfig;
use crate::error::{LabError, Result};
use crate::functionals::{
    cubic_lemma_check, d_of, e_of, f_of_t, frechet_term, functional_series, BumpProfile,
    FunctionalSeries, LinearizationInput, NormCaps, SurfaceData, Verdict,
};
use crate::levelset::{LevelIntegrator, SolutionFields};
use crate::math::{Sym3, Vec3};
use crate::metric::MetricModel;
use crate::oracle1d::RadialOracle;
use crate::report::{num, write_checkpoint, write_json, CsvTable};
use crate::solver::{
    hypothesis_checks, radial_oracle_solution, solve_green, GreensSolution, Provenance,
    SolveOptions,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageStatus {
    pub name: String,
    pub ok: bool,
    pub error: Option<String>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub model_kind: String,
    pub r_nonneg: bool,
    pub flux_constant: f64,
    pub residual: f64,
    /// Relative L-inf error against the radial oracle on [1, r_max/8]
    /// (radial grid solves only).
    pub oracle_linf: Option<f64>,
    pub two_sided_c: f64,
    pub two_sided_upper: f64,
    pub x_decay_exponent: Option<f64>,
    pub energy_spread: f64,
    pub f_monotone: Verdict,
    pub ad_monotone: Verdict,
    pub d_nonnegative: bool,
    pub ad_limit: f64,
    pub ad_uncertainty: f64,
    /// (lim aD)/m measured on the Schwarzschild radial oracle with the same
    /// a-grid; mass_estimate = ad_limit / calibration.
    pub calibration: f64,
    pub mass_estimate: f64,
    pub e_identity_max_rel: f64,
    pub fitted_c: f64,
    pub dipole: Vec3,
    pub xbar: Vec3,
    pub b: Vec3,
    pub closure_defect: f64,
    pub annulus_trend_ok: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub stages: Vec<StageStatus>,
    pub summary: Option<RunSummary>,
}

impl RunManifest {
    pub fn failed(&self) -> bool {
        self.stages.iter().any(|s| !s.ok)
    }
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn config_hash(cfg: &RunConfig) -> String {
    let text = toml::to_string(cfg).unwrap_or_default();
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    format!("{:x}", h.finalize())
}

/// Relative L-inf error of a radial grid solve against the 1D oracle,
/// measured on the calibration range r in [1, r_max/8].
pub fn oracle_linf_error(sol: &GreensSolution) -> Result<f64> {
    let oracle = RadialOracle::new(sol.model)?;
    let g = &sol.grid;
    let mut worst = 0.0f64;
    for i in g.shell_range(1.0, g.spec.r_max / 8.0) {
        let exact = oracle.u(g.r_centers[i]);
        for ang in 0..g.n_angular() {
            let err = (sol.u[i * g.n_angular() + ang] - exact).abs() / exact;
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Execute the full pipeline for one configuration. Stage failures are
/// recorded in the manifest (with their error payloads) rather than aborting
/// the whole run; `RunManifest::failed` tells the caller whether to exit
/// nonzero. Invalid configurations fail before any directory is created.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let model = cfg.metric_model()?;
    let out = PathBuf::from(&cfg.output.directory);
    std::fs::create_dir_all(&out)?;
    let started = now_unix();
    let mut stages: Vec<StageStatus> = Vec::new();

    let stage = |stages: &mut Vec<StageStatus>,
                     name: &str,
                     files: Vec<String>,
                     result: &Result<()>| {
        stages.push(StageStatus {
            name: name.to_string(),
            ok: result.is_ok(),
            error: result.as_ref().err().map(|e| e.to_string()),
            files,
        });
    };

    // --- solve ---
    let psi = BumpProfile::new(cfg.functionals.s0)?;
    let solve_result: Result<GreensSolution> = if cfg.solver.oracle {
        radial_oracle_solution(cfg.grid_spec(), model)
    } else {
        solve_green(cfg.grid_spec(), model, cfg.solve_options())
    };
    let sol = match solve_result {
        Ok(sol) => {
            let r = write_checkpoint(&sol, &out.join("checkpoint.txt"));
            stage(&mut stages, "solve", vec!["checkpoint.txt".into()], &r);
            sol
        }
        Err(e) => {
            stage(&mut stages, "solve", vec![], &Err(e));
            return Ok(RunManifest {
                config_hash: config_hash(cfg),
                version: env!("CARGO_PKG_VERSION").to_string(),
                started_unix: started,
                finished_unix: now_unix(),
                stages,
                summary: None,
            });
        }
    };

    // --- hypothesis checks ---
    let hyp = hypothesis_checks(&sol);
    let hyp_write: Result<()> = hyp.as_ref().map_err(|e| clone_err(e)).and_then(|h| {
        let mut csv = CsvTable::new(&["R", "energy_product", "l1_x"]);
        for i in 0..h.radii.len() {
            csv.row(vec![num(h.radii[i]), num(h.energy_products[i]), num(h.l1_x[i])]);
        }
        csv.write(&out.join("hypothesis.csv"))
    });
    stage(&mut stages, "hypothesis", vec!["hypothesis.csv".into()], &hyp_write);

    // --- functionals ---
    let functional_result: Result<(FunctionalSeries, f64)> = (|| {
        let r_nonneg = model.nonnegative_scalar_curvature();
        if sol.provenance == Provenance::RadialOracle {
            let oracle = RadialOracle::new(model)?;
            let series = functional_series(
                &oracle,
                &cfg.functionals.t_grid,
                &cfg.functionals.a_grid,
                &psi,
                r_nonneg,
            )?;
            write_oracle_levels(&oracle, &cfg.functionals.t_grid, &out)?;
            write_functional_tables(&oracle, cfg, &psi, &series, &out)?;
            let e_max = e_identity_table(&oracle, cfg, &out)?;
            Ok((series, e_max))
        } else {
            let fields = SolutionFields::build(&sol)?;
            let mut li = LevelIntegrator::new(&fields);
            li.eps_mult = cfg.functionals.eps_mult;
            let series = functional_series(
                &li,
                &cfg.functionals.t_grid,
                &cfg.functionals.a_grid,
                &psi,
                r_nonneg,
            )?;
            write_grid_levels(&li, &cfg.functionals.t_grid, &out)?;
            write_functional_tables(&li, cfg, &psi, &series, &out)?;
            let e_max = e_identity_table(&li, cfg, &out)?;
            Ok((series, e_max))
        }
    })();
    stage(
        &mut stages,
        "functionals",
        vec!["levels.csv".into(), "functionals.csv".into(), "e_identity.csv".into()],
        &functional_result.as_ref().map(|_| ()).map_err(clone_err),
    );

    // --- asymptotics ---
    let lattice = AnnulusLattice::standard();
    let error_lattice = AnnulusLattice::with_shape(12, 6, 12);
    let asym_result = (|| {
        let fit = fit_expansion(&sol, &lattice, &cfg.asymptotics.r_values)?;
        let mut csv = CsvTable::new(&[
            "R", "c", "d_x", "d_y", "d_z", "res_l1", "res_l125", "res_w4",
        ]);
        for i in 0..fit.r_values.len() {
            csv.row(vec![
                num(fit.r_values[i]),
                num(fit.per_r_c[i]),
                num(fit.per_r_dipole[i].x),
                num(fit.per_r_dipole[i].y),
                num(fit.per_r_dipole[i].z),
                num(fit.residual_l1[i]),
                num(fit.residual_l125[i]),
                num(fit.residual_w4[i]),
            ]);
        }
        csv.write(&out.join("asymptotics.csv"))?;

        let err = annulus_error(&sol, &error_lattice, &cfg.asymptotics.r_values, cfg.asymptotics.q)?;
        let mut ecsv = CsvTable::new(&["R", "q", "value"]);
        for i in 0..err.r_values.len() {
            ecsv.row(vec![num(err.r_values[i]), num(err.q), num(err.values[i])]);
        }
        ecsv.write(&out.join("annulus_error.csv"))?;

        let rem = harmonic_remainder(&sol, &lattice, &cfg.asymptotics.r_values)?;
        Ok((fit, err, rem))
    })();
    stage(
        &mut stages,
        "asymptotics",
        vec!["asymptotics.csv".into(), "annulus_error.csv".into()],
        &asym_result.as_ref().map(|_| ()).map_err(clone_err),
    );

    // --- summary ---
    let summary = match (&hyp, &functional_result, &asym_result) {
        (Ok(h), Ok((series, e_max)), Ok((fit, err, rem))) => {
            let calibration =
                crate::functionals::calibration_from_oracle(&psi, 1.0, &cfg.functionals.a_grid)?;
            let oracle_linf = if model.is_radial() && sol.provenance == Provenance::GridSolve {
                Some(oracle_linf_error(&sol)?)
            } else {
                None
            };
            let s = RunSummary {
                model_kind: cfg.model.kind.clone(),
                r_nonneg: model.nonnegative_scalar_curvature(),
                flux_constant: sol.flux_constant,
                residual: sol.residual,
                oracle_linf,
                two_sided_c: h.c_lower,
                two_sided_upper: h.c_upper,
                x_decay_exponent: h.x_decay_exponent,
                energy_spread: h.energy_spread,
                f_monotone: series.f_monotone.clone(),
                ad_monotone: series.ad_monotone.clone(),
                d_nonnegative: series.d_nonnegative,
                ad_limit: series.limit,
                ad_uncertainty: series.uncertainty,
                calibration,
                mass_estimate: series.limit / calibration,
                e_identity_max_rel: *e_max,
                fitted_c: fit.c,
                dipole: fit.dipole,
                xbar: rem.xbar,
                b: rem.b,
                closure_defect: rem.closure_defect,
                annulus_trend_ok: err.trend_ok,
            };
            let r = write_json(&s, &out.join("summary.json"));
            stage(&mut stages, "summary", vec!["summary.json".into()], &r);
            Some(s)
        }
        _ => None,
    };

    let manifest = RunManifest {
        config_hash: config_hash(cfg),
        version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix: started,
        finished_unix: now_unix(),
        stages,
        summary,
    };
    write_json(&manifest, &out.join("manifest.json"))?;
    Ok(manifest)
}

fn clone_err(e: &LabError) -> LabError {
    LabError::Validation(e.to_string())
}

const LEVELS_HEADER: [&str; 11] = [
    "t",
    "area",
    "int_H_gradu",
    "int_gradu_sq",
    "smear_width",
    "int_grad_log",
    "int_a_ring",
    "int_R",
    "int_sphere_defect",
    "assembled_fprime",
    "F",
];

fn write_grid_levels(li: &LevelIntegrator, t_grid: &[f64], out: &Path) -> Result<()> {
    let mut csv = CsvTable::new(&LEVELS_HEADER);
    for &t in t_grid {
        let sr = li.surface_report(t)?;
        let ct = li.curvature_terms(t)?;
        let f = f_of_t(li, t)?;
        csv.row(vec![
            num(t),
            num(sr.area),
            num(sr.int_h_gradu),
            num(sr.int_gradu_sq),
            num(sr.smear_width),
            num(ct.int_grad_log),
            num(ct.int_a_ring),
            num(ct.int_r),
            num(ct.int_sphere_defect),
            num(ct.assembled_fprime),
            num(f),
        ]);
    }
    csv.write(&out.join("levels.csv"))
}

fn write_oracle_levels(oracle: &RadialOracle, t_grid: &[f64], out: &Path) -> Result<()> {
    let mut csv = CsvTable::new(&LEVELS_HEADER);
    for &t in t_grid {
        let p = oracle.at_level(t);
        // Radial models: level sets are umbilic round spheres, so the
        // traceless and gradient-log terms vanish identically.
        let defect = 2.0 * p.grad_norm_g / p.u - p.mean_curvature;
        let int_r = p.scalar_curvature * p.area;
        let int_defect = defect * defect * p.area;
        let assembled = 0.5 * int_r + 0.75 * int_defect;
        csv.row(vec![
            num(t),
            num(p.area),
            num(oracle.surface_h_gradu(t)),
            num(oracle.surface_gradu_sq(t)),
            num(0.0),
            num(0.0),
            num(0.0),
            num(int_r),
            num(int_defect),
            num(assembled),
            num(f_of_t(oracle, t)?),
        ]);
    }
    csv.write(&out.join("levels.csv"))
}

fn write_functional_tables(
    sd: &impl SurfaceData,
    cfg: &RunConfig,
    psi: &BumpProfile,
    series: &FunctionalSeries,
    out: &Path,
) -> Result<()> {
    let mut csv = CsvTable::new(&["a", "D", "D_quadrature", "aD"]);
    for (i, &a) in cfg.functionals.a_grid.iter().enumerate() {
        let d = d_of(sd, a, psi)?;
        csv.row(vec![num(a), num(series.d_values[i]), num(d.quadrature), num(series.ad_values[i])]);
    }
    csv.write(&out.join("functionals.csv"))
}

fn e_identity_table(sd: &impl SurfaceData, cfg: &RunConfig, out: &Path) -> Result<f64> {
    let mut csv = CsvTable::new(&["a", "s", "flux_form", "quadrature", "rel_discrepancy"]);
    let mut max_rel = 0.0f64;
    for pair in &cfg.functionals.e_pairs {
        let e = e_of(sd, pair[0], pair[1])?;
        let scale = e.flux_form.abs().max(2.0 * std::f64::consts::PI / (pair[0] + pair[1]));
        let rel = e.discrepancy / scale;
        max_rel = max_rel.max(rel);
        csv.row(vec![num(pair[0]), num(pair[1]), num(e.flux_form), num(e.quadrature), num(rel)]);
    }
    csv.write(&out.join("e_identity.csv"))?;
    Ok(max_rel)
}

// ---------------------------------------------------------------------------
// Sweeps.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    M,
    Epsilon,
    Tau,
    Resolution,
}

impl std::str::FromStr for SweepAxis {
    type Err = LabError;
    fn from_str(s: &str) -> Result<SweepAxis> {
        match s {
            "m" => Ok(SweepAxis::M),
            "epsilon" => Ok(SweepAxis::Epsilon),
            "tau" => Ok(SweepAxis::Tau),
            "resolution" => Ok(SweepAxis::Resolution),
            other => Err(LabError::Validation(format!(
                "sweep axis must be one of m, epsilon, tau, resolution; got '{other}'"
            ))),
        }
    }
}

fn apply_axis(base: &RunConfig, axis: SweepAxis, value: f64) -> Result<RunConfig> {
    let mut cfg = base.clone();
    match axis {
        SweepAxis::M => cfg.model.m = Some(value),
        SweepAxis::Epsilon => cfg.model.epsilon = Some(value),
        SweepAxis::Tau => cfg.model.tau = Some(value),
        SweepAxis::Resolution => {
            if value <= 0.0 || value.fract() != 0.0 {
                return Err(LabError::Validation(format!(
                    "resolution axis values must be positive integers, got {value}"
                )));
            }
            let f = value as usize;
            cfg.grid.n_r = base.grid.n_r * f;
            cfg.grid.n_theta = base.grid.n_theta * f;
            cfg.grid.n_phi = base.grid.n_phi * f;
        }
    }
    cfg.output.directory =
        format!("{}/{}_{}", base.output.directory, axis_name(axis), fmt_axis_value(value));
    Ok(cfg)
}

fn axis_name(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::M => "m",
        SweepAxis::Epsilon => "epsilon",
        SweepAxis::Tau => "tau",
        SweepAxis::Resolution => "resolution",
    }
}

fn fmt_axis_value(v: f64) -> String {
    format!("{v}").replace('.', "p")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub status: String,
    pub ad_limit: Option<f64>,
    pub mass_estimate: Option<f64>,
    /// (lim aD)/m; only for the m axis.
    pub ratio: Option<f64>,
    pub oracle_linf: Option<f64>,
}

/// One run per axis value; per-run failures are isolated into failed rows.
/// The aggregate CSV is keyed by the axis value.
pub fn sweep(
    base: &RunConfig,
    axis: SweepAxis,
    values: &[f64],
    workers: usize,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(LabError::Validation("sweep needs a non-empty value list".into()));
    }
    base.validate()?;
    let configs: Vec<RunConfig> =
        values.iter().map(|&v| apply_axis(base, axis, v)).collect::<Result<_>>()?;

    let run_one = |cfg: &RunConfig, value: f64| -> SweepRow {
        match run_pipeline(cfg) {
            Ok(man) if !man.failed() => {
                let s = man.summary.as_ref();
                SweepRow {
                    value,
                    status: "ok".into(),
                    ad_limit: s.map(|s| s.ad_limit),
                    mass_estimate: s.map(|s| s.mass_estimate),
                    ratio: if axis == SweepAxis::M {
                        s.map(|s| s.ad_limit / value)
                    } else {
                        None
                    },
                    oracle_linf: s.and_then(|s| s.oracle_linf),
                }
            }
            Ok(man) => {
                let msg = man
                    .stages
                    .iter()
                    .find(|s| !s.ok)
                    .map(|s| format!("{}: {}", s.name, s.error.clone().unwrap_or_default()))
                    .unwrap_or_else(|| "failed".into());
                SweepRow {
                    value,
                    status: msg,
                    ad_limit: None,
                    mass_estimate: None,
                    ratio: None,
                    oracle_linf: None,
                }
            }
            Err(e) => SweepRow {
                value,
                status: e.to_string(),
                ad_limit: None,
                mass_estimate: None,
                ratio: None,
                oracle_linf: None,
            },
        }
    };

    let rows: Vec<SweepRow> = if workers > 1 {
        let mut rows: Vec<Option<SweepRow>> = (0..values.len()).map(|_| None).collect();
        let chunks: Vec<(usize, &RunConfig, f64)> = configs
            .iter()
            .zip(values)
            .enumerate()
            .map(|(i, (c, &v))| (i, c, v))
            .collect();
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for chunk in chunks.chunks(values.len().div_ceil(workers)) {
                handles.push(scope.spawn(move || {
                    chunk.iter().map(|&(i, c, v)| (i, run_one(c, v))).collect::<Vec<_>>()
                }));
            }
            for h in handles {
                for (i, row) in h.join().expect("sweep worker panicked") {
                    rows[i] = Some(row);
                }
            }
        });
        rows.into_iter().map(|r| r.expect("all rows filled")).collect()
    } else {
        configs.iter().zip(values).map(|(c, &v)| run_one(c, v)).collect()
    };

    let mut csv = CsvTable::new(&[
        "value", "status", "ad_limit", "mass_estimate", "ratio", "oracle_linf",
    ]);
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    for r in &rows {
        csv.row(vec![
            num(r.value),
            r.status.clone(),
            opt(r.ad_limit),
            opt(r.mass_estimate),
            opt(r.ratio),
            opt(r.oracle_linf),
        ]);
    }
    csv.write(&PathBuf::from(&base.output.directory).join("sweep.csv"))?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Verification suite.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub pass: bool,
    pub measured: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub level: String,
    pub criteria: Vec<Criterion>,
}

impl VerifyReport {
    pub fn pass(&self) -> bool {
        self.criteria.iter().all(|c| c.pass)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyLevel {
    Quick,
    Full,
}

impl std::str::FromStr for VerifyLevel {
    type Err = LabError;
    fn from_str(s: &str) -> Result<VerifyLevel> {
        match s {
            "quick" => Ok(VerifyLevel::Quick),
            "full" => Ok(VerifyLevel::Full),
            other => Err(LabError::Validation(format!(
                "verify level must be quick or full, got '{other}'"
            ))),
        }
    }
}

pub fn verify_suite(level: VerifyLevel) -> Result<VerifyReport> {
    let mut criteria = Vec::new();
    let mut push = |name: &str, measured: f64, tolerance: f64| {
        criteria.push(Criterion {
            name: name.to_string(),
            pass: measured <= tolerance,
            measured,
            tolerance,
        });
    };
    let psi = BumpProfile::standard();

    // Euclidean cancellations on the radial oracle.
    let euclid = RadialOracle::new(MetricModel::euclidean())?;
    let mut worst_f = 0.0f64;
    for &t in &[2.0, 4.0, 8.0, 16.0, 32.0, 64.0] {
        worst_f = worst_f.max(f_of_t(&euclid, t)?.abs() / (4.0 * std::f64::consts::PI * t));
    }
    push("euclidean F cancellation", worst_f, 1e-2);
    let mut worst_ad = 0.0f64;
    for &a in &[4.0, 8.0, 16.0, 32.0] {
        worst_ad = worst_ad.max((a * d_of(&euclid, a, &psi)?.value).abs());
    }
    push("euclidean aD vanishing", worst_ad, 1e-3 * psi.c_psi);

    // Cubic lemma empirical bound.
    push("cubic lemma ratio", cubic_lemma_check(1_000_000, 42), 4.0);

    // Frechet derivative kills dipoles.
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let mut worst_l = 0.0f64;
    for _ in 0..20 {
        let d = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let v = move |y: Vec3| d.dot(y) / y.norm().powi(3);
        let gv = move |y: Vec3| {
            let r = y.norm();
            d.scale(1.0 / r.powi(3)) - y.scale(3.0 * d.dot(y) / r.powi(5))
        };
        let input = LinearizationInput { k: &|_| Sym3::ZERO, v: &v, grad_v: &gv };
        worst_l = worst_l.max(frechet_term(&input, &psi, NormCaps::default())?.abs());
    }
    push("frechet dipole annihilation", worst_l, 1e-8);

    // E identity on the Schwarzschild oracle.
    let schw = RadialOracle::new(MetricModel::schwarzschild(1.0)?)?;
    let mut worst_e = 0.0f64;
    for (a, s) in [(4.0, 1.0), (4.0, 4.0), (8.0, 2.0)] {
        let e = e_of(&schw, a, s)?;
        worst_e = worst_e.max(e.discrepancy / e.flux_form.abs());
    }
    push("E identity (oracle)", worst_e, 1e-2);

    if level == VerifyLevel::Full {
        use crate::grid::GridSpec;

        // Oracle equivalence with resolution halving.
        let model = MetricModel::schwarzschild(1.0)?;
        let coarse = GridSpec { r_min: 1.0 / 32.0, r_max: 64.0, n_r: 64, n_theta: 8, n_phi: 16 };
        let fine = GridSpec { r_min: 1.0 / 32.0, r_max: 64.0, n_r: 128, n_theta: 16, n_phi: 32 };
        let sol_c = solve_green(coarse, model, SolveOptions::default())?;
        let sol_f = solve_green(fine, model, SolveOptions::default())?;
        let e_c = oracle_linf_error(&sol_c)?;
        let e_f = oracle_linf_error(&sol_f)?;
        push("oracle equivalence (coarse)", e_c, 1e-2);
        // improvement factor >= 1.8 means e_f <= e_c / 1.8.
        push("oracle equivalence halving", e_f, e_c / 1.8);

        // Monotonicity on a grid solve.
        let spec = GridSpec { r_min: 1.0 / 32.0, r_max: 1024.0, n_r: 120, n_theta: 8, n_phi: 16 };
        let sol = solve_green(spec, model, SolveOptions::default())?;
        let fields = SolutionFields::build(&sol)?;
        let li = LevelIntegrator::new(&fields);
        let t_grid = [2.0, 3.0, 4.5, 6.75, 10.0, 15.0, 22.0, 33.0];
        let a_grid = [4.0, 8.0, 16.0, 32.0];
        let series = functional_series(&li, &t_grid, &a_grid, &psi, true)?;
        let mono = matches!(series.f_monotone, Verdict::Monotone)
            && matches!(series.ad_monotone, Verdict::Monotone)
            && series.d_nonnegative;
        push("monotonicity (grid)", if mono { 0.0 } else { 1.0 }, 0.0);

        // Fitted expansion constant.
        let lattice = AnnulusLattice::standard();
        let fit = fit_expansion(&sol, &lattice, &[16.0, 32.0, 64.0, 128.0])?;
        push("fitted c = 1", (fit.c - 1.0).abs(), 0.01);

        // Negative control: with normalization disabled the fitted constant
        // must land near 1/(4 pi), i.e. FAIL the c = 1 criterion.
        let opts = SolveOptions { normalize: false, ..SolveOptions::default() };
        let sol_nn = solve_green(spec, model, opts)?;
        let fit_nn = fit_expansion(&sol_nn, &lattice, &[16.0, 32.0, 64.0, 128.0])?;
        let control_violation = (fit_nn.c - 1.0).abs();
        criteria.push(Criterion {
            name: "negative control (unnormalized c != 1)".into(),
            pass: control_violation > 0.01,
            measured: control_violation,
            tolerance: 0.01,
        });

        // Annulus error decay on a decay-compliant model.
        let dmodel = MetricModel::new(crate::metric::ModelKind::DecayPerturbation {
            epsilon: 0.05,
            tau: 0.5,
            angular: 0.3,
        })?;
        let dspec = GridSpec { r_min: 1.0 / 32.0, r_max: 512.0, n_r: 96, n_theta: 8, n_phi: 16 };
        let dsol = solve_green(dspec, dmodel, SolveOptions::default())?;
        let err = annulus_error(
            &dsol,
            &AnnulusLattice::with_shape(10, 6, 10),
            &[4.0, 8.0, 16.0, 32.0],
            1.25,
        )?;
        criteria.push(Criterion {
            name: "annulus error decay".into(),
            pass: err.trend_ok && err.values.last().unwrap() < &err.values[0],
            measured: err.values.last().unwrap() / err.values[0],
            tolerance: 1.0,
        });
    }

    Ok(VerifyReport {
        level: match level {
            VerifyLevel::Quick => "quick".into(),
            VerifyLevel::Full => "full".into(),
        },
        criteria,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::example_config;

    fn small_config(kind: &str, dir: &Path) -> RunConfig {
        let mut cfg = example_config(kind, dir.to_str().unwrap());
        cfg.grid = crate::config::GridSection {
            r_min: 1.0 / 32.0,
            r_max: 1024.0,
            n_r: 96,
            n_theta: 8,
            n_phi: 16,
        };
        cfg.functionals.t_grid = vec![2.0, 4.0, 8.0, 16.0];
        cfg
    }

    #[test]
    fn euclidean_pipeline_all_pass() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config("euclidean", dir.path());
        let man = run_pipeline(&cfg).unwrap();
        assert!(!man.failed(), "stages: {:?}", man.stages);
        let s = man.summary.unwrap();
        assert!(matches!(s.f_monotone, Verdict::Monotone));
        assert!(matches!(s.ad_monotone, Verdict::Monotone));
        assert!(s.mass_estimate.abs() < 0.01, "mass = {}", s.mass_estimate);
        assert!((s.fitted_c - 1.0).abs() < 0.01);
        for f in ["checkpoint.txt", "hypothesis.csv", "levels.csv", "functionals.csv",
                  "e_identity.csv", "asymptotics.csv", "annulus_error.csv",
                  "summary.json", "manifest.json"] {
            assert!(dir.path().join(f).exists(), "missing {f}");
        }
    }

    #[test]
    fn schwarzschild_oracle_pipeline_positive_mass() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config("schwarzschild", dir.path());
        cfg.solver.oracle = true;
        let man = run_pipeline(&cfg).unwrap();
        assert!(!man.failed(), "stages: {:?}", man.stages);
        let s = man.summary.unwrap();
        assert!(matches!(s.f_monotone, Verdict::Monotone));
        assert!(matches!(s.ad_monotone, Verdict::Monotone));
        assert!(s.d_nonnegative);
        assert!(s.mass_estimate > 0.5 && s.mass_estimate < 1.5, "mass = {}", s.mass_estimate);
    }

    #[test]
    fn invalid_config_creates_no_run_directory() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("never");
        let mut cfg = small_config("euclidean", &sub);
        cfg.asymptotics.q = 1.5;
        assert!(run_pipeline(&cfg).is_err());
        assert!(!sub.exists());
    }

    #[test]
    fn pipeline_runs_are_deterministic() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let man1 = run_pipeline(&small_config("euclidean", d1.path())).unwrap();
        let man2 = run_pipeline(&small_config("euclidean", d2.path())).unwrap();
        assert_eq!(man1.config_hash.len(), 64);
        // The two configs differ only in the output directory.
        assert_eq!(man1.version, man2.version);
        for f in ["levels.csv", "functionals.csv", "asymptotics.csv", "hypothesis.csv",
                  "annulus_error.csv", "e_identity.csv", "checkpoint.txt"] {
            let a = std::fs::read_to_string(d1.path().join(f)).unwrap();
            let b = std::fs::read_to_string(d2.path().join(f)).unwrap();
            assert_eq!(a, b, "file {f} differs between identical runs");
        }
    }

    #[test]
    fn sweep_over_mass_ratio_constant() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config("schwarzschild", dir.path());
        cfg.solver.oracle = true;
        let rows = sweep(&cfg, SweepAxis::M, &[0.5, 1.0, 2.0], 1).unwrap();
        let ratios: Vec<f64> = rows.iter().map(|r| r.ratio.unwrap()).collect();
        let mean = ratios.iter().sum::<f64>() / 3.0;
        for r in &ratios {
            assert!((r - mean).abs() / mean < 0.02, "ratios {ratios:?}");
        }
        assert!(dir.path().join("sweep.csv").exists());
        assert!(sweep(&cfg, SweepAxis::M, &[], 1).is_err());
    }

    #[test]
    fn verify_quick_passes() {
        let rep = verify_suite(VerifyLevel::Quick).unwrap();
        assert!(rep.pass(), "criteria: {:#?}", rep.criteria);
        assert!(rep.criteria.len() >= 5);
    }
}
