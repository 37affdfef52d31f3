//! The mass functionals F(t), E(a,s), D(a), the bump profile psi, and the
//! Frechet linearization of the volumetric D-functional at flat data.
//!
//! Everything that consumes level-set data is generic over `SurfaceData`, so
//! each functional can be evaluated both on a grid solution (via the smeared
//! coarea integrator) and on the 1D radial oracle (closed forms). The two
//! routes share no discretization, which is what makes the cross-checks
//! meaningful.

use crate::error::{LabError, Result};
use crate::levelset::LevelIntegrator;
use crate::math::{gauss_legendre, Sym3, Vec3};
use crate::oracle1d::RadialOracle;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

// ---------------------------------------------------------------------------
// Bump profile.
// ---------------------------------------------------------------------------

/// Smooth bump compactly supported in (s0, 1 - s0), quadrature-normalized to
/// unit mass.
#[derive(Debug, Clone, Copy)]
pub struct BumpProfile {
    pub s0: f64,
    norm: f64,
    pub c_psi: f64,
}

impl BumpProfile {
    pub fn new(s0: f64) -> Result<BumpProfile> {
        if !(s0 > 0.0 && s0 < 0.5) {
            return Err(LabError::Validation(format!(
                "bump margin must lie in (0, 1/2), got {s0}"
            )));
        }
        let raw = |s: f64| {
            let g = (s - s0) * (1.0 - s0 - s);
            if g <= 0.0 {
                0.0
            } else {
                (-1.0 / g).exp()
            }
        };
        // The integrand is smooth with all derivatives vanishing at the
        // support boundary; composite Gauss-Legendre converges fast.
        let mass = gauss_legendre(raw, s0, 1.0 - s0, 64);
        let norm = 1.0 / mass;
        let mut profile = BumpProfile { s0, norm, c_psi: 0.0 };
        profile.c_psi = 2.0 * PI * profile.integrate(|s| 1.0 / (1.0 + s));
        Ok(profile)
    }

    pub fn standard() -> BumpProfile {
        BumpProfile::new(0.05).expect("standard margin is valid")
    }

    pub fn psi(&self, s: f64) -> f64 {
        let g = (s - self.s0) * (1.0 - self.s0 - s);
        if g <= 0.0 {
            0.0
        } else {
            self.norm * (-1.0 / g).exp()
        }
    }

    pub fn psi_prime(&self, s: f64) -> f64 {
        let g = (s - self.s0) * (1.0 - self.s0 - s);
        if g <= 0.0 {
            0.0
        } else {
            self.psi(s) * (1.0 - 2.0 * s) / (g * g)
        }
    }

    /// int_0^1 psi(s) f(s) ds.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        gauss_legendre(|s| self.psi(s) * f(s), self.s0, 1.0 - self.s0, 64)
    }

    /// The weight of the volumetric D-form at level variable u, for outer
    /// scale a: (1/2) psi(1/(2au) - 1) - psi(1/(au) - 1).
    pub fn volumetric_weight(&self, a: f64, u: f64) -> f64 {
        0.5 * self.psi(1.0 / (2.0 * a * u) - 1.0) - self.psi(1.0 / (a * u) - 1.0)
    }

    /// phi(t) = t^{-3} [ (1/2) psi(1/(2t) - 1) - psi(1/t - 1) ], the kernel
    /// of the volumetric D-form at a = 1.
    pub fn phi_kernel(&self, t: f64) -> f64 {
        self.volumetric_weight(1.0, t) / (t * t * t)
    }

    pub fn phi_kernel_prime(&self, t: f64) -> f64 {
        let t2 = t * t;
        let t3 = t2 * t;
        let bracket = 0.5 * self.psi(1.0 / (2.0 * t) - 1.0) - self.psi(1.0 / t - 1.0);
        let bracket_prime = 0.5 * self.psi_prime(1.0 / (2.0 * t) - 1.0) * (-1.0 / (2.0 * t2))
            - self.psi_prime(1.0 / t - 1.0) * (-1.0 / t2);
        -3.0 * bracket / (t2 * t2) + bracket_prime / t3
    }
}

// ---------------------------------------------------------------------------
// Surface data abstraction.
// ---------------------------------------------------------------------------

/// Level-set integrals consumed by the functionals; `t` parametrizes the
/// level {u = 1/t}. Norms and measures are those of g.
pub trait SurfaceData {
    fn int_h_gradu(&self, t: f64) -> Result<f64>;
    fn int_gradu_sq(&self, t: f64) -> Result<f64>;
    fn int_gradu_sq_over_u(&self, t: f64) -> Result<f64>;
    /// int w(u) |grad^g u|^3 / u^3 dv_g over {u_lo <= u <= u_hi}.
    fn weighted_volume(&self, u_lo: f64, u_hi: f64, w: &dyn Fn(f64) -> f64) -> Result<f64>;
}

impl SurfaceData for LevelIntegrator<'_> {
    fn int_h_gradu(&self, t: f64) -> Result<f64> {
        let f = self.fields;
        self.surface_integral(t, |c| f.mean_curvature[c] * f.s_g[c])
    }

    fn int_gradu_sq(&self, t: f64) -> Result<f64> {
        let f = self.fields;
        self.surface_integral(t, |c| f.s_g[c] * f.s_g[c])
    }

    fn int_gradu_sq_over_u(&self, t: f64) -> Result<f64> {
        let f = self.fields;
        self.surface_integral(t, |c| f.s_g[c] * f.s_g[c] / f.u[c])
    }

    fn weighted_volume(&self, u_lo: f64, u_hi: f64, w: &dyn Fn(f64) -> f64) -> Result<f64> {
        Ok(self.volumetric_weighted(u_lo, u_hi, w))
    }
}

impl SurfaceData for RadialOracle {
    fn int_h_gradu(&self, t: f64) -> Result<f64> {
        Ok(self.surface_h_gradu(t))
    }

    fn int_gradu_sq(&self, t: f64) -> Result<f64> {
        Ok(self.surface_gradu_sq(t))
    }

    fn int_gradu_sq_over_u(&self, t: f64) -> Result<f64> {
        Ok(self.surface_gradu_sq_over_u(t))
    }

    fn weighted_volume(&self, u_lo: f64, u_hi: f64, w: &dyn Fn(f64) -> f64) -> Result<f64> {
        Ok(self.volumetric_weighted(u_lo, u_hi, w))
    }
}

// ---------------------------------------------------------------------------
// F, E, D.
// ---------------------------------------------------------------------------

/// F(t) = 4 pi t - t^2 int H|grad u| da + t^3 int |grad u|^2 da.
pub fn f_of_t(sd: &impl SurfaceData, t: f64) -> Result<f64> {
    Ok(4.0 * PI * t - t * t * sd.int_h_gradu(t)? + t * t * t * sd.int_gradu_sq(t)?)
}

// 16-point Gauss-Legendre half-nodes/weights on (0, 1], mirrored in use.
const GL_X: [f64; 8] = [
    0.0950125098376374,
    0.2816035507792589,
    0.4580167776572274,
    0.6178762444026438,
    0.7554044083550030,
    0.8656312023878318,
    0.9445750230732326,
    0.9894009349916499,
];
const GL_W: [f64; 8] = [
    0.1894506104550685,
    0.1826034150449236,
    0.1691565193950025,
    0.1495959888165767,
    0.1246289712555339,
    0.0951585116824928,
    0.0622535239386479,
    0.0271524594117541,
];

/// Composite 16-point Gauss-Legendre with fallible integrand.
fn gl_fallible(
    mut f: impl FnMut(f64) -> Result<f64>,
    a: f64,
    b: f64,
    panels: usize,
) -> Result<f64> {
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        let half = 0.5 * h;
        for i in 0..8 {
            total += GL_W[i] * half * (f(mid + half * GL_X[i])? + f(mid - half * GL_X[i])?);
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EResult {
    pub flux_form: f64,
    pub quadrature: f64,
    pub discrepancy: f64,
}

/// E(a,s) = int_{a+s}^{2a+2s} F(t)/t^3 dt, computed both as that quadrature
/// and via the flux identity
/// 2 pi/(a+s) + int_{u=1/(2a+2s)} |grad u|^2/u da - int_{u=1/(a+s)} ... .
pub fn e_of(sd: &impl SurfaceData, a: f64, s: f64) -> Result<EResult> {
    if !(a > 0.0 && (0.0..=a).contains(&s)) {
        return Err(LabError::Validation(format!(
            "E(a,s) needs a > 0 and 0 <= s <= a, got a={a}, s={s}"
        )));
    }
    let big_a = a + s;
    let flux_form = 2.0 * PI / big_a + sd.int_gradu_sq_over_u(2.0 * big_a)?
        - sd.int_gradu_sq_over_u(big_a)?;
    let quadrature = gl_fallible(|t| Ok(f_of_t(sd, t)? / (t * t * t)), big_a, 2.0 * big_a, 4)?;
    Ok(EResult { flux_form, quadrature, discrepancy: (flux_form - quadrature).abs() })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DResult {
    /// Volumetric coarea form (the primary value).
    pub value: f64,
    /// Independent s-quadrature of psi(s/a) E(a,s).
    pub quadrature: f64,
    pub discrepancy: f64,
}

/// D(a) by the volumetric formula c_psi + int [weight](|grad u|^3/u^3) dv_g,
/// cross-checked against the direct s-quadrature of psi(s/a) E(a,s).
pub fn d_of(sd: &impl SurfaceData, a: f64, psi: &BumpProfile) -> Result<DResult> {
    let value = psi.c_psi
        + sd.weighted_volume(1.0 / (4.0 * a), 1.0 / a, &|u| psi.volumetric_weight(a, u))?;
    let quadrature = psi.c_psi
        + gl_fallible(
            |s| {
                let e = e_of(sd, a, s)?;
                Ok(psi.psi(s / a) * (e.flux_form - 2.0 * PI / (a + s)) / a)
            },
            psi.s0 * a,
            (1.0 - psi.s0) * a,
            8,
        )? * a;
    let discrepancy = (value - quadrature).abs();
    // The two routes share quadrature error budgets of a few h^2; a gross
    // mismatch signals a solver defect rather than noise.
    let tol = 0.02 * psi.c_psi + 0.05 * value.abs();
    if discrepancy > tol {
        return Err(LabError::InconsistentForms { volumetric: value, quadrature });
    }
    Ok(DResult { value, quadrature, discrepancy })
}

// ---------------------------------------------------------------------------
// Series over t and a, with monotonicity verdicts and the aD limit.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Verdict {
    Monotone,
    /// First offending pair (index, value at i, value at i+1).
    Violated { index: usize, lower: f64, upper: f64 },
    NotApplicable,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunctionalSeries {
    pub t_grid: Vec<f64>,
    pub f_values: Vec<f64>,
    pub f_monotone: Verdict,
    pub a_grid: Vec<f64>,
    pub d_values: Vec<f64>,
    pub ad_values: Vec<f64>,
    pub d_nonnegative: bool,
    pub ad_monotone: Verdict,
    /// Plateau estimate of lim a D(a): the value at the largest a.
    pub limit: f64,
    /// Max pairwise spread over the last three aD values.
    pub uncertainty: f64,
    pub tolerance: f64,
}

fn monotone_verdict(values: &[f64], tol: f64) -> Verdict {
    for (i, w) in values.windows(2).enumerate() {
        if w[1] < w[0] - tol {
            return Verdict::Violated { index: i, lower: w[0], upper: w[1] };
        }
    }
    Verdict::Monotone
}

/// Evaluate F on `t_grid` and D, aD on `a_grid`; `r_nonneg` tells whether the
/// model certifies R >= 0 (monotonicity verdicts are advisory otherwise).
pub fn functional_series(
    sd: &impl SurfaceData,
    t_grid: &[f64],
    a_grid: &[f64],
    psi: &BumpProfile,
    r_nonneg: bool,
) -> Result<FunctionalSeries> {
    if a_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::Validation("a_grid must be strictly increasing".into()));
    }
    let f_values: Vec<f64> = t_grid.iter().map(|&t| f_of_t(sd, t)).collect::<Result<_>>()?;
    let d_values: Vec<f64> =
        a_grid.iter().map(|&a| Ok(d_of(sd, a, psi)?.value)).collect::<Result<_>>()?;
    let ad_values: Vec<f64> = a_grid.iter().zip(&d_values).map(|(a, d)| a * d).collect();

    let scale = ad_values.iter().fold(psi.c_psi, |m, v| m.max(v.abs()));
    let tolerance = 1e-3 * scale;

    let f_tol = 1e-3
        * t_grid
            .iter()
            .zip(&f_values)
            .fold(1.0f64, |m, (t, f)| m.max(4.0 * PI * t).max(f.abs()));
    let (f_monotone, ad_monotone) = if r_nonneg {
        (monotone_verdict(&f_values, f_tol), monotone_verdict(&ad_values, tolerance))
    } else {
        (Verdict::NotApplicable, Verdict::NotApplicable)
    };
    let d_nonnegative = !r_nonneg || d_values.iter().all(|&d| d >= -tolerance);

    let tail = &ad_values[ad_values.len().saturating_sub(3)..];
    let limit = *ad_values.last().ok_or_else(|| {
        LabError::Validation("a_grid must be non-empty".into())
    })?;
    let mut uncertainty = 0.0f64;
    for i in 0..tail.len() {
        for j in i + 1..tail.len() {
            uncertainty = uncertainty.max((tail[i] - tail[j]).abs());
        }
    }

    Ok(FunctionalSeries {
        t_grid: t_grid.to_vec(),
        f_values,
        f_monotone,
        a_grid: a_grid.to_vec(),
        d_values,
        ad_values,
        d_nonnegative,
        ad_monotone,
        limit,
        uncertainty,
        tolerance,
    })
}

/// Ratio lim aD(a) / m measured from the Schwarzschild radial oracle with
/// the same a-grid and plateau procedure used for grid solutions, so the
/// finite-a bias cancels in comparisons.
pub fn calibration_from_oracle(psi: &BumpProfile, m: f64, a_grid: &[f64]) -> Result<f64> {
    let oracle = RadialOracle::new(crate::metric::MetricModel::schwarzschild(m)?)?;
    let series = functional_series(&oracle, &[], a_grid, psi, true)?;
    Ok(series.limit / m)
}

// ---------------------------------------------------------------------------
// Frechet linearization at (delta, rho = 1/|y|) on An = B(0,4) \ B(0,1).
// ---------------------------------------------------------------------------

/// Perturbation pair for the linearization: a symmetric 2-tensor field k and
/// a scalar field v with gradient, evaluated pointwise on the annulus.
pub struct LinearizationInput<'a> {
    pub k: &'a dyn Fn(Vec3) -> Sym3,
    pub v: &'a dyn Fn(Vec3) -> f64,
    pub grad_v: &'a dyn Fn(Vec3) -> Vec3,
}

/// Caps enforcing the boundedness hypotheses of the linearization.
#[derive(Debug, Clone, Copy)]
pub struct NormCaps {
    pub k_max: f64,
    pub v_max: f64,
    pub grad_v_max: f64,
}

impl Default for NormCaps {
    fn default() -> Self {
        NormCaps { k_max: 1e3, v_max: 1e6, grad_v_max: 1e6 }
    }
}

/// Product quadrature over the fixed annulus: Gauss-Legendre in r and mu,
/// trapezoid in phi (spectrally accurate for the periodic direction, and
/// exactly killing odd azimuthal harmonics).
fn annulus_quadrature(mut f: impl FnMut(Vec3) -> Result<f64>) -> Result<f64> {
    let n_phi = 32;
    let d_phi = 2.0 * PI / n_phi as f64;
    // Composite radial rule: the psi-kernel concentrates in two narrow bands,
    // so a single panel across [1, 4] is not enough.
    let r_panels = 8;
    let mut r_nodes = Vec::new();
    for p in 0..r_panels {
        let lo = 1.0 + 3.0 * p as f64 / r_panels as f64;
        let mid = lo + 1.5 / r_panels as f64;
        let half = 1.5 / r_panels as f64;
        for (x, w) in GL_X.iter().zip(&GL_W) {
            r_nodes.push((mid + half * x, half * w));
            r_nodes.push((mid - half * x, half * w));
        }
    }
    let mut mu_nodes = Vec::new();
    for p in 0..2 {
        let mid = -0.5 + p as f64;
        for (x, w) in GL_X.iter().zip(&GL_W) {
            mu_nodes.push((mid + 0.5 * x, 0.5 * w));
            mu_nodes.push((mid - 0.5 * x, 0.5 * w));
        }
    }
    let mut total = 0.0;
    for &(r, wr) in &r_nodes {
        for &(mu, wm) in &mu_nodes {
            let st = (1.0f64 - mu * mu).sqrt();
            for kk in 0..n_phi {
                let ph = (kk as f64 + 0.5) * d_phi;
                let y = Vec3::new(r * st * ph.cos(), r * st * ph.sin(), r * mu);
                total += wr * wm * d_phi * r * r * f(y)?;
            }
        }
    }
    Ok(total)
}

/// L(k, v), the Frechet derivative of the volumetric D-functional at
/// (delta, rho) in the direction (k, v).
pub fn frechet_term(input: &LinearizationInput, psi: &BumpProfile, caps: NormCaps) -> Result<f64> {
    annulus_quadrature(|y| {
        let r = y.norm();
        let rho = 1.0 / r;
        let grad_rho = y.scale(-1.0 / (r * r * r));
        let gn = 1.0 / (r * r);
        let k = (input.k)(y);
        let v = (input.v)(y);
        let gv = (input.grad_v)(y);
        if !v.is_finite() || v.abs() > caps.v_max {
            return Err(LabError::UnboundedInput(format!("|v| = {v:.3e} at {y:?}")));
        }
        if !gv.norm().is_finite() || gv.norm() > caps.grad_v_max {
            return Err(LabError::UnboundedInput(format!("|grad v| = {:.3e}", gv.norm())));
        }
        let k_norm = k.m.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        if !k_norm.is_finite() || k_norm > caps.k_max {
            return Err(LabError::UnboundedInput(format!("|k| = {k_norm:.3e}")));
        }
        let phi = psi.phi_kernel(rho);
        let phi_p = psi.phi_kernel_prime(rho);
        let term_v = phi_p * gn.powi(3) * v + 3.0 * phi * gn * grad_rho.dot(gv);
        let term_k =
            phi * (0.5 * k.trace() * gn.powi(3) - 1.5 * gn * k.quad(grad_rho));
        Ok(term_v + term_k)
    })
}

/// The nonlinear functional whose derivative `frechet_term` computes:
/// D(g, u) = int_An phi(u) <g^{-1} du, du>^{3/2} sqrt(det g) dy with
/// g = delta + k and u = rho + v. At (0, 0) this evaluates to -c_psi.
pub fn nonlinear_d(input: &LinearizationInput, psi: &BumpProfile, scale: f64) -> Result<f64> {
    annulus_quadrature(|y| {
        let r = y.norm();
        let rho = 1.0 / r;
        let grad_rho = y.scale(-1.0 / (r * r * r));
        let k = (input.k)(y);
        let mut g = Sym3::IDENTITY;
        for i in 0..6 {
            g.m[i] += scale * k.m[i];
        }
        if !g.is_positive_definite() {
            return Err(LabError::NonPositiveDefinite(format!("delta + k at {y:?}")));
        }
        let u = rho + scale * (input.v)(y);
        let du = grad_rho + (input.grad_v)(y).scale(scale);
        let ginv = g.inverse();
        let energy = ginv.quad(du);
        Ok(psi.phi_kernel(u) * energy.powf(1.5) * g.det().sqrt())
    })
}

/// Empirical constant of the cubic inequality
/// | |X+Y|^3 - |X|^3 - 3|X|<X,Y> | <= C (|X||Y|^2 + |Y|^3)
/// over `n` seeded random pairs with components in [-10, 10].
pub fn cubic_lemma_check(n: usize, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut max_ratio = 0.0f64;
    for _ in 0..n {
        let mut pick = || {
            Vec3::new(
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
            )
        };
        let x = pick();
        let y = pick();
        let yn = y.norm();
        if yn == 0.0 {
            continue;
        }
        let xn = x.norm();
        let lhs = ((x + y).norm().powi(3) - xn.powi(3) - 3.0 * xn * x.dot(y)).abs();
        let rhs = xn * yn * yn + yn.powi(3);
        max_ratio = max_ratio.max(lhs / rhs);
    }
    max_ratio
}
