//! Rescaled fields on the fixed annulus, expansion fitting, the Newtonian
//! potential of div X, annulus error decay and the harmonic remainder.
//!
//! All of these work in Euclidean coordinates: the rescaled Green's function
//! u_R(y) = R u(R y) is compared against c/|y| + <d, y>/(R |y|^3) on the
//! fixed annulus An = B(0,4) \ B(0,1), and the dipole bookkeeping
//! d = b + xbar is closed with the Newtonian potential
//! w(x) = (1/4pi) int <x - y, X(y)> / |x - y|^3 dy of X = B grad u.

use crate::error::{LabError, Result};
use crate::math::{solve_dense, Vec3};
use crate::solver::GreensSolution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Fixed spherical sampling lattice of the annulus 1 <= |y| <= 4 with exact
/// per-cell Euclidean volume weights. Identical across all R, so least
/// squares fits share one design matrix and residual curves are comparable.
#[derive(Debug, Clone)]
pub struct AnnulusLattice {
    pub n_r: usize,
    pub n_mu: usize,
    pub n_phi: usize,
    pub points: Vec<Vec3>,
    /// (r, mu, phi) of each point.
    pub sph: Vec<(f64, f64, f64)>,
    pub weights: Vec<f64>,
    pub volume: f64,
    d_r: f64,
    d_mu: f64,
    d_phi: f64,
}

impl AnnulusLattice {
    pub fn with_shape(n_r: usize, n_mu: usize, n_phi: usize) -> AnnulusLattice {
        let d_r = 3.0 / n_r as f64;
        let d_mu = 2.0 / n_mu as f64;
        let d_phi = 2.0 * PI / n_phi as f64;
        let mut points = Vec::with_capacity(n_r * n_mu * n_phi);
        let mut sph = Vec::with_capacity(n_r * n_mu * n_phi);
        let mut weights = Vec::with_capacity(n_r * n_mu * n_phi);
        let mut volume = 0.0;
        for ir in 0..n_r {
            let r_lo = 1.0 + ir as f64 * d_r;
            let r_hi = r_lo + d_r;
            let r = 0.5 * (r_lo + r_hi);
            let w_r = (r_hi.powi(3) - r_lo.powi(3)) / 3.0;
            for jm in 0..n_mu {
                let mu = -1.0 + (jm as f64 + 0.5) * d_mu;
                let st = (1.0 - mu * mu).sqrt();
                for kp in 0..n_phi {
                    let ph = (kp as f64 + 0.5) * d_phi;
                    points.push(Vec3::new(r * st * ph.cos(), r * st * ph.sin(), r * mu));
                    sph.push((r, mu, ph));
                    let w = w_r * d_mu * d_phi;
                    weights.push(w);
                    volume += w;
                }
            }
        }
        AnnulusLattice { n_r, n_mu, n_phi, points, sph, weights, volume, d_r, d_mu, d_phi }
    }

    /// The standard 24 x 12 x 24 lattice.
    pub fn standard() -> AnnulusLattice {
        AnnulusLattice::with_shape(24, 12, 24)
    }

    /// Volume average of |f|^q.
    pub fn mean_abs_pow(&self, f: &[f64], q: f64) -> f64 {
        let s: f64 = f
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| v.abs().powf(q) * w)
            .sum();
        s / self.volume
    }

    /// Euclidean gradient magnitude of a lattice field by centered finite
    /// differences (one-sided at radial and polar ends, periodic in phi).
    pub fn gradient_norm(&self, f: &[f64]) -> Vec<f64> {
        let (n_r, n_mu, n_phi) = (self.n_r, self.n_mu, self.n_phi);
        let at = |ir: usize, jm: usize, kp: usize| f[(ir * n_mu + jm) * n_phi + kp];
        let mut out = vec![0.0; f.len()];
        for ir in 0..n_r {
            for jm in 0..n_mu {
                for kp in 0..n_phi {
                    let idx = (ir * n_mu + jm) * n_phi + kp;
                    let (r, mu, _) = self.sph[idx];
                    let f_r = match ir {
                        0 => (at(1, jm, kp) - at(0, jm, kp)) / self.d_r,
                        i if i == n_r - 1 => (at(i, jm, kp) - at(i - 1, jm, kp)) / self.d_r,
                        i => (at(i + 1, jm, kp) - at(i - 1, jm, kp)) / (2.0 * self.d_r),
                    };
                    let f_mu = match jm {
                        0 => (at(ir, 1, kp) - at(ir, 0, kp)) / self.d_mu,
                        j if j == n_mu - 1 => (at(ir, j, kp) - at(ir, j - 1, kp)) / self.d_mu,
                        j => (at(ir, j + 1, kp) - at(ir, j - 1, kp)) / (2.0 * self.d_mu),
                    };
                    let f_ph = (at(ir, jm, (kp + 1) % n_phi)
                        - at(ir, jm, (kp + n_phi - 1) % n_phi))
                        / (2.0 * self.d_phi);
                    let st2 = 1.0 - mu * mu;
                    out[idx] = (f_r * f_r
                        + st2 * f_mu * f_mu / (r * r)
                        + f_ph * f_ph / (r * r * st2))
                        .sqrt();
                }
            }
        }
        out
    }
}

/// u_R(y) = R u(R y) sampled on the lattice.
pub fn rescale_to_annulus(
    sol: &GreensSolution,
    lattice: &AnnulusLattice,
    r_scale: f64,
) -> Result<Vec<f64>> {
    let spec = &sol.grid.spec;
    if 4.0 * r_scale > spec.r_max / 2.0 || r_scale < 8.0 * spec.r_min {
        return Err(LabError::OutOfRange(r_scale));
    }
    Ok(lattice
        .sph
        .iter()
        .map(|&(r, mu, ph)| r_scale * sol.interp_u(r_scale * r, mu, ph))
        .collect())
}

/// Weighted least squares of a lattice field against the expansion basis
/// {1/|y|, y_i/(R |y|^3)}. Returns (c, d) and the normal-matrix condition
/// estimate.
fn fit_basis(lattice: &AnnulusLattice, f: &[f64], r_scale: f64) -> Result<(f64, Vec3, f64)> {
    let n = lattice.points.len();
    let mut basis = vec![[0.0; 4]; n];
    for (i, y) in lattice.points.iter().enumerate() {
        let rn = y.norm();
        let r3 = rn * rn * rn;
        basis[i] = [
            1.0 / rn,
            y.x / (r_scale * r3),
            y.y / (r_scale * r3),
            y.z / (r_scale * r3),
        ];
    }
    let mut normal = vec![vec![0.0; 4]; 4];
    let mut rhs = vec![0.0; 4];
    for i in 0..n {
        let w = lattice.weights[i];
        for a in 0..4 {
            rhs[a] += w * basis[i][a] * f[i];
            for b in 0..4 {
                normal[a][b] += w * basis[i][a] * basis[i][b];
            }
        }
    }
    let condition = condition_estimate(&normal);
    if condition > 1e6 {
        return Err(LabError::IllConditionedFit(condition));
    }
    let x = solve_dense(normal, rhs);
    Ok((x[0], Vec3::new(x[1], x[2], x[3]), condition))
}

/// lambda_max / lambda_min of a small SPD matrix by power iteration and
/// inverse power iteration (deterministic start vector).
fn condition_estimate(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    let apply = |v: &[f64]| -> Vec<f64> {
        (0..n).map(|i| (0..n).map(|j| m[i][j] * v[j]).sum()).collect()
    };
    let normalize = |v: &mut Vec<f64>| {
        let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in v.iter_mut() {
            *x /= s;
        }
        s
    };
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 0.3).collect();
    let mut lam_max = 0.0;
    for _ in 0..60 {
        v = apply(&v);
        lam_max = normalize(&mut v);
    }
    let mut w: Vec<f64> = (0..n).map(|i| 1.0 - i as f64 * 0.2).collect();
    let mut inv_gain = 0.0;
    for _ in 0..60 {
        w = solve_dense(m.to_vec(), w);
        inv_gain = normalize(&mut w);
    }
    lam_max * inv_gain
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpansionFit {
    pub r_values: Vec<f64>,
    /// Expansion constant from the largest R.
    pub c: f64,
    /// Dipole estimate (approximates b + xbar) from the largest R.
    pub dipole: Vec3,
    pub condition: f64,
    pub per_r_c: Vec<f64>,
    pub per_r_dipole: Vec<Vec3>,
    /// Scale-invariant residual norms per R after removing the fitted pair.
    pub residual_l1: Vec<f64>,
    pub residual_l125: Vec<f64>,
    /// Discrete gradient-augmented norm with exponent p = 4.
    pub residual_w4: Vec<f64>,
}

/// Fit the expansion across >= 4 dyadic R values.
pub fn fit_expansion(
    sol: &GreensSolution,
    lattice: &AnnulusLattice,
    r_values: &[f64],
) -> Result<ExpansionFit> {
    if r_values.len() < 4 {
        return Err(LabError::Validation(format!(
            "expansion fit needs >= 4 dyadic R values, got {}",
            r_values.len()
        )));
    }
    let mut per_r_c = Vec::new();
    let mut per_r_dipole = Vec::new();
    let mut residual_l1 = Vec::new();
    let mut residual_l125 = Vec::new();
    let mut residual_w4 = Vec::new();
    let mut condition = 0.0f64;
    for &r_scale in r_values {
        let u_r = rescale_to_annulus(sol, lattice, r_scale)?;
        let (c, d, cond) = fit_basis(lattice, &u_r, r_scale)?;
        condition = condition.max(cond);
        let res: Vec<f64> = lattice
            .points
            .iter()
            .zip(&u_r)
            .map(|(y, v)| {
                let rn = y.norm();
                v - c / rn - d.dot(*y) / (r_scale * rn.powi(3))
            })
            .collect();
        residual_l1.push(lattice.mean_abs_pow(&res, 1.0));
        residual_l125.push(lattice.mean_abs_pow(&res, 1.25).powf(0.8));
        let grad = lattice.gradient_norm(&res);
        let p4 = lattice.mean_abs_pow(&res, 4.0) + lattice.mean_abs_pow(&grad, 4.0);
        residual_w4.push(p4.powf(0.25));
        per_r_c.push(c);
        per_r_dipole.push(d);
    }
    Ok(ExpansionFit {
        r_values: r_values.to_vec(),
        c: *per_r_c.last().unwrap(),
        dipole: *per_r_dipole.last().unwrap(),
        condition,
        per_r_c,
        per_r_dipole,
        residual_l1,
        residual_l125,
        residual_w4,
    })
}

// ---------------------------------------------------------------------------
// Newtonian potential of div X.
// ---------------------------------------------------------------------------

/// A discrete source: position, vector value of X, cell volume.
pub type Source = (Vec3, Vec3, f64);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PotentialField {
    pub targets: Vec<Vec3>,
    pub w: Vec<f64>,
    /// Pointwise domination bound (1/4pi) sum |X| / |x-y|^2 * vol.
    pub w_bound: Vec<f64>,
    /// xbar = (1/4pi) int X dx.
    pub xbar: Vec3,
    pub l1_x: f64,
}

/// Extract the discrete X = (1 - alpha) grad u field (zero inside r < 1/16)
/// as a source list.
pub fn x_field_sources(sol: &GreensSolution) -> Vec<Source> {
    let g = &sol.grid;
    let grad = crate::levelset::spherical_gradient(g, &sol.u, true);
    let n_ang = g.n_angular();
    let mut sources = Vec::new();
    for i in 0..g.n_r() {
        if g.r_centers[i] < 1.0 / 16.0 {
            continue;
        }
        let vol = g.shell_cell_volume[i];
        for ang in 0..n_ang {
            let c = i * n_ang + ang;
            let x_vec = grad[c].scale(1.0 - sol.alpha[c]);
            if x_vec.norm_sq() > 0.0 {
                let (j, k) = (ang / g.n_phi(), ang % g.n_phi());
                sources.push((g.cell_center(i, j, k), x_vec, vol));
            }
        }
    }
    sources
}

/// Direct-summation Newtonian potential of div X at the targets. The
/// self-cell (target inside a source cell) is skipped: the kernel averages
/// to zero over a symmetric cell to leading order.
pub fn potential_from_sources(sources: &[Source], targets: &[Vec3]) -> PotentialField {
    let mut xbar = Vec3::ZERO;
    let mut l1_x = 0.0;
    for (_, x_vec, vol) in sources {
        xbar += x_vec.scale(*vol);
        l1_x += x_vec.norm() * vol;
    }
    xbar = xbar.scale(1.0 / (4.0 * PI));

    let results: Vec<(f64, f64)> = targets
        .par_iter()
        .map(|&t| {
            let mut w = 0.0;
            let mut bound = 0.0;
            for (pos, x_vec, vol) in sources {
                let d = t - *pos;
                let dist2 = d.norm_sq();
                // Half the source-cell scale; inside it the kernel average
                // over the cell vanishes to leading order.
                let cutoff2 = 0.25 * vol.powf(2.0 / 3.0);
                if dist2 <= cutoff2 {
                    continue;
                }
                let dist = dist2.sqrt();
                w += d.dot(*x_vec) / (dist2 * dist) * vol;
                bound += x_vec.norm() / dist2 * vol;
            }
            (w / (4.0 * PI), bound / (4.0 * PI))
        })
        .collect();
    PotentialField {
        targets: targets.to_vec(),
        w: results.iter().map(|r| r.0).collect(),
        w_bound: results.iter().map(|r| r.1).collect(),
        xbar,
        l1_x,
    }
}

pub fn newtonian_potential(sol: &GreensSolution, targets: &[Vec3]) -> PotentialField {
    potential_from_sources(&x_field_sources(sol), targets)
}

// ---------------------------------------------------------------------------
// Annulus error decay.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnulusErrorReport {
    pub r_values: Vec<f64>,
    pub q: f64,
    /// avg over the sampling annulus of |R^2 (w - <x, xbar>/|x|^3)|^q per R.
    pub values: Vec<f64>,
    /// Decreasing trend with at most one inversion.
    pub trend_ok: bool,
}

/// L^q annulus error of the Newtonian potential against its far-field
/// dipole, on annuli R <= |x| <= 4R.
pub fn annulus_error(
    sol: &GreensSolution,
    lattice: &AnnulusLattice,
    r_values: &[f64],
    q: f64,
) -> Result<AnnulusErrorReport> {
    if !(1.0..1.5).contains(&q) {
        return Err(LabError::Validation(format!(
            "annulus error exponent must satisfy 1 <= q < 3/2, got {q}"
        )));
    }
    let sources = x_field_sources(sol);
    let mut values = Vec::new();
    for &r_scale in r_values {
        let targets: Vec<Vec3> =
            lattice.points.iter().map(|y| y.scale(r_scale)).collect();
        let pot = potential_from_sources(&sources, &targets);
        let xbar = pot.xbar;
        let err: Vec<f64> = pot
            .targets
            .iter()
            .zip(&pot.w)
            .map(|(x, w)| {
                let rn = x.norm();
                r_scale * r_scale * (w - xbar.dot(*x) / rn.powi(3))
            })
            .collect();
        values.push(lattice.mean_abs_pow(&err, q));
    }
    let inversions = values.windows(2).filter(|w| w[1] > w[0]).count();
    Ok(AnnulusErrorReport { r_values: r_values.to_vec(), q, values, trend_ok: inversions <= 1 })
}

// ---------------------------------------------------------------------------
// Harmonic remainder bookkeeping.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemainderReport {
    pub r_values: Vec<f64>,
    /// Expansion constant of h = u - w.
    pub c_h: f64,
    /// Dipole of h.
    pub b: Vec3,
    pub xbar: Vec3,
    /// Dipole of u itself (estimates b + xbar).
    pub dipole_d: Vec3,
    /// |d - (b + xbar)|.
    pub closure_defect: f64,
    /// Mean |h - c_h/|x|| per R (rescaled), decreasing for compliant models.
    pub mean_abs_after_c: Vec<f64>,
}

/// h = u - w on rescaled annuli: fits (c_h, b) and closes the dipole
/// bookkeeping d = b + xbar among three independently computed quantities.
pub fn harmonic_remainder(
    sol: &GreensSolution,
    lattice: &AnnulusLattice,
    r_values: &[f64],
) -> Result<RemainderReport> {
    let fit_u = fit_expansion(sol, lattice, r_values)?;
    let sources = x_field_sources(sol);
    let mut c_h = 0.0;
    let mut b = Vec3::ZERO;
    let mut xbar = Vec3::ZERO;
    let mut mean_abs_after_c = Vec::new();
    for &r_scale in r_values {
        let u_r = rescale_to_annulus(sol, lattice, r_scale)?;
        let targets: Vec<Vec3> =
            lattice.points.iter().map(|y| y.scale(r_scale)).collect();
        let pot = potential_from_sources(&sources, &targets);
        xbar = pot.xbar;
        let h_r: Vec<f64> =
            u_r.iter().zip(&pot.w).map(|(u, w)| u - r_scale * w).collect();
        let (c, d, _) = fit_basis(lattice, &h_r, r_scale)?;
        c_h = c;
        b = d;
        let after_c: Vec<f64> = lattice
            .points
            .iter()
            .zip(&h_r)
            .map(|(y, h)| h - c / y.norm())
            .collect();
        mean_abs_after_c.push(lattice.mean_abs_pow(&after_c, 1.0));
    }
    let dipole_d = fit_u.dipole;
    let closure_defect = (dipole_d - (b + xbar)).norm();
    Ok(RemainderReport {
        r_values: r_values.to_vec(),
        c_h,
        b,
        xbar,
        dipole_d,
        closure_defect,
        mean_abs_after_c,
    })
}
