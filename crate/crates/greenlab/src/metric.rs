//! Analytic metric families on R^3.
//!
//! Every built-in family is conformally flat, g = phi^4 * delta, which keeps
//! exact sign control over the scalar curvature (R = -8 phi^-5 Lap phi) and
//! makes the conductivity field A = sqrt(|g|) g^{-1} = phi^2 * I isotropic.
//! The divergence-form operator assembled by the solver only ever sees
//! scalar conductivities because of this.

use crate::error::{LabError, Result};
use crate::math::{Sym3, Vec3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ModelKind {
    /// Flat metric, A = I, B = 0.
    Euclidean,
    /// Schwarzschild in isotropic coordinates: phi = 1 + m/(2r).
    /// Decays only like 1/r, so it deliberately violates the tau > 0
    /// hypothesis; it is the canonical massive oracle.
    ConformalRadial { m: f64 },
    /// Softened point mass: phi = 1 + amplitude / sqrt(|x - center|^2 + width^2).
    /// Superharmonic phi, so the scalar curvature is non-negative everywhere.
    ConformalBump { center: Vec3, amplitude: f64, width: f64 },
    /// phi^4 = 1 + q with q = eps/(1+|beta|) * [w1 + beta*z*w2],
    /// w1 = (1+r^2)^{-(1+tau)/2}, w2 = (1+r^2)^{-(2+tau)/2}.
    /// Then |g - delta| = |q| <= eps * r^{-1-tau} exactly. Scalar curvature
    /// is indefinite; this family exists to exercise the decay hypothesis.
    DecayPerturbation { epsilon: f64, tau: f64, angular: f64 },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetricModel {
    pub kind: ModelKind,
    /// Decay exponent tau in |g - g_euc| = O(|x|^{-1-tau}); infinity when the
    /// metric is exactly Euclidean.
    pub tau: f64,
    /// Analytic ADM mass when known.
    pub adm_mass_hint: Option<f64>,
    /// Ellipticity bound: eigenvalues of A lie in [1/lambda, lambda] on the
    /// working region |x| >= 1/32.
    pub lambda: f64,
}

/// Sample of the conductivity field at a point.
#[derive(Debug, Clone, Copy)]
pub struct ConductivitySample {
    pub a: Sym3,
    pub b: Sym3,
}

/// First and second derivative data of the conformal factor at a point.
#[derive(Debug, Clone, Copy)]
pub struct ConformalData {
    pub phi: f64,
    pub grad_phi: Vec3,
    pub lap_phi: f64,
}

const INNER_WORKING_RADIUS: f64 = 1.0 / 32.0;

impl MetricModel {
    pub fn new(kind: ModelKind) -> Result<MetricModel> {
        let (tau, adm_mass_hint, lambda) = match kind {
            ModelKind::Euclidean => (f64::INFINITY, Some(0.0), 1.0),
            ModelKind::ConformalRadial { m } => {
                if m < 0.0 {
                    return Err(LabError::NonPositiveDefinite(format!(
                        "ConformalRadial requires m >= 0, got {m}"
                    )));
                }
                let phi_max = 1.0 + m / (2.0 * INNER_WORKING_RADIUS);
                (0.0, Some(m), phi_max * phi_max)
            }
            ModelKind::ConformalBump { amplitude, width, .. } => {
                if amplitude < 0.0 || width <= 0.0 {
                    return Err(LabError::NonPositiveDefinite(format!(
                        "ConformalBump requires amplitude >= 0 and width > 0, got {amplitude}, {width}"
                    )));
                }
                let phi_max = 1.0 + amplitude / width;
                (0.0, Some(2.0 * amplitude), phi_max * phi_max)
            }
            ModelKind::DecayPerturbation { epsilon, tau, angular } => {
                if epsilon.abs() >= 0.9 {
                    return Err(LabError::NonPositiveDefinite(format!(
                        "DecayPerturbation amplitude {epsilon} degenerates the metric"
                    )));
                }
                if tau <= 0.0 {
                    return Err(LabError::Validation(format!(
                        "DecayPerturbation requires tau > 0, got {tau}"
                    )));
                }
                if angular.abs() >= 1.0 {
                    return Err(LabError::Validation(format!(
                        "angular pattern strength must satisfy |beta| < 1, got {angular}"
                    )));
                }
                let hi = (1.0 + epsilon.abs()).sqrt();
                let lo = 1.0 / (1.0 - epsilon.abs()).sqrt();
                (tau, Some(0.0), hi.max(lo))
            }
        };
        Ok(MetricModel { kind, tau, adm_mass_hint, lambda })
    }

    pub fn euclidean() -> MetricModel {
        MetricModel::new(ModelKind::Euclidean).unwrap()
    }

    pub fn schwarzschild(m: f64) -> Result<MetricModel> {
        MetricModel::new(ModelKind::ConformalRadial { m })
    }

    /// True when the conformal factor depends on |x| only (so the 1D radial
    /// oracle applies).
    pub fn is_radial(&self) -> bool {
        match self.kind {
            ModelKind::Euclidean | ModelKind::ConformalRadial { .. } => true,
            ModelKind::ConformalBump { center, .. } => center.norm() == 0.0,
            ModelKind::DecayPerturbation { angular, .. } => angular == 0.0,
        }
    }

    /// True when -Lap(phi) >= 0 everywhere, which forces R_g >= 0.
    pub fn nonnegative_scalar_curvature(&self) -> bool {
        !matches!(self.kind, ModelKind::DecayPerturbation { .. })
    }

    /// Conformal factor phi with its gradient and Laplacian.
    pub fn conformal_data(&self, p: Vec3) -> ConformalData {
        match self.kind {
            ModelKind::Euclidean => ConformalData { phi: 1.0, grad_phi: Vec3::ZERO, lap_phi: 0.0 },
            ModelKind::ConformalRadial { m } => {
                let r = p.norm();
                assert!(r > 0.0, "ConformalRadial metric is singular at the origin");
                let phi = 1.0 + m / (2.0 * r);
                // grad(1/r) = -x/r^3, and 1/r is harmonic away from 0.
                let grad_phi = p.scale(-m / (2.0 * r * r * r));
                ConformalData { phi, grad_phi, lap_phi: 0.0 }
            }
            ModelKind::ConformalBump { center, amplitude, width } => {
                let d = p - center;
                let s2 = d.norm_sq() + width * width;
                let s = s2.sqrt();
                let phi = 1.0 + amplitude / s;
                let grad_phi = d.scale(-amplitude / (s2 * s));
                let lap_phi = -3.0 * amplitude * width * width / (s2 * s2 * s);
                ConformalData { phi, grad_phi, lap_phi }
            }
            ModelKind::DecayPerturbation { epsilon, tau, angular } => {
                let eps_hat = epsilon / (1.0 + angular.abs());
                let rho = p.norm_sq();
                // w1 = (1+rho)^{-p1}, w2 = (1+rho)^{-p2} as functions of rho = r^2.
                let p1 = (1.0 + tau) / 2.0;
                let p2 = (2.0 + tau) / 2.0;
                let base = 1.0 + rho;
                let w1 = base.powf(-p1);
                let w1p = -p1 * base.powf(-p1 - 1.0);
                let w1pp = p1 * (p1 + 1.0) * base.powf(-p1 - 2.0);
                let w2 = base.powf(-p2);
                let w2p = -p2 * base.powf(-p2 - 1.0);
                let w2pp = p2 * (p2 + 1.0) * base.powf(-p2 - 2.0);

                let q = eps_hat * (w1 + angular * p.z * w2);
                // grad in terms of rho: grad f(rho) = f'(rho) * 2x.
                let grad_q = p.scale(2.0 * eps_hat * (w1p + angular * p.z * w2p))
                    + Vec3::new(0.0, 0.0, eps_hat * angular * w2);
                let lap_w1 = 6.0 * w1p + 4.0 * rho * w1pp;
                let lap_zw2 = p.z * (10.0 * w2p + 4.0 * rho * w2pp);
                let lap_q = eps_hat * (lap_w1 + angular * lap_zw2);

                // phi = (1+q)^{1/4}
                let u = 1.0 + q;
                let phi = u.powf(0.25);
                let grad_phi = grad_q.scale(0.25 * u.powf(-0.75));
                let lap_phi =
                    0.25 * u.powf(-0.75) * lap_q - (3.0 / 16.0) * u.powf(-1.75) * grad_q.norm_sq();
                ConformalData { phi, grad_phi, lap_phi }
            }
        }
    }

    /// The metric tensor g = phi^4 * delta at `p`.
    pub fn eval_metric(&self, p: Vec3) -> Sym3 {
        let phi = self.conformal_data(p).phi;
        Sym3::scalar(phi.powi(4))
    }

    /// Scalar conductivity alpha with A = alpha * I (a_ij = g^{ij} sqrt|g|).
    pub fn conductivity_scalar(&self, p: Vec3) -> f64 {
        let phi = self.conformal_data(p).phi;
        phi * phi
    }

    /// Conductivity field sample: A = g^{-1} sqrt|g| and B = I - A.
    pub fn conductivity(&self, p: Vec3) -> ConductivitySample {
        let alpha = self.conductivity_scalar(p);
        let a = Sym3::scalar(alpha);
        let b = Sym3::scalar(1.0 - alpha);
        ConductivitySample { a, b }
    }

    /// Scalar curvature R_g = -8 phi^{-5} Lap(phi).
    pub fn scalar_curvature(&self, p: Vec3) -> f64 {
        let d = self.conformal_data(p);
        -8.0 * d.phi.powi(-5) * d.lap_phi
    }

    /// Per-radius sup over a fixed 26-direction stencil of
    /// |g - delta| * r^{1+tau_probe}. `tau_probe` defaults to the model tau.
    pub fn decay_report(&self, radii: &[f64], tau_probe: Option<f64>) -> Vec<f64> {
        let tau = tau_probe.unwrap_or(self.tau);
        let dirs = cube_directions();
        radii
            .iter()
            .map(|&r| {
                let mut sup: f64 = 0.0;
                for d in &dirs {
                    let g = self.eval_metric(d.scale(r));
                    // |g - delta| for a conformal metric is |phi^4 - 1|.
                    let dev = (g.m[0] - 1.0).abs();
                    sup = sup.max(dev);
                }
                if tau.is_infinite() {
                    if sup == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    sup * r.powf(1.0 + tau)
                }
            })
            .collect()
    }
}

/// Faces, edges and corners of the unit cube, normalized: 26 directions.
pub fn cube_directions() -> Vec<Vec3> {
    let mut dirs = Vec::with_capacity(26);
    for i in -1i32..=1 {
        for j in -1i32..=1 {
            for k in -1i32..=1 {
                if i == 0 && j == 0 && k == 0 {
                    continue;
                }
                dirs.push(Vec3::new(i as f64, j as f64, k as f64).normalized());
            }
        }
    }
    dirs
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn sample_models() -> Vec<MetricModel> {
        vec![
            MetricModel::euclidean(),
            MetricModel::schwarzschild(1.0).unwrap(),
            MetricModel::new(ModelKind::ConformalBump {
                center: Vec3::new(0.5, 0.0, 0.0),
                amplitude: 0.25,
                width: 1.0,
            })
            .unwrap(),
            MetricModel::new(ModelKind::DecayPerturbation {
                epsilon: 0.3,
                tau: 0.5,
                angular: 0.4,
            })
            .unwrap(),
        ]
    }

    #[test]
    fn euclidean_metric_is_identity() {
        let m = MetricModel::euclidean();
        let g = m.eval_metric(Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(g, Sym3::IDENTITY);
        let c = m.conductivity(Vec3::new(-4.0, 0.1, 2.0));
        assert_eq!(c.a, Sym3::IDENTITY);
        assert_eq!(c.b, Sym3::ZERO);
    }

    #[test]
    fn schwarzschild_metric_at_r2() {
        // phi = 1 + 1/(2*2) = 1.25, phi^4 = 2.44140625 computed independently.
        let m = MetricModel::schwarzschild(1.0).unwrap();
        let g = m.eval_metric(Vec3::new(2.0, 0.0, 0.0));
        assert_relative_eq!(g.m[0], 2.44140625, max_relative = 1e-14);
        assert_relative_eq!(g.m[3], 2.44140625, max_relative = 1e-14);
        assert_eq!(g.m[1], 0.0);
        // A = phi^2 I = 1.5625 I (sqrt|g| = phi^6, g^{-1} = phi^{-4} delta).
        let a = m.conductivity(Vec3::new(0.0, 2.0, 0.0)).a;
        assert_relative_eq!(a.m[0], 1.5625, max_relative = 1e-14);
    }

    #[test]
    fn schwarzschild_curvature_vanishes() {
        // phi = 1 + m/2r is harmonic, so R = 0.
        let m = MetricModel::schwarzschild(1.0).unwrap();
        for r in [0.5, 1.0, 3.0, 17.0] {
            assert!(m.scalar_curvature(Vec3::new(r, 0.0, 0.0)).abs() < 1e-14);
        }
    }

    /// Finite-difference Laplacian oracle for the conformal curvature
    /// identity R = -8 phi^{-5} Lap(phi).
    fn fd_scalar_curvature(m: &MetricModel, p: Vec3, h: f64) -> f64 {
        let phi = |q: Vec3| m.conformal_data(q).phi;
        let mut lap = 0.0;
        for e in [Vec3::new(h, 0.0, 0.0), Vec3::new(0.0, h, 0.0), Vec3::new(0.0, 0.0, h)] {
            lap += phi(p + e) - 2.0 * phi(p) + phi(p - e);
        }
        lap /= h * h;
        -8.0 * phi(p).powi(-5) * lap
    }

    #[test]
    fn bump_curvature_matches_fd_laplacian() {
        let m = MetricModel::new(ModelKind::ConformalBump {
            center: Vec3::new(0.3, -0.2, 0.1),
            amplitude: 0.4,
            width: 1.2,
        })
        .unwrap();
        let p = Vec3::new(0.3, -0.2, 0.1);
        let h = 1e-3;
        let exact = m.scalar_curvature(p);
        assert!(exact > 0.0, "bump center has positive curvature");
        let fd = fd_scalar_curvature(&m, p, h);
        assert_relative_eq!(exact, fd, max_relative = 1e-6);
    }

    #[test]
    fn decay_perturbation_curvature_matches_fd() {
        let m = MetricModel::new(ModelKind::DecayPerturbation {
            epsilon: 0.3,
            tau: 0.5,
            angular: 0.4,
        })
        .unwrap();
        for p in [Vec3::new(1.0, 0.5, -0.3), Vec3::new(3.0, -1.0, 2.0)] {
            let h = 2e-3;
            let exact = m.scalar_curvature(p);
            let fd = fd_scalar_curvature(&m, p, h);
            // 10 h^2 relative budget from the stencil.
            assert_relative_eq!(exact, fd, max_relative = 10.0 * h * h + 1e-9);
        }
    }

    #[test]
    fn decay_report_euclidean_zero() {
        let m = MetricModel::euclidean();
        let rep = m.decay_report(&[1.0, 4.0, 16.0], None);
        assert!(rep.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decay_report_schwarzschild_tau0_probe() {
        // (1 + m/2r)^4 - 1 = 2m/r + O(r^-2): values approach 2m under a
        // tau = 0 probe (independent series arithmetic).
        let m = MetricModel::schwarzschild(1.0).unwrap();
        let radii = [16.0, 64.0, 256.0, 1024.0];
        let rep = m.decay_report(&radii, Some(0.0));
        assert_relative_eq!(*rep.last().unwrap(), 2.0, max_relative = 2e-3);
        // Monotone approach from above: (1+x)^4 - 1 > 4x.
        for w in rep.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn decay_report_perturbation_bounded_by_eps() {
        let eps = 0.3;
        let m = MetricModel::new(ModelKind::DecayPerturbation {
            epsilon: eps,
            tau: 0.5,
            angular: 0.4,
        })
        .unwrap();
        let rep = m.decay_report(&[0.5, 1.0, 4.0, 32.0, 128.0], None);
        assert!(rep.iter().all(|&v| v <= eps + 1e-12), "{rep:?}");
    }

    #[test]
    fn degenerate_amplitude_rejected() {
        assert!(MetricModel::new(ModelKind::DecayPerturbation {
            epsilon: 0.95,
            tau: 0.5,
            angular: 0.0,
        })
        .is_err());
        assert!(MetricModel::schwarzschild(-1.0).is_err());
    }

    proptest! {
        #[test]
        fn metric_spd_and_ellipticity(
            ix in -40.0f64..40.0, iy in -40.0f64..40.0, iz in -40.0f64..40.0,
            model_idx in 0usize..4,
        ) {
            let p = Vec3::new(ix, iy, iz);
            prop_assume!(p.norm() >= 1.0 / 32.0);
            let model = sample_models()[model_idx];
            let g = model.eval_metric(p);
            prop_assert!(g.is_positive_definite());
            let c = model.conductivity(p);
            // A + B = I exactly.
            let sum = c.a.add(&c.b);
            prop_assert_eq!(sum, Sym3::IDENTITY);
            // Ellipticity within the model-reported bound.
            let ev = c.a.eigenvalues();
            prop_assert!(ev[0] >= 1.0 / model.lambda - 1e-12);
            prop_assert!(ev[2] <= model.lambda + 1e-12);
            // Euclidean input acts as identity on any vector.
            if matches!(model.kind, ModelKind::Euclidean) {
                let v = Vec3::new(ix + 1.0, iy - 2.0, iz * 0.5);
                prop_assert_eq!(c.a.apply(v), v);
            }
        }
    }
}
