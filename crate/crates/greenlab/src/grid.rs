//! Log-radial spherical finite-volume grid.
//!
//! Cells are centered in (log r, mu, phi) with mu = cos(theta). The mu
//! discretization is uniform on [-1, 1], so the degenerate cone faces at the
//! poles carry zero transmissibility and need no special casing. Radial cell
//! centers are geometric means of the edges; on a uniform log grid this makes
//! the standard two-point flux of 1/r exactly constant across shells, so the
//! Euclidean Green's function is reproduced to machine precision.

use crate::error::{LabError, Result};
use crate::math::Vec3;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub r_min: f64,
    pub r_max: f64,
    pub n_r: usize,
    pub n_theta: usize,
    pub n_phi: usize,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_min > 0.0 && self.r_max > self.r_min) {
            return Err(LabError::InvalidSpec(format!(
                "radii must satisfy 0 < r_min < r_max, got [{}, {}]",
                self.r_min, self.r_max
            )));
        }
        if self.r_min >= 1.0 / 16.0 {
            return Err(LabError::InvalidSpec(format!(
                "r_min must lie inside the pole-excision ball B(0, 1/16), got {}",
                self.r_min
            )));
        }
        if self.r_max / self.r_min < 1024.0 {
            return Err(LabError::InvalidSpec(format!(
                "r_max/r_min must be >= 2^10 for the asymptotic fits, got {}",
                self.r_max / self.r_min
            )));
        }
        if self.n_r < 8 || self.n_theta < 2 || self.n_phi < 4 {
            return Err(LabError::InvalidSpec(format!(
                "cell counts too small: n_r={}, n_theta={}, n_phi={}",
                self.n_r, self.n_theta, self.n_phi
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Grid {
    pub spec: GridSpec,
    /// Radial edges, length n_r + 1, log-spaced.
    pub r_edges: Vec<f64>,
    /// Radial cell centers (geometric mean of edges), length n_r.
    pub r_centers: Vec<f64>,
    /// mu = cos(theta) edges, length n_theta + 1, uniform on [-1, 1].
    pub mu_edges: Vec<f64>,
    pub mu_centers: Vec<f64>,
    /// phi cell centers, uniform on [0, 2pi).
    pub phi_centers: Vec<f64>,
    pub d_mu: f64,
    pub d_phi: f64,
    /// Uniform spacing in s = ln r.
    pub h_s: f64,
    /// Coordinate cell volume per radial shell (same for all angles).
    pub shell_cell_volume: Vec<f64>,
}

impl Grid {
    pub fn build(spec: GridSpec) -> Result<Grid> {
        spec.validate()?;
        let n_r = spec.n_r;
        let h_s = (spec.r_max / spec.r_min).ln() / n_r as f64;
        let r_edges: Vec<f64> =
            (0..=n_r).map(|i| spec.r_min * (h_s * i as f64).exp()).collect();
        let r_centers: Vec<f64> =
            (0..n_r).map(|i| (r_edges[i] * r_edges[i + 1]).sqrt()).collect();

        let n_mu = spec.n_theta;
        let d_mu = 2.0 / n_mu as f64;
        let mu_edges: Vec<f64> = (0..=n_mu).map(|j| -1.0 + d_mu * j as f64).collect();
        let mu_centers: Vec<f64> =
            (0..n_mu).map(|j| 0.5 * (mu_edges[j] + mu_edges[j + 1])).collect();

        let d_phi = 2.0 * std::f64::consts::PI / spec.n_phi as f64;
        let phi_centers: Vec<f64> =
            (0..spec.n_phi).map(|k| (k as f64 + 0.5) * d_phi).collect();

        let shell_cell_volume: Vec<f64> = (0..n_r)
            .map(|i| (r_edges[i + 1].powi(3) - r_edges[i].powi(3)) / 3.0 * d_mu * d_phi)
            .collect();

        Ok(Grid {
            spec,
            r_edges,
            r_centers,
            mu_edges,
            mu_centers,
            phi_centers,
            d_mu,
            d_phi,
            h_s,
            shell_cell_volume,
        })
    }

    pub fn n_r(&self) -> usize {
        self.spec.n_r
    }

    pub fn n_mu(&self) -> usize {
        self.spec.n_theta
    }

    pub fn n_phi(&self) -> usize {
        self.spec.n_phi
    }

    pub fn n_cells(&self) -> usize {
        self.n_r() * self.n_mu() * self.n_phi()
    }

    pub fn n_angular(&self) -> usize {
        self.n_mu() * self.n_phi()
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n_mu() + j) * self.n_phi() + k
    }

    #[inline]
    pub fn decompose(&self, idx: usize) -> (usize, usize, usize) {
        let k = idx % self.n_phi();
        let rest = idx / self.n_phi();
        (rest / self.n_mu(), rest % self.n_mu(), k)
    }

    /// Cartesian position of a cell center.
    pub fn cell_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let r = self.r_centers[i];
        let mu = self.mu_centers[j];
        let st = (1.0 - mu * mu).sqrt();
        let phi = self.phi_centers[k];
        Vec3::new(r * st * phi.cos(), r * st * phi.sin(), r * mu)
    }

    /// Orthonormal spherical frame (e_r, e_theta, e_phi) at angular index (j, k).
    pub fn frame(&self, j: usize, k: usize) -> [Vec3; 3] {
        let mu = self.mu_centers[j];
        let st = (1.0 - mu * mu).sqrt();
        let (sp, cp) = self.phi_centers[k].sin_cos();
        [
            Vec3::new(st * cp, st * sp, mu),
            Vec3::new(mu * cp, mu * sp, -st),
            Vec3::new(-sp, cp, 0.0),
        ]
    }

    /// Coordinate volume of the spherical shell between edges i_lo and i_hi.
    pub fn shell_volume(&self, i_lo: usize, i_hi: usize) -> f64 {
        (4.0 * std::f64::consts::PI / 3.0)
            * (self.r_edges[i_hi].powi(3) - self.r_edges[i_lo].powi(3))
    }

    /// Radial cell extent (edge to edge) of shell i.
    pub fn dr(&self, i: usize) -> f64 {
        self.r_edges[i + 1] - self.r_edges[i]
    }

    /// Range of shell indices whose centers lie in [r_lo, r_hi].
    pub fn shell_range(&self, r_lo: f64, r_hi: f64) -> std::ops::Range<usize> {
        let lo = self.r_centers.partition_point(|&r| r < r_lo);
        let hi = self.r_centers.partition_point(|&r| r <= r_hi);
        lo..hi
    }
}
