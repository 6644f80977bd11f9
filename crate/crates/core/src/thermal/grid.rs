//! Explicit finite-difference heat conduction on a uniform 2D grid.
//!
//! Cells carry their own conductivity and volumetric heat capacity, so the
//! update is written in flux form: each cell exchanges
//! `k_ij (T_j - T_i)` watts per metre of depth with each of its four
//! neighbours, `k_ij` being the harmonic mean of the two conductivities.
//! The exchange is antisymmetric, which makes the scheme conserve
//! `Σ C_i T_i` exactly on an insulated domain.

use serde::{Deserialize, Serialize};

use crate::num::Float;

use super::SimError;

/// Temperatures above this magnitude mean the scheme has blown up.
pub const DIVERGENCE_LIMIT_C: f64 = 1.0e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Outermost ring of cells is held at the outdoor temperature.
    Dirichlet,
    /// No flux leaves the grid.
    Insulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Material<T> {
    /// W/(m·K).
    pub conductivity: T,
    /// J/(m³·K).
    pub heat_capacity: T,
}

impl<T: Float> Material<T> {
    pub fn diffusivity(&self) -> T {
        self.conductivity / self.heat_capacity
    }
}

/// Grid state plus the per-cell properties the kernel needs.
#[derive(Debug, Clone)]
pub struct Grid<T> {
    nx: usize,
    ny: usize,
    dx: T,
    temp: Vec<T>,
    conductivity: Vec<T>,
    heat_capacity: Vec<T>,
    /// Heat input per cell, W per metre of depth.
    source: Vec<T>,
    clamped: Vec<bool>,
    scratch: Vec<T>,
}

impl<T: Float> Grid<T> {
    /// A uniform grid of one material at `initial` with no sources.
    pub fn uniform(nx: usize, ny: usize, dx: T, material: Material<T>, initial: T) -> Self {
        let n = nx * ny;
        Self {
            nx,
            ny,
            dx,
            temp: vec![initial; n],
            conductivity: vec![material.conductivity; n],
            heat_capacity: vec![material.heat_capacity; n],
            source: vec![T::zero(); n],
            clamped: vec![false; n],
            scratch: vec![T::zero(); n],
        }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn dx(&self) -> T {
        self.dx
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        y * self.nx + x
    }

    pub fn temp(&self, x: usize, y: usize) -> T {
        self.temp[self.idx(x, y)]
    }

    pub fn temps(&self) -> &[T] {
        &self.temp
    }

    pub fn set_temp(&mut self, x: usize, y: usize, value: T) {
        let i = self.idx(x, y);
        self.temp[i] = value;
    }

    pub fn set_material(&mut self, x: usize, y: usize, material: Material<T>) {
        let i = self.idx(x, y);
        self.conductivity[i] = material.conductivity;
        self.heat_capacity[i] = material.heat_capacity;
    }

    pub fn material(&self, x: usize, y: usize) -> Material<T> {
        let i = self.idx(x, y);
        Material {
            conductivity: self.conductivity[i],
            heat_capacity: self.heat_capacity[i],
        }
    }

    /// Sets the heat input of a cell, in W per metre of depth.
    pub fn set_source(&mut self, x: usize, y: usize, watts: T) {
        let i = self.idx(x, y);
        self.source[i] = watts;
    }

    /// Holds a cell at a fixed temperature.
    pub fn clamp(&mut self, x: usize, y: usize, value: T) {
        let i = self.idx(x, y);
        self.clamped[i] = true;
        self.temp[i] = value;
    }

    /// Clamps the outermost ring to `value`.
    pub fn clamp_ring(&mut self, value: T) {
        for x in 0..self.nx {
            self.clamp(x, 0, value);
            self.clamp(x, self.ny - 1, value);
        }
        for y in 0..self.ny {
            self.clamp(0, y, value);
            self.clamp(self.nx - 1, y, value);
        }
    }

    pub fn is_clamped(&self, x: usize, y: usize) -> bool {
        self.clamped[self.idx(x, y)]
    }

    /// Stored heat relative to 0 °C, J per metre of depth.
    pub fn heat_content(&self) -> T {
        let area = self.dx * self.dx;
        self.temp
            .iter()
            .zip(&self.heat_capacity)
            .fold(T::zero(), |acc, (t, c)| acc + *t * *c * area)
    }

    #[inline]
    fn link(a: T, b: T) -> T {
        let sum = a + b;
        if sum == T::zero() {
            T::zero()
        } else {
            (a + a) * b / sum
        }
    }

    /// Largest stable time step for this grid: the explicit update stays a
    /// convex combination (and so obeys the maximum principle) iff
    /// `dt Σ_j k_ij ≤ C_i dx²` for every free cell.
    pub fn stable_dt(&self) -> T {
        let area = self.dx * self.dx;
        let mut best = T::infinity();
        for y in 0..self.ny {
            for x in 0..self.nx {
                let i = self.idx(x, y);
                if self.clamped[i] {
                    continue;
                }
                let total = self.neighbours(x, y).fold(T::zero(), |acc, j| {
                    acc + Self::link(self.conductivity[i], self.conductivity[j])
                });
                if total > T::zero() {
                    best = best.min(self.heat_capacity[i] * area / total);
                }
            }
        }
        best
    }

    fn neighbours(&self, x: usize, y: usize) -> impl Iterator<Item = usize> + '_ {
        let (nx, ny) = (self.nx, self.ny);
        [
            (x > 0).then(|| self.idx(x - 1, y)),
            (x + 1 < nx).then(|| self.idx(x + 1, y)),
            (y > 0).then(|| self.idx(x, y - 1)),
            (y + 1 < ny).then(|| self.idx(x, y + 1)),
        ]
        .into_iter()
        .flatten()
    }

    /// One forward-Euler step of length `dt`.
    pub fn step(&mut self, dt: T) -> Result<(), SimError> {
        let area = self.dx * self.dx;
        let (nx, ny) = (self.nx, self.ny);
        let limit = T::of(DIVERGENCE_LIMIT_C);
        for y in 0..ny {
            for x in 0..nx {
                let i = y * nx + x;
                if self.clamped[i] {
                    self.scratch[i] = self.temp[i];
                    continue;
                }
                let (ti, ki) = (self.temp[i], self.conductivity[i]);
                let mut flux = self.source[i];
                if x > 0 {
                    flux =
                        flux + Self::link(ki, self.conductivity[i - 1]) * (self.temp[i - 1] - ti);
                }
                if x + 1 < nx {
                    flux =
                        flux + Self::link(ki, self.conductivity[i + 1]) * (self.temp[i + 1] - ti);
                }
                if y > 0 {
                    flux =
                        flux + Self::link(ki, self.conductivity[i - nx]) * (self.temp[i - nx] - ti);
                }
                if y + 1 < ny {
                    flux =
                        flux + Self::link(ki, self.conductivity[i + nx]) * (self.temp[i + nx] - ti);
                }
                let next = ti + dt * flux / (self.heat_capacity[i] * area);
                if !next.is_finite() || next.abs() > limit {
                    return Err(SimError::Diverged {
                        x,
                        y,
                        value: next.as_f64(),
                    });
                }
                self.scratch[i] = next;
            }
        }
        std::mem::swap(&mut self.temp, &mut self.scratch);
        Ok(())
    }
}
