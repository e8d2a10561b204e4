//! Uniform finite-volume grids in one or two dimensions.
//!
//! Two domain shapes: the flat torus of unit measure (periodic, cell width
//! `1/n` per axis) and the centered box `[-l, l]^d` with no-flux walls.
//! Fields are flat `Vec<f64>` in row-major order (`idx = iy * nx + ix`);
//! all quadratures are midpoint sums, so `integrate(1) == measure`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain {
    Torus,
    /// `[-half_width, half_width]^dim`.
    Box { half_width: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub domain: Domain,
    pub dim: usize,
    /// Cells per axis; `n[1] == 1` in one dimension.
    pub n: [usize; 2],
    /// Cell width per axis.
    pub h: [f64; 2],
    pub cell_volume: f64,
}

impl Grid {
    pub fn torus(dim: usize, cells_per_axis: usize) -> Result<Self> {
        Self::new(Domain::Torus, dim, cells_per_axis)
    }

    pub fn boxed(dim: usize, cells_per_axis: usize, half_width: f64) -> Result<Self> {
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::argument("box half-width must be positive and finite"));
        }
        Self::new(Domain::Box { half_width }, dim, cells_per_axis)
    }

    fn new(domain: Domain, dim: usize, cells_per_axis: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::argument(format!("grid dimension must be 1 or 2, got {dim}")));
        }
        if cells_per_axis < 8 {
            return Err(Error::argument(format!(
                "need at least 8 cells per axis, got {cells_per_axis}"
            )));
        }
        let axis_len = match domain {
            Domain::Torus => 1.0,
            Domain::Box { half_width } => 2.0 * half_width,
        };
        let h = axis_len / cells_per_axis as f64;
        let n = [cells_per_axis, if dim == 2 { cells_per_axis } else { 1 }];
        let cell_volume = if dim == 2 { h * h } else { h };
        Ok(Grid { domain, dim, n, h: [h, h], cell_volume })
    }

    pub fn cells(&self) -> usize {
        self.n[0] * self.n[1]
    }

    pub fn measure(&self) -> f64 {
        self.cells() as f64 * self.cell_volume
    }

    pub fn is_torus(&self) -> bool {
        matches!(self.domain, Domain::Torus)
    }

    #[inline]
    pub fn idx(&self, ix: usize, iy: usize) -> usize {
        iy * self.n[0] + ix
    }

    /// Cell-center coordinate along `axis` for per-axis index `i`.
    pub fn axis_coord(&self, axis: usize, i: usize) -> f64 {
        let offset = match self.domain {
            Domain::Torus => 0.0,
            Domain::Box { half_width } => -half_width,
        };
        offset + (i as f64 + 0.5) * self.h[axis]
    }

    /// Cell-center position of flat index `i` (second entry 0 in 1D).
    pub fn position(&self, i: usize) -> [f64; 2] {
        let ix = i % self.n[0];
        let iy = i / self.n[0];
        [
            self.axis_coord(0, ix),
            if self.dim == 2 { self.axis_coord(1, iy) } else { 0.0 },
        ]
    }

    /// Midpoint quadrature of a cell field.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.cells());
        f.iter().sum::<f64>() * self.cell_volume
    }

    pub fn l1_norm(&self, f: &[f64]) -> f64 {
        f.iter().map(|v| v.abs()).sum::<f64>() * self.cell_volume
    }

    /// Visit every interior face as `(left_cell, right_cell, axis)`.
    /// Torus axes wrap; box axes stop at the walls.
    pub fn for_each_face(&self, mut visit: impl FnMut(usize, usize, usize)) {
        let (nx, ny) = (self.n[0], self.n[1]);
        let wrap = self.is_torus();
        for iy in 0..ny {
            let last = if wrap { nx } else { nx - 1 };
            for ix in 0..last {
                visit(self.idx(ix, iy), self.idx((ix + 1) % nx, iy), 0);
            }
        }
        if self.dim == 2 {
            let last = if wrap { ny } else { ny - 1 };
            for iy in 0..last {
                for ix in 0..nx {
                    visit(self.idx(ix, iy), self.idx(ix, (iy + 1) % ny), 1);
                }
            }
        }
    }

    /// `∫ |∇f|^2 w dx` with the two-point face gradient and arithmetic face
    /// averaging of the weight. `w = None` means unit weight.
    pub fn dirichlet_form(&self, f: &[f64], w: Option<&[f64]>) -> f64 {
        let mut acc = 0.0;
        self.for_each_face(|i, j, axis| {
            let g = (f[j] - f[i]) / self.h[axis];
            let wf = match w {
                Some(w) => 0.5 * (w[i] + w[j]),
                None => 1.0,
            };
            acc += g * g * wf;
        });
        acc * self.cell_volume
    }

    pub fn assert_field(&self, f: &[f64], name: &str) -> Result<()> {
        if f.len() != self.cells() {
            return Err(Error::argument(format!(
                "field {name} has {} entries, grid has {} cells",
                f.len(),
                self.cells()
            )));
        }
        if let Some(v) = f.iter().find(|v| !v.is_finite()) {
            return Err(Error::domain(format!("field {name} contains non-finite value {v}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn torus_measure_is_one() {
        for n in [8, 100, 256] {
            let g = Grid::torus(1, n).unwrap();
            assert_abs_diff_eq!(g.measure(), 1.0, epsilon = 1e-15);
            let g2 = Grid::torus(2, n).unwrap();
            assert_abs_diff_eq!(g2.measure(), 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn box_coords_are_centered() {
        let g = Grid::boxed(1, 12, 6.0).unwrap();
        assert_abs_diff_eq!(g.axis_coord(0, 0), -5.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g.axis_coord(0, 11), 5.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g.measure(), 12.0, epsilon = 1e-13);
    }

    #[test]
    fn rejects_tiny_and_weird_grids() {
        assert!(Grid::torus(1, 4).is_err());
        assert!(Grid::torus(3, 32).is_err());
        assert!(Grid::boxed(1, 32, 0.0).is_err());
    }

    #[test]
    fn face_count() {
        let g = Grid::torus(2, 8).unwrap();
        let mut c = 0;
        g.for_each_face(|_, _, _| c += 1);
        assert_eq!(c, 2 * 64);
        let b = Grid::boxed(2, 8, 1.0).unwrap();
        c = 0;
        b.for_each_face(|_, _, _| c += 1);
        assert_eq!(c, 2 * 7 * 8);
    }

    #[test]
    fn dirichlet_form_of_fourier_mode() {
        // |∇ cos(2πx)|^2 integrates to 2π² (discretely, with the 4 sin²(πh)/h² symbol).
        let n = 256;
        let g = Grid::torus(1, n).unwrap();
        let f: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * g.axis_coord(0, i)).cos()).collect();
        let exact = 2.0 * std::f64::consts::PI.powi(2);
        let d = g.dirichlet_form(&f, None);
        assert!((d - exact).abs() < 1e-2 * exact, "d = {d}");
    }
}
