//! Uniform cell-centered grids on box domains, and the discrete fields
//! living on them.
//!
//! The grid carries the zero-flux (homogeneous Neumann) Laplacian built
//! from the per-axis 3-point stencil with mirror ghost cells. That choice
//! makes the operator exactly symmetric, negative semidefinite, and
//! mean-free at the discrete level, which is what the conservation and
//! dissipation identities of the time scheme rely on.
//!
//! Storage is row-major with the last axis fastest; all reductions run in
//! a fixed sequential order so results are bit-reproducible.

use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid dimension must be 1, 2, or 3 (got {0})")]
    DimOutOfRange(usize),
    #[error("axis {axis} needs at least 3 cells (got {cells})")]
    TooFewCells { axis: usize, cells: usize },
    #[error("axis {axis} needs a positive finite length (got {length})")]
    BadLength { axis: usize, length: f64 },
}

#[derive(Debug, Error, PartialEq)]
pub enum FieldError {
    #[error("value count {got} does not match grid cell count {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("non-finite value {value} at cell {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("fields live on different grids")]
    GridMismatch,
}

/// Uniform cell-centered mesh of a box domain in dimension 1–3.
///
/// Cell centers along axis `a` sit at `(i + 1/2) * spacing[a]`. Spacings
/// may differ per axis; `cell_volume` is their product.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    cells: Vec<usize>,
    lengths: Vec<f64>,
    spacing: Vec<f64>,
    cell_volume: f64,
}

impl Grid {
    pub fn new(cells: &[usize], lengths: &[f64]) -> Result<Grid, GridError> {
        let dim = cells.len();
        if dim == 0 || dim > 3 || lengths.len() != dim {
            return Err(GridError::DimOutOfRange(if lengths.len() != dim {
                lengths.len()
            } else {
                dim
            }));
        }
        for (axis, &n) in cells.iter().enumerate() {
            if n < 3 {
                return Err(GridError::TooFewCells { axis, cells: n });
            }
        }
        for (axis, &l) in lengths.iter().enumerate() {
            if !(l.is_finite() && l > 0.0) {
                return Err(GridError::BadLength { axis, length: l });
            }
        }
        let spacing: Vec<f64> = cells
            .iter()
            .zip(lengths)
            .map(|(&n, &l)| l / n as f64)
            .collect();
        let cell_volume = spacing.iter().product();
        Ok(Grid {
            cells: cells.to_vec(),
            lengths: lengths.to_vec(),
            spacing,
            cell_volume,
        })
    }

    /// Convenience constructor returning the grid behind an `Arc`, the form
    /// every `Field` holds it in.
    pub fn shared(cells: &[usize], lengths: &[f64]) -> Result<Arc<Grid>, GridError> {
        Ok(Arc::new(Grid::new(cells, lengths)?))
    }

    pub fn dim(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn total_cells(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn domain_volume(&self) -> f64 {
        self.lengths.iter().product()
    }

    /// Distance in the flat value array between neighbors along `axis`
    /// (row-major, last axis fastest).
    pub fn stride(&self, axis: usize) -> usize {
        self.cells[axis + 1..].iter().product()
    }

    /// Center coordinate of cell `i` along `axis`.
    pub fn cell_center(&self, axis: usize, i: usize) -> f64 {
        (i as f64 + 0.5) * self.spacing[axis]
    }

    /// Multi-index of the flat index `idx`, row-major.
    pub fn unflatten(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for axis in (0..self.dim()).rev() {
            out[axis] = idx % self.cells[axis];
            idx /= self.cells[axis];
        }
        out
    }
}

/// Real-valued function sampled at the cell centers of a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Field {
    /// Wraps `values` (row-major, last axis fastest) after checking length
    /// and finiteness.
    pub fn new(grid: &Arc<Grid>, values: Vec<f64>) -> Result<Field, FieldError> {
        if values.len() != grid.total_cells() {
            return Err(FieldError::LengthMismatch {
                got: values.len(),
                expected: grid.total_cells(),
            });
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(FieldError::NonFinite { index, value });
            }
        }
        Ok(Field {
            grid: Arc::clone(grid),
            values,
        })
    }

    pub fn constant(grid: &Arc<Grid>, c: f64) -> Field {
        Field {
            grid: Arc::clone(grid),
            values: vec![c; grid.total_cells()],
        }
    }

    /// Crate-internal constructor for values produced by our own
    /// operators; skips the validation of [`Field::new`].
    pub(crate) fn from_raw(grid: &Arc<Grid>, values: Vec<f64>) -> Field {
        debug_assert_eq!(values.len(), grid.total_cells());
        Field {
            grid: Arc::clone(grid),
            values,
        }
    }

    /// Samples `f` at every cell center; `f` receives the center
    /// coordinates, one per axis.
    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Field {
        let mut coords = vec![0.0; grid.dim()];
        let values = (0..grid.total_cells())
            .map(|idx| {
                for (axis, &i) in grid.unflatten(idx).iter().enumerate() {
                    coords[axis] = grid.cell_center(axis, i);
                }
                f(&coords)
            })
            .collect();
        Field {
            grid: Arc::clone(grid),
            values,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn same_grid(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid == other.grid
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Arithmetic mean of the values, which on a uniform grid equals the
    /// integral mean `(cell_volume * sum) / |domain|`. Sequential sum,
    /// ascending index.
    pub fn mean(&self) -> f64 {
        let sum: f64 = self.values.iter().sum();
        sum / self.values.len() as f64
    }

    /// Discrete L2 pairing: `cell_volume * sum_i f_i g_i`, sequential sum.
    pub fn inner(&self, other: &Field) -> Result<f64, FieldError> {
        if !self.same_grid(other) {
            return Err(FieldError::GridMismatch);
        }
        let mut sum = 0.0;
        for (a, b) in self.values.iter().zip(&other.values) {
            sum += a * b;
        }
        Ok(self.grid.cell_volume() * sum)
    }

    /// Discrete L2 norm, `sqrt(inner(self, self))`.
    pub fn norm_l2(&self) -> f64 {
        self.inner(self).expect("same grid").sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Second-order zero-flux Laplacian: per-axis 3-point stencil with
    /// mirror ghost cells (ghost = adjacent interior value), summed over
    /// axes. Written in difference form so constants map to exact zero.
    pub fn laplacian_neumann(&self) -> Field {
        let grid = &self.grid;
        let vals = &self.values;
        let mut out = vec![0.0; vals.len()];
        for axis in 0..grid.dim() {
            let n = grid.cells()[axis];
            let stride = grid.stride(axis);
            let h = grid.spacing()[axis];
            let inv_h2 = 1.0 / (h * h);
            for idx in 0..vals.len() {
                let i = (idx / stride) % n;
                let c = vals[idx];
                let mut acc = 0.0;
                if i > 0 {
                    acc += vals[idx - stride] - c;
                }
                if i + 1 < n {
                    acc += vals[idx + stride] - c;
                }
                out[idx] += acc * inv_h2;
            }
        }
        Field {
            grid: Arc::clone(grid),
            values: out,
        }
    }

    /// Returns `self - mean(self)`; idempotent up to roundoff.
    pub fn project_mean_zero(&self) -> Field {
        let m = self.mean();
        self.map(|v| v - m)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self - other`. Panics on grid mismatch; callers pair fields through
    /// the checked public operations first.
    pub fn sub(&self, other: &Field) -> Field {
        assert!(self.same_grid(other), "field arithmetic across grids");
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Field {
            grid: Arc::clone(&self.grid),
            values,
        }
    }

    /// `self + scale * other`.
    pub fn add_scaled(&self, other: &Field, scale: f64) -> Field {
        assert!(self.same_grid(other), "field arithmetic across grids");
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + scale * b)
            .collect();
        Field {
            grid: Arc::clone(&self.grid),
            values,
        }
    }

    pub fn add_constant(&self, c: f64) -> Field {
        self.map(|v| v + c)
    }

    /// Pointwise product with another field, then the usual inner-product
    /// weighting is up to the caller.
    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        assert!(self.same_grid(other), "field arithmetic across grids");
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Field {
            grid: Arc::clone(&self.grid),
            values,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid1(n: usize, l: f64) -> Arc<Grid> {
        Grid::shared(&[n], &[l]).unwrap()
    }

    fn random_field(grid: &Arc<Grid>, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..grid.total_cells())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        Field::new(grid, values).unwrap()
    }

    /// Dense assembly of the mirror-ghost stencil, written independently of
    /// `laplacian_neumann` (explicit matrix, triple loop).
    fn dense_laplacian_apply(grid: &Grid, v: &[f64]) -> Vec<f64> {
        let n_total = grid.total_cells();
        let mut mat = vec![vec![0.0; n_total]; n_total];
        for (row, mat_row) in mat.iter_mut().enumerate() {
            let mi = grid.unflatten(row);
            for axis in 0..grid.dim() {
                let n = grid.cells()[axis];
                let h = grid.spacing()[axis];
                let w = 1.0 / (h * h);
                for dir in [-1i64, 1i64] {
                    let j = mi[axis] as i64 + dir;
                    // mirror ghost: reflected index equals the cell itself
                    let j = if j < 0 {
                        0
                    } else if j as usize >= n {
                        n - 1
                    } else {
                        j as usize
                    };
                    let mut mj = mi.clone();
                    mj[axis] = j;
                    let mut flat = 0;
                    for (a, &i) in mj.iter().enumerate() {
                        flat += i * grid.stride(a);
                    }
                    mat_row[flat] += w;
                    mat_row[row] -= w;
                }
            }
        }
        (0..n_total)
            .map(|r| (0..n_total).map(|c| mat[r][c] * v[c]).sum())
            .collect()
    }

    #[test]
    fn fields_and_grids_are_shareable_across_threads() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<Grid>();
        assert_send_sync::<Field>();
        assert_send_sync::<crate::potential::Potential>();
    }

    #[test]
    fn rejects_bad_grids() {
        assert_eq!(
            Grid::new(&[2], &[1.0]).unwrap_err(),
            GridError::TooFewCells { axis: 0, cells: 2 }
        );
        assert!(matches!(
            Grid::new(&[4, 4, 4, 4], &[1.0; 4]),
            Err(GridError::DimOutOfRange(4))
        ));
        assert!(matches!(
            Grid::new(&[4], &[0.0]),
            Err(GridError::BadLength { axis: 0, .. })
        ));
    }

    #[test]
    fn mean_of_constant_and_ramp() {
        let g = grid1(4, 2.0);
        assert_eq!(Field::constant(&g, 2.5).mean(), 2.5);
        let f = Field::new(&g, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(f.mean(), 1.5);
    }

    #[test]
    fn projection_produces_mean_zero_and_is_idempotent() {
        let g = grid1(4, 1.0);
        let f = Field::new(&g, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let p = f.project_mean_zero();
        assert_eq!(p.values(), &[-1.5, -0.5, 0.5, 1.5]);
        assert!(p.mean().abs() < 1e-15);

        let c = Field::constant(&g, 7.25).project_mean_zero();
        assert!(c.values().iter().all(|&v| v == 0.0));

        for seed in 0..20 {
            let f = random_field(&Grid::shared(&[5, 4], &[1.0, 2.0]).unwrap(), seed);
            let p1 = f.project_mean_zero();
            let p2 = p1.project_mean_zero();
            for (a, b) in p1.values().iter().zip(p2.values()) {
                assert!((a - b).abs() <= 1e-14 * (1.0 + a.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn inner_matches_naive_loop_oracle() {
        let g = grid1(8, 1.0);
        let f = random_field(&g, 1);
        let h = random_field(&g, 2);
        // naive dot product times the cell width, freshly coded
        let mut expect = 0.0;
        for i in 0..8 {
            expect += f.values()[i] * h.values()[i];
        }
        expect *= 1.0 / 8.0;
        let got = f.inner(&h).unwrap();
        assert!((got - expect).abs() <= 1e-15 * (1.0 + expect.abs()));
    }

    #[test]
    fn inner_unit_constants_give_domain_volume() {
        let g = Grid::shared(&[4, 4], &[1.0, 1.0]).unwrap();
        let one = Field::constant(&g, 1.0);
        assert!((one.inner(&one).unwrap() - 1.0).abs() < 1e-15);

        let f = random_field(&g, 3).project_mean_zero();
        assert!(one.inner(&f).unwrap().abs() < 1e-14);
    }

    #[test]
    fn inner_rejects_grid_mismatch() {
        let a = Field::constant(&grid1(4, 1.0), 1.0);
        let b = Field::constant(&grid1(5, 1.0), 1.0);
        assert_eq!(a.inner(&b).unwrap_err(), FieldError::GridMismatch);
    }

    #[test]
    fn laplacian_of_constant_is_exactly_zero() {
        for g in [
            grid1(3, 1.0),
            Grid::shared(&[4, 5], &[1.0, 0.7]).unwrap(),
            Grid::shared(&[3, 4, 5], &[1.0, 2.0, 0.5]).unwrap(),
        ] {
            let lap = Field::constant(&g, 3.7).laplacian_neumann();
            assert!(lap.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn laplacian_hat_n3_matches_hand_stencil() {
        // h = 1/3 is not exact in binary, so compare to 1e-12 relative
        let g = grid1(3, 1.0);
        let f = Field::new(&g, vec![0.0, 1.0, 0.0]).unwrap();
        let lap = f.laplacian_neumann();
        for (got, want) in lap.values().iter().zip(&[9.0, -18.0, 9.0]) {
            assert!((got - want).abs() <= 1e-12 * want.abs(), "{got} vs {want}");
        }
    }

    #[test]
    fn laplacian_cosine_eigenpair_matches_dense_assembly() {
        let n = 16;
        let g = grid1(n, 1.0);
        let h = g.spacing()[0];
        for k in [1, 3, 7] {
            let w = Field::from_fn(&g, |x| (std::f64::consts::PI * k as f64 * x[0]).cos());
            let lap = w.laplacian_neumann();
            let dense = dense_laplacian_apply(&g, w.values());
            let lambda =
                -(2.0 / (h * h)) * (1.0 - (std::f64::consts::PI * k as f64 / n as f64).cos());
            for (i, (&got, &expect)) in lap.values().iter().zip(&dense).enumerate() {
                assert!((got - expect).abs() <= 1e-9, "dense mismatch at {i}");
                assert!(
                    (got - lambda * w.values()[i]).abs() <= 1e-9 * lambda.abs(),
                    "eigenpair mismatch at {i}: {got} vs {}",
                    lambda * w.values()[i]
                );
            }
        }
    }

    #[test]
    fn laplacian_2d_matches_dense_assembly() {
        let g = Grid::shared(&[5, 4], &[1.0, 0.7]).unwrap();
        let f = random_field(&g, 11);
        let lap = f.laplacian_neumann();
        let dense = dense_laplacian_apply(&g, f.values());
        for (a, b) in lap.values().iter().zip(&dense) {
            assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    proptest! {
        #[test]
        fn laplacian_symmetric_negsemidef_meanfree(seed in 0u64..200) {
            let g = match seed % 3 {
                0 => grid1(16, 1.0),
                1 => Grid::shared(&[8, 6], &[1.0, 0.5]).unwrap(),
                _ => Grid::shared(&[3, 4, 3], &[0.7, 1.3, 1.0]).unwrap(),
            };
            let f = random_field(&g, seed);
            let h = random_field(&g, seed.wrapping_add(1000));
            let lf = f.laplacian_neumann();
            let lh = h.laplacian_neumann();

            let a = lf.inner(&h).unwrap();
            let b = f.inner(&lh).unwrap();
            let scale = 1.0f64.max(a.abs()).max(b.abs());
            prop_assert!((a - b).abs() <= 1e-12 * scale, "symmetry: {a} vs {b}");

            let q = lf.inner(&f).unwrap();
            prop_assert!(q <= 1e-12 * f.inner(&f).unwrap(), "neg semidefinite: {q}");

            let m = lf.mean();
            prop_assert!(m.abs() <= 1e-12 * (1.0 + lf.norm_inf()), "mean-free: {m}");
        }
    }
}
