//! Scalar and vector fields on a [`Grid3`] and the grid-quadrature arithmetic on them.

use crate::{Error, Grid3, Real, Result};

/// Real values at every node of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid3,
    data: Vec<Real>,
}

impl ScalarField {
    pub fn zeros(grid: Grid3) -> Self {
        Self {
            grid,
            data: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid3, value: Real) -> Self {
        Self {
            grid,
            data: vec![value; grid.len()],
        }
    }

    pub fn from_vec(grid: Grid3, data: Vec<Real>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "{} values for a grid of {} nodes",
                data.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, data })
    }

    /// Samples `f(x1, x2, x3)` at every node.
    pub fn from_fn(grid: Grid3, f: impl Fn(Real, Real, Real) -> Real) -> Self {
        let [n1, n2, n3] = grid.dims();
        let mut data = Vec::with_capacity(grid.len());
        for i in 0..n1 {
            for j in 0..n2 {
                for k in 0..n3 {
                    let [x1, x2, x3] = grid.coord(i, j, k);
                    data.push(f(x1, x2, x3));
                }
            }
        }
        Self { grid, data }
    }

    #[inline]
    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[Real] {
        &self.data
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Real> {
        self.data
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> Real {
        self.data[self.grid.index(i, j, k)]
    }

    /// Re-labels the field with a grid of identical spatial layout (e.g. different `nt`).
    pub fn with_grid(mut self, grid: Grid3) -> Result<Self> {
        if !grid.same_space(&self.grid) {
            return Err(Error::Dimension(format!(
                "cannot relabel {} as {}",
                self.grid, grid
            )));
        }
        self.grid = grid;
        Ok(self)
    }

    pub fn max_abs(&self) -> Real {
        self.data.iter().fold(0.0, |m: Real, v| m.max(v.abs()))
    }

    pub fn min_max(&self) -> (Real, Real) {
        self.data
            .iter()
            .fold((Real::INFINITY, Real::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Pointwise product.
    pub fn mul(&self, other: &ScalarField) -> Result<ScalarField> {
        check_grids(&self.grid, &other.grid)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        Ok(ScalarField {
            grid: self.grid,
            data,
        })
    }

    /// Σ values · h1·h2·h3 (mean times the domain volume).
    pub fn integral(&self) -> Real {
        self.data.iter().sum::<Real>() * self.grid.cell_volume()
    }
}

/// Three scalar components on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    comps: [ScalarField; 3],
}

impl VectorField {
    pub fn zeros(grid: Grid3) -> Self {
        Self {
            comps: [
                ScalarField::zeros(grid),
                ScalarField::zeros(grid),
                ScalarField::zeros(grid),
            ],
        }
    }

    pub fn from_components(c: [ScalarField; 3]) -> Result<Self> {
        if !(c[0].grid().same_space(c[1].grid()) && c[0].grid().same_space(c[2].grid())) {
            return Err(Error::Dimension(
                "vector components live on different grids".into(),
            ));
        }
        Ok(Self { comps: c })
    }

    pub fn from_fn(grid: Grid3, f: impl Fn(Real, Real, Real) -> [Real; 3]) -> Self {
        Self {
            comps: [
                ScalarField::from_fn(grid, |a, b, c| f(a, b, c)[0]),
                ScalarField::from_fn(grid, |a, b, c| f(a, b, c)[1]),
                ScalarField::from_fn(grid, |a, b, c| f(a, b, c)[2]),
            ],
        }
    }

    #[inline]
    pub fn grid(&self) -> &Grid3 {
        self.comps[0].grid()
    }

    #[inline]
    pub fn comp(&self, axis: usize) -> &ScalarField {
        &self.comps[axis]
    }

    #[inline]
    pub fn comp_mut(&mut self, axis: usize) -> &mut ScalarField {
        &mut self.comps[axis]
    }

    pub fn comps(&self) -> &[ScalarField; 3] {
        &self.comps
    }

    pub fn into_components(self) -> [ScalarField; 3] {
        self.comps
    }

    /// Largest Euclidean length over all nodes.
    pub fn max_norm(&self) -> Real {
        let [a, b, c] = &self.comps;
        a.values()
            .iter()
            .zip(b.values())
            .zip(c.values())
            .fold(0.0, |m: Real, ((x, y), z)| {
                m.max((x * x + y * y + z * z).sqrt())
            })
    }

    /// Pointwise dot product with another vector field.
    pub fn dot(&self, other: &VectorField) -> Result<ScalarField> {
        check_grids(self.grid(), other.grid())?;
        let g = *self.grid();
        let mut out = vec![0.0; g.len()];
        for (idx, o) in out.iter_mut().enumerate() {
            *o = self.comps[0].data[idx] * other.comps[0].data[idx]
                + self.comps[1].data[idx] * other.comps[1].data[idx]
                + self.comps[2].data[idx] * other.comps[2].data[idx];
        }
        ScalarField::from_vec(g, out)
    }

    /// Each component multiplied pointwise by `s`.
    pub fn scale_by(&self, s: &ScalarField) -> Result<VectorField> {
        Ok(Self {
            comps: [
                self.comps[0].mul(s)?,
                self.comps[1].mul(s)?,
                self.comps[2].mul(s)?,
            ],
        })
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().all(|c| c.is_finite())
    }
}

/// One scalar field per time node `t_n = n·dt`, `n = 0..=nt`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    grid: Grid3,
    slices: Vec<ScalarField>,
}

impl TimeSeries {
    pub fn new(grid: Grid3, slices: Vec<ScalarField>) -> Result<Self> {
        if slices.len() != grid.nt() + 1 {
            return Err(Error::Dimension(format!(
                "time series needs {} slices, got {}",
                grid.nt() + 1,
                slices.len()
            )));
        }
        if slices.iter().any(|s| !s.grid().same_space(&grid)) {
            return Err(Error::Dimension("time slice on a foreign grid".into()));
        }
        Ok(Self { grid, slices })
    }

    /// Every slice equal to `f`.
    pub fn constant(grid: Grid3, f: &ScalarField) -> Self {
        Self {
            grid,
            slices: vec![f.clone(); grid.nt() + 1],
        }
    }

    #[inline]
    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.slices.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    #[inline]
    pub fn slice(&self, n: usize) -> &ScalarField {
        &self.slices[n]
    }

    pub fn slices(&self) -> &[ScalarField] {
        &self.slices
    }

    pub fn first(&self) -> &ScalarField {
        &self.slices[0]
    }

    pub fn last(&self) -> &ScalarField {
        &self.slices[self.slices.len() - 1]
    }

    pub fn into_slices(self) -> Vec<ScalarField> {
        self.slices
    }
}

fn check_grids(a: &Grid3, b: &Grid3) -> Result<()> {
    if a.same_space(b) {
        Ok(())
    } else {
        Err(Error::Dimension(format!("grid mismatch: {} vs {}", a, b)))
    }
}

/// Common arithmetic over scalar and vector fields.
pub trait Field: Clone {
    fn components(&self) -> &[ScalarField];
    fn components_mut(&mut self) -> &mut [ScalarField];

    fn field_grid(&self) -> &Grid3 {
        self.components()[0].grid()
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.scale(0.0);
        z
    }

    fn scale(&mut self, a: Real) {
        for c in self.components_mut() {
            c.values_mut().iter_mut().for_each(|v| *v *= a);
        }
    }

    /// `self += a · x`.
    fn axpy_assign(&mut self, a: Real, x: &Self) -> Result<()> {
        check_grids(self.field_grid(), x.field_grid())?;
        for (c, xc) in self.components_mut().iter_mut().zip(x.components()) {
            for (v, xv) in c.values_mut().iter_mut().zip(xc.values()) {
                *v += a * xv;
            }
        }
        Ok(())
    }

    /// `self = x + b · self`.
    fn xpby_assign(&mut self, x: &Self, b: Real) -> Result<()> {
        check_grids(self.field_grid(), x.field_grid())?;
        for (c, xc) in self.components_mut().iter_mut().zip(x.components()) {
            for (v, xv) in c.values_mut().iter_mut().zip(xc.values()) {
                *v = xv + b * *v;
            }
        }
        Ok(())
    }
}

impl Field for ScalarField {
    fn components(&self) -> &[ScalarField] {
        std::slice::from_ref(self)
    }
    fn components_mut(&mut self) -> &mut [ScalarField] {
        std::slice::from_mut(self)
    }
}

impl Field for VectorField {
    fn components(&self) -> &[ScalarField] {
        &self.comps
    }
    fn components_mut(&mut self) -> &mut [ScalarField] {
        &mut self.comps
    }
}

/// `a · x + y`.
pub fn axpy<F: Field>(a: Real, x: &F, y: &F) -> Result<F> {
    let mut out = y.clone();
    out.axpy_assign(a, x)?;
    Ok(out)
}

/// L² inner product by the rectangle rule: `Σ x·y · h1·h2·h3`.
pub fn inner<F: Field>(x: &F, y: &F) -> Result<Real> {
    check_grids(x.field_grid(), y.field_grid())?;
    let mut acc = 0.0;
    for (xc, yc) in x.components().iter().zip(y.components()) {
        acc += xc
            .values()
            .iter()
            .zip(yc.values())
            .map(|(a, b)| a * b)
            .sum::<Real>();
    }
    Ok(acc * x.field_grid().cell_volume())
}

/// `sqrt(inner(x, x))`.
pub fn norm2<F: Field>(x: &F) -> Real {
    inner(x, x).expect("same grid").sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{PI, TWO_PI};

    #[test]
    fn constant_field_integrates_to_domain_volume() {
        let g = Grid3::new(8, 10, 12, 1).unwrap();
        let one = ScalarField::constant(g, 1.0);
        let vol = TWO_PI.powi(3);
        assert!((inner(&one, &one).unwrap() - vol).abs() < 1e-10 * vol);
        assert!((vol - 248.050).abs() < 1e-3);
    }

    #[test]
    fn zero_norm() {
        let g = Grid3::cubic(8, 1).unwrap();
        assert_eq!(norm2(&VectorField::zeros(g)), 0.0);
    }

    #[test]
    fn sine_squared_is_integrated_exactly() {
        let g = Grid3::cubic(32, 1).unwrap();
        let f = ScalarField::from_fn(g, |x, _, _| x.sin());
        let exact = 4.0 * PI.powi(3);
        assert!((inner(&f, &f).unwrap() - exact).abs() < 1e-11 * exact);
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let a = ScalarField::zeros(Grid3::cubic(8, 1).unwrap());
        let b = ScalarField::zeros(Grid3::cubic(10, 1).unwrap());
        assert!(matches!(inner(&a, &b), Err(Error::Dimension(_))));
        assert!(matches!(axpy(1.0, &a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn axpy_combines() {
        let g = Grid3::cubic(8, 1).unwrap();
        let x = ScalarField::constant(g, 2.0);
        let y = ScalarField::constant(g, 1.0);
        let z = axpy(3.0, &x, &y).unwrap();
        assert!(z.values().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn time_series_length_is_checked() {
        let g = Grid3::cubic(8, 3).unwrap();
        let f = ScalarField::zeros(g);
        assert!(TimeSeries::new(g, vec![f.clone(); 3]).is_err());
        assert_eq!(TimeSeries::new(g, vec![f; 4]).unwrap().len(), 4);
    }
}
