//! Scattered-point evaluation of periodic grid fields with tensor-product
//! Lagrange polynomials (trilinear or tricubic).
//!
//! Stencil placement and weights are computed once per point set in an
//! [`InterpPlan`] and reused for every field evaluated at those points.

use serde::{Deserialize, Serialize};

use crate::field::ScalarField;
use crate::{Error, Grid3, Real, Result};

/// Offsets closer than this (in grid units) to a node are snapped onto it, so that
/// on-node queries reproduce stored values exactly.
const SNAP: Real = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Degree {
    Linear,
    Cubic,
}

impl Degree {
    pub fn from_order(order: u32) -> Result<Self> {
        match order {
            1 => Ok(Degree::Linear),
            3 => Ok(Degree::Cubic),
            other => Err(Error::Parameter(format!(
                "interpolation degree must be 1 or 3, got {other}"
            ))),
        }
    }

    #[inline]
    pub fn order(self) -> usize {
        match self {
            Degree::Linear => 1,
            Degree::Cubic => 3,
        }
    }

    /// Stencil nodes per axis.
    #[inline]
    pub fn width(self) -> usize {
        self.order() + 1
    }
}

/// A batch of query locations in radians (wrapped periodically on use).
#[derive(Debug, Clone, PartialEq)]
pub struct QueryPoints {
    grid: Grid3,
    coords: Vec<[Real; 3]>,
    max_shift: Option<Real>,
}

impl QueryPoints {
    pub fn new(grid: Grid3, coords: Vec<[Real; 3]>) -> Result<Self> {
        if let Some(p) = coords.iter().position(|c| c.iter().any(|x| !x.is_finite())) {
            return Err(Error::Input(format!(
                "query point {p} has a non-finite coordinate"
            )));
        }
        Ok(Self {
            grid,
            coords,
            max_shift: None,
        })
    }

    /// Records the largest `x1` distance between a query point and the grid node
    /// it was traced from. Slab backends size their interpolation halo from it.
    pub fn with_max_shift(mut self, shift: Real) -> Self {
        self.max_shift = Some(shift);
        self
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn coords(&self) -> &[[Real; 3]] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn max_shift(&self) -> Option<Real> {
        self.max_shift
    }
}

/// First stencil node (already wrapped) and per-axis 1D weights of one query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub start: [u32; 3],
    pub w: [[Real; 4]; 3],
}

/// Precomputed stencils for a fixed point set.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpPlan {
    grid: Grid3,
    degree: Degree,
    stencils: Vec<Stencil>,
    max_shift: Option<Real>,
}

fn cubic_weights(t: Real) -> [Real; 4] {
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ]
}

/// Cell index (wrapped) and fractional offset of coordinate `x` on an axis of `n` nodes.
#[inline]
fn locate(x: Real, h: Real, n: usize) -> (usize, Real) {
    let u = x / h;
    let mut fl = u.floor();
    let mut t = u - fl;
    if t < SNAP {
        t = 0.0;
    } else if t > 1.0 - SNAP {
        fl += 1.0;
        t = 0.0;
    }
    ((fl as i64).rem_euclid(n as i64) as usize, t)
}

impl InterpPlan {
    pub fn new(q: &QueryPoints, degree: Degree) -> Self {
        let g = q.grid;
        let h = g.spacing();
        let n = g.dims();
        let stencils = q
            .coords
            .iter()
            .map(|x| {
                let mut st = Stencil {
                    start: [0; 3],
                    w: [[0.0; 4]; 3],
                };
                for axis in 0..3 {
                    let (cell, t) = locate(x[axis], h[axis], n[axis]);
                    match degree {
                        Degree::Linear => {
                            st.start[axis] = cell as u32;
                            st.w[axis] = [1.0 - t, t, 0.0, 0.0];
                        }
                        Degree::Cubic => {
                            st.start[axis] = ((cell + n[axis] - 1) % n[axis]) as u32;
                            st.w[axis] = cubic_weights(t);
                        }
                    }
                }
                st
            })
            .collect();
        Self {
            grid: g,
            degree,
            stencils,
            max_shift: q.max_shift,
        }
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn degree(&self) -> Degree {
        self.degree
    }

    pub fn stencils(&self) -> &[Stencil] {
        &self.stencils
    }

    pub fn len(&self) -> usize {
        self.stencils.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stencils.is_empty()
    }

    pub fn max_shift(&self) -> Option<Real> {
        self.max_shift
    }
}

/// Evaluates one stencil. `plane(a)` returns the offset in `data` of the `x1`
/// plane holding stencil row `a`.
#[inline]
pub fn eval_stencil(
    st: &Stencil,
    width: usize,
    n: [usize; 3],
    data: &[Real],
    plane: impl Fn(usize) -> usize,
) -> Real {
    let [_, n2, n3] = n;
    let mut cols = [0usize; 4];
    for (c, col) in cols.iter_mut().enumerate().take(width) {
        *col = (st.start[2] as usize + c) % n3;
    }
    let mut acc = 0.0;
    for a in 0..width {
        let base = plane(a);
        let mut acc_b = 0.0;
        for b in 0..width {
            let row = base + (st.start[1] as usize + b) % n2 * n3;
            let mut acc_c = 0.0;
            for c in 0..width {
                acc_c += st.w[2][c] * data[row + cols[c]];
            }
            acc_b += st.w[1][b] * acc_c;
        }
        acc += st.w[0][a] * acc_b;
    }
    acc
}

/// Adds `value` distributed with the stencil weights onto `data` (transpose of
/// [`eval_stencil`]).
#[inline]
pub fn scatter_stencil(
    st: &Stencil,
    width: usize,
    n: [usize; 3],
    value: Real,
    data: &mut [Real],
    plane: impl Fn(usize) -> usize,
) {
    let [_, n2, n3] = n;
    let mut cols = [0usize; 4];
    for (c, col) in cols.iter_mut().enumerate().take(width) {
        *col = (st.start[2] as usize + c) % n3;
    }
    for a in 0..width {
        let base = plane(a);
        let va = value * st.w[0][a];
        for b in 0..width {
            let row = base + (st.start[1] as usize + b) % n2 * n3;
            let vb = va * st.w[1][b];
            for c in 0..width {
                data[row + cols[c]] += vb * st.w[2][c];
            }
        }
    }
}

fn check_plan(f_grid: &Grid3, plan: &InterpPlan) -> Result<()> {
    if !f_grid.same_space(&plan.grid) {
        return Err(Error::Dimension(format!(
            "field on {} evaluated with a plan for {}",
            f_grid, plan.grid
        )));
    }
    Ok(())
}

/// Serial evaluation of `f` at every planned point.
pub fn interpolate(f: &ScalarField, plan: &InterpPlan) -> Result<Vec<Real>> {
    check_plan(f.grid(), plan)?;
    let n = plan.grid.dims();
    let pl = plan.grid.plane_len();
    let width = plan.degree.width();
    let data = f.values();
    Ok(plan
        .stencils
        .iter()
        .map(|st| {
            eval_stencil(st, width, n, data, |a| {
                (st.start[0] as usize + a) % n[0] * pl
            })
        })
        .collect())
}

/// Serial transpose of [`interpolate`]: spreads point values back onto the grid.
pub fn interpolate_transpose(values: &[Real], plan: &InterpPlan) -> Result<ScalarField> {
    if values.len() != plan.len() {
        return Err(Error::Dimension(format!(
            "{} values for {} planned points",
            values.len(),
            plan.len()
        )));
    }
    let g = plan.grid;
    let n = g.dims();
    let pl = g.plane_len();
    let width = plan.degree.width();
    let mut out = vec![0.0; g.len()];
    for (st, &v) in plan.stencils.iter().zip(values) {
        scatter_stencil(st, width, n, v, &mut out, |a| {
            (st.start[0] as usize + a) % n[0] * pl
        });
    }
    ScalarField::from_vec(g, out)
}

/// One-shot convenience: plan and evaluate.
pub fn interpolate_points(f: &ScalarField, q: &QueryPoints, degree: Degree) -> Result<Vec<Real>> {
    interpolate(f, &InterpPlan::new(q, degree))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::inner;
    use crate::TWO_PI;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(g: Grid3, m: usize, seed: u64) -> QueryPoints {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords = (0..m)
            .map(|_| std::array::from_fn(|_| rng.gen_range(-TWO_PI..2.0 * TWO_PI)))
            .collect();
        QueryPoints::new(g, coords).unwrap()
    }

    #[test]
    fn cubic_weights_are_cardinal_and_sum_to_one() {
        assert_eq!(cubic_weights(0.0), [0.0, 1.0, 0.0, 0.0]);
        for t in [0.1, 0.37, 0.5, 0.93] {
            let s: Real = cubic_weights(t).iter().sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn grid_nodes_are_reproduced_exactly() {
        let g = Grid3::new(8, 10, 12, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f =
            ScalarField::from_vec(g, (0..g.len()).map(|_| rng.gen::<Real>()).collect()).unwrap();
        let nodes: Vec<_> = (0..g.len())
            .map(|idx| {
                let (i, j, k) = g.unindex(idx);
                g.coord(i, j, k)
            })
            .collect();
        let q = QueryPoints::new(g, nodes).unwrap();
        for deg in [Degree::Linear, Degree::Cubic] {
            let vals = interpolate_points(&f, &q, deg).unwrap();
            assert_eq!(vals.as_slice(), f.values());
        }
    }

    #[test]
    fn constants_are_preserved() {
        let g = Grid3::cubic(16, 1).unwrap();
        let f = ScalarField::constant(g, 7.5);
        let q = random_points(g, 200, 1);
        for deg in [Degree::Linear, Degree::Cubic] {
            for v in interpolate_points(&f, &q, deg).unwrap() {
                assert!((v - 7.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nan_coordinates_are_rejected() {
        let g = Grid3::cubic(8, 1).unwrap();
        assert!(matches!(
            QueryPoints::new(g, vec![[0.0, Real::NAN, 1.0]]),
            Err(Error::Input(_))
        ));
        assert!(Degree::from_order(2).is_err());
    }

    #[test]
    fn transpose_is_adjoint() {
        let g = Grid3::new(8, 10, 12, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f =
            ScalarField::from_vec(g, (0..g.len()).map(|_| rng.gen::<Real>()).collect()).unwrap();
        let q = random_points(g, 500, 4);
        let w: Vec<Real> = (0..500).map(|_| rng.gen::<Real>()).collect();
        for deg in [Degree::Linear, Degree::Cubic] {
            let plan = InterpPlan::new(&q, deg);
            let pf = interpolate(&f, &plan).unwrap();
            let lhs: Real = pf.iter().zip(&w).map(|(a, b)| a * b).sum();
            let pt = interpolate_transpose(&w, &plan).unwrap();
            let rhs = inner(&f, &pt).unwrap() / g.cell_volume();
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs());
        }
    }
}
