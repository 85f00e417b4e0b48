//! The smooth synthetic registration problem: template `m0 = Σ_i sin²(x_i)/3`
//! and a reference generated by transporting it with a known velocity.

use crate::engine::Engine;
use crate::field::{ScalarField, VectorField};
use crate::interp::Degree;
use crate::transport::{Transport, TransportConfig};
use crate::{Grid3, Result};

pub fn syn_template(grid: Grid3) -> ScalarField {
    ScalarField::from_fn(grid, |x, y, z| {
        (x.sin().powi(2) + y.sin().powi(2) + z.sin().powi(2)) / 3.0
    })
}

/// `v_j = sin(x_i) cos(x_k) sin(x_k)` with `(i, k) = (3, 2), (1, 3), (2, 1)` for `j = 1, 2, 3`.
/// Divergence-free, maximum component amplitude `1/2`.
pub fn syn_velocity(grid: Grid3) -> VectorField {
    VectorField::from_fn(grid, |x, y, z| {
        [
            z.sin() * y.cos() * y.sin(),
            x.sin() * z.cos() * z.sin(),
            y.sin() * x.cos() * x.sin(),
        ]
    })
}

#[derive(Debug, Clone)]
pub struct SynProblem {
    pub m0: ScalarField,
    pub m1: ScalarField,
    pub v_true: VectorField,
}

/// Builds the pair on `grid` (its `nt` sets the forward solve) with the given interpolation.
pub fn syn_problem(eng: &Engine, grid: Grid3, degree: Degree) -> Result<SynProblem> {
    let m0 = syn_template(grid);
    let v_true = syn_velocity(grid);
    let tr = Transport::new(
        eng,
        TransportConfig {
            degree,
            ..Default::default()
        },
    );
    let ch = tr.characteristics(&v_true)?;
    let m1 = tr.solve_state(&ch, &m0)?.final_state().clone();
    Ok(SynProblem { m0, m1, v_true })
}
