//! 8th-order central finite differences on the periodic grid.
//!
//! The plane-level routines are shared with the slab-parallel backend so both
//! paths perform identical arithmetic.

use std::sync::OnceLock;

use crate::field::{ScalarField, VectorField};
use crate::{Error, Grid3, Real, Result};

/// Stencil half-width.
pub const HALF_WIDTH: usize = 4;

/// Antisymmetric first-derivative weights `c_1..c_4`:
/// `f'(x) ≈ Σ_s c_s (f(x + s h) − f(x − s h)) / h`.
pub fn stencil() -> &'static [Real; HALF_WIDTH] {
    static COEFFS: OnceLock<[Real; HALF_WIDTH]> = OnceLock::new();
    COEFFS.get_or_init(|| {
        let c = central_weights(HALF_WIDTH);
        let mut out = [0.0; HALF_WIDTH];
        for (o, v) in out.iter_mut().zip(c) {
            *o = v as Real;
        }
        out
    })
}

/// Solves the odd-moment order conditions `Σ_s 2 c_s s^(2m+1) = δ_m0`, `m < w`.
pub fn central_weights(w: usize) -> Vec<f64> {
    let mut a = vec![vec![0.0f64; w + 1]; w];
    for (m, row) in a.iter_mut().enumerate() {
        for s in 1..=w {
            row[s - 1] = 2.0 * (s as f64).powi(2 * m as i32 + 1);
        }
        row[w] = if m == 0 { 1.0 } else { 0.0 };
    }
    // Gaussian elimination with partial pivoting on the augmented system.
    for col in 0..w {
        let piv = (col..w)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .expect("non-empty");
        a.swap(col, piv);
        for r in col + 1..w {
            let f = a[r][col] / a[col][col];
            for c in col..=w {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    let mut x = vec![0.0; w];
    for r in (0..w).rev() {
        let mut s = a[r][w];
        for c in r + 1..w {
            s -= a[r][c] * x[c];
        }
        x[r] = s / a[r][r];
    }
    x
}

fn check_grid(grid: &Grid3) -> Result<()> {
    if grid.dims().iter().any(|&n| n < 2 * HALF_WIDTH + 1) {
        return Err(Error::Dimension(format!(
            "finite differences need at least {} nodes per axis, got {}",
            2 * HALF_WIDTH + 1,
            grid
        )));
    }
    Ok(())
}

/// `∂/∂x1` for one output plane. `planes[s]` is the input plane at offset `s − 4`.
pub fn d1_plane(planes: [&[Real]; 2 * HALF_WIDTH + 1], inv_h: Real, out: &mut [Real]) {
    let c = stencil();
    for (idx, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for s in 0..HALF_WIDTH {
            acc += c[s] * (planes[HALF_WIDTH + 1 + s][idx] - planes[HALF_WIDTH - 1 - s][idx]);
        }
        *o = acc * inv_h;
    }
}

/// `∂/∂x2` within one `n2 × n3` plane, written to (or added onto) `out`.
pub fn d2_plane(plane: &[Real], n2: usize, n3: usize, inv_h: Real, out: &mut [Real], add: bool) {
    let c = stencil();
    for j in 0..n2 {
        let mut rows = [0usize; 2 * HALF_WIDTH + 1];
        for (t, r) in rows.iter_mut().enumerate() {
            *r = (j + n2 + t - HALF_WIDTH) % n2 * n3;
        }
        for k in 0..n3 {
            let mut acc = 0.0;
            for s in 0..HALF_WIDTH {
                acc += c[s]
                    * (plane[rows[HALF_WIDTH + 1 + s] + k] - plane[rows[HALF_WIDTH - 1 - s] + k]);
            }
            let v = acc * inv_h;
            let o = &mut out[j * n3 + k];
            if add {
                *o += v;
            } else {
                *o = v;
            }
        }
    }
}

/// `∂/∂x3` within one `n2 × n3` plane, written to (or added onto) `out`.
pub fn d3_plane(plane: &[Real], n2: usize, n3: usize, inv_h: Real, out: &mut [Real], add: bool) {
    let c = stencil();
    for j in 0..n2 {
        let row = &plane[j * n3..(j + 1) * n3];
        for k in 0..n3 {
            let mut acc = 0.0;
            for s in 0..HALF_WIDTH {
                let up = (k + s + 1) % n3;
                let dn = (k + n3 - s - 1) % n3;
                acc += c[s] * (row[up] - row[dn]);
            }
            let v = acc * inv_h;
            let o = &mut out[j * n3 + k];
            if add {
                *o += v;
            } else {
                *o = v;
            }
        }
    }
}

/// Collects the nine `x1` neighbour planes of output plane `i` from a padded buffer
/// whose plane `i + HALF_WIDTH` is the output plane.
pub fn padded_planes(buf: &[Real], plane_len: usize, i: usize) -> [&[Real]; 2 * HALF_WIDTH + 1] {
    std::array::from_fn(|t| &buf[(i + t) * plane_len..(i + t + 1) * plane_len])
}

fn periodic_planes(
    f: &[Real],
    n1: usize,
    plane_len: usize,
    i: usize,
) -> [&[Real]; 2 * HALF_WIDTH + 1] {
    std::array::from_fn(|t| {
        let p = (i + n1 + t - HALF_WIDTH) % n1;
        &f[p * plane_len..(p + 1) * plane_len]
    })
}

/// Serial 8th-order gradient.
pub fn gradient(f: &ScalarField) -> Result<VectorField> {
    let g = *f.grid();
    check_grid(&g)?;
    let [n1, n2, n3] = g.dims();
    let pl = g.plane_len();
    let inv_h = [1.0 / g.h(0), 1.0 / g.h(1), 1.0 / g.h(2)];
    let mut out = [vec![0.0; g.len()], vec![0.0; g.len()], vec![0.0; g.len()]];
    let data = f.values();
    for i in 0..n1 {
        let range = i * pl..(i + 1) * pl;
        d1_plane(
            periodic_planes(data, n1, pl, i),
            inv_h[0],
            &mut out[0][range.clone()],
        );
        d2_plane(
            &data[range.clone()],
            n2,
            n3,
            inv_h[1],
            &mut out[1][range.clone()],
            false,
        );
        d3_plane(
            &data[range.clone()],
            n2,
            n3,
            inv_h[2],
            &mut out[2][range],
            false,
        );
    }
    let [a, b, c] = out;
    VectorField::from_components([
        ScalarField::from_vec(g, a)?,
        ScalarField::from_vec(g, b)?,
        ScalarField::from_vec(g, c)?,
    ])
}

/// Serial 8th-order divergence, accumulated as `∂1 v1 + ∂2 v2 + ∂3 v3`.
pub fn divergence(v: &VectorField) -> Result<ScalarField> {
    let g = *v.grid();
    check_grid(&g)?;
    let [n1, n2, n3] = g.dims();
    let pl = g.plane_len();
    let mut out = vec![0.0; g.len()];
    let (a, b, c) = (v.comp(0).values(), v.comp(1).values(), v.comp(2).values());
    for i in 0..n1 {
        let range = i * pl..(i + 1) * pl;
        d1_plane(
            periodic_planes(a, n1, pl, i),
            1.0 / g.h(0),
            &mut out[range.clone()],
        );
        d2_plane(
            &b[range.clone()],
            n2,
            n3,
            1.0 / g.h(1),
            &mut out[range.clone()],
            true,
        );
        d3_plane(
            &c[range.clone()],
            n2,
            n3,
            1.0 / g.h(2),
            &mut out[range],
            true,
        );
    }
    ScalarField::from_vec(g, out)
}

/// Checks the grid is large enough for the stencil (shared by all backends).
pub fn require_stencil_fit(grid: &Grid3) -> Result<()> {
    check_grid(grid)
}
