//! Real-to-complex 3D transforms and the diagonal spectral operators built on them:
//! the vector Laplacian `A` and its inverse, Leray projection, and the
//! restriction / prolongation / high-pass triple used by the two-level preconditioner.
//!
//! The forward transform is unnormalized; the inverse carries the `1/N` factor.
//! Spectra are stored in the half-space layout `n1 × n2 × (n3/2 + 1)`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use num_complex::Complex as C;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

use crate::engine::Engine;
use crate::field::{ScalarField, VectorField};
use crate::{Complex, Error, Grid3, Real, Result};

/// Half-space coefficients of a real 3D transform.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: Grid3,
    data: Vec<Complex>,
}

impl SpectralField {
    pub fn zeros(grid: Grid3) -> Self {
        Self {
            grid,
            data: vec![Complex::new(0.0, 0.0); spectral_len(&grid)],
        }
    }

    pub fn from_vec(grid: Grid3, data: Vec<Complex>) -> Result<Self> {
        if data.len() != spectral_len(&grid) {
            return Err(Error::Dimension(format!(
                "{} coefficients for a {} spectrum",
                data.len(),
                grid
            )));
        }
        Ok(Self { grid, data })
    }

    #[inline]
    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    /// Number of stored coefficients along `x3` (`n3/2 + 1`).
    #[inline]
    pub fn nk(&self) -> usize {
        self.grid.n(2) / 2 + 1
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.grid.n(1) + j) * self.nk() + k
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> Complex {
        self.data[self.index(i, j, k)]
    }

    pub fn coeffs(&self) -> &[Complex] {
        &self.data
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex] {
        &mut self.data
    }

    /// Multiplies every coefficient by `symbol(k1, k2, k3)` (signed wavenumbers).
    pub fn apply_symbol(&mut self, symbol: impl Fn([i64; 3]) -> Real) {
        let [n1, n2, _] = self.grid.dims();
        let nk = self.nk();
        let mut idx = 0;
        for i in 0..n1 {
            let k1 = wavenumber(i, n1);
            for j in 0..n2 {
                let k2 = wavenumber(j, n2);
                for k in 0..nk {
                    let s = symbol([k1, k2, k as i64]);
                    self.data[idx] *= s;
                    idx += 1;
                }
            }
        }
    }
}

#[inline]
pub fn spectral_len(grid: &Grid3) -> usize {
    grid.n(0) * grid.n(1) * (grid.n(2) / 2 + 1)
}

/// Signed wavenumber for storage index `idx` on an axis with `n` nodes.
/// The Nyquist index `n/2` maps to `+n/2`.
#[inline]
pub fn wavenumber(idx: usize, n: usize) -> i64 {
    if idx <= n / 2 {
        idx as i64
    } else {
        idx as i64 - n as i64
    }
}

/// Wavenumber used by first-derivative symbols: zero on the Nyquist index so that
/// odd operators keep real fields real.
#[inline]
pub fn derivative_wavenumber(k: i64, n: usize) -> i64 {
    if k.unsigned_abs() as usize * 2 == n {
        0
    } else {
        k
    }
}

/// Symbol of the vector Laplacian used by `βA` and its inverse: `|k|²`, with `1` at `k = 0`.
#[inline]
pub fn regop_symbol(k: [i64; 3]) -> Real {
    let s = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as Real;
    if s == 0.0 {
        1.0
    } else {
        s
    }
}

/// Symbol of `-Δ` (zero at `k = 0`); gives the H¹ seminorm.
#[inline]
pub fn laplacian_symbol(k: [i64; 3]) -> Real {
    (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as Real
}

/// Serial transform plan for one grid size.
///
/// The transform runs in two stages so the slab-parallel path can reuse them
/// verbatim: `x2–x3` plane transforms (real-to-complex along `x3`, complex along
/// `x2`) followed by complex transforms along `x1`.
pub struct Fft3 {
    n: [usize; 3],
    r2c: Arc<dyn RealToComplex<Real>>,
    c2r: Arc<dyn ComplexToReal<Real>>,
    fwd2: Arc<dyn Fft<Real>>,
    inv2: Arc<dyn Fft<Real>>,
    fwd1: Arc<dyn Fft<Real>>,
    inv1: Arc<dyn Fft<Real>>,
}

impl std::fmt::Debug for Fft3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft3").field("n", &self.n).finish()
    }
}

impl Fft3 {
    pub fn new(n: [usize; 3]) -> Self {
        let mut rp = RealFftPlanner::<Real>::new();
        let mut cp = FftPlanner::<Real>::new();
        Self {
            n,
            r2c: rp.plan_fft_forward(n[2]),
            c2r: rp.plan_fft_inverse(n[2]),
            fwd2: cp.plan_fft_forward(n[1]),
            inv2: cp.plan_fft_inverse(n[1]),
            fwd1: cp.plan_fft_forward(n[0]),
            inv1: cp.plan_fft_inverse(n[0]),
        }
    }

    #[inline]
    pub fn nk(&self) -> usize {
        self.n[2] / 2 + 1
    }

    pub fn forward(&self, f: &ScalarField) -> SpectralField {
        let grid = *f.grid();
        let mut out = vec![C::new(0.0, 0.0); spectral_len(&grid)];
        self.planes_forward(f.values(), &mut out);
        self.transform_x1(&mut out, self.n[1], false);
        SpectralField { grid, data: out }
    }

    pub fn inverse(&self, s: &SpectralField) -> ScalarField {
        let grid = *s.grid();
        let mut work = s.data.clone();
        self.transform_x1(&mut work, self.n[1], true);
        let mut out = vec![0.0; grid.len()];
        self.planes_inverse(&mut work, &mut out);
        ScalarField::from_vec(grid, out).expect("sized by grid")
    }

    /// Plane stage of the forward transform for a stack of `x1` planes:
    /// `input` is `[planes][n2][n3]` real, `out` is `[planes][n2][nk]` complex.
    pub fn planes_forward(&self, input: &[Real], out: &mut [Complex]) {
        let [_, n2, n3] = self.n;
        let nk = self.nk();
        let planes = input.len() / (n2 * n3);
        debug_assert_eq!(out.len(), planes * n2 * nk);
        let mut row = self.r2c.make_input_vec();
        let mut scratch = self.r2c.make_scratch_vec();
        for (src, dst) in input.chunks_exact(n3).zip(out.chunks_exact_mut(nk)) {
            row.copy_from_slice(src);
            self.r2c
                .process_with_scratch(&mut row, dst, &mut scratch)
                .expect("buffer sizes from plan");
        }
        let mut cols = vec![C::new(0.0, 0.0); n2 * nk];
        for plane in out.chunks_exact_mut(n2 * nk) {
            transpose(plane, &mut cols, n2, nk);
            self.fwd2.process(&mut cols);
            transpose(&cols, plane, nk, n2);
        }
    }

    /// Inverse of [`Fft3::planes_forward`] including the `1/N` normalization.
    /// `input` is consumed as scratch.
    pub fn planes_inverse(&self, input: &mut [Complex], out: &mut [Real]) {
        let [_, n2, n3] = self.n;
        let nk = self.nk();
        let scale = 1.0 / (self.n[0] * n2 * n3) as Real;
        let mut cols = vec![C::new(0.0, 0.0); n2 * nk];
        for plane in input.chunks_exact_mut(n2 * nk) {
            transpose(plane, &mut cols, n2, nk);
            self.inv2.process(&mut cols);
            transpose(&cols, plane, nk, n2);
        }
        let mut scratch = self.c2r.make_scratch_vec();
        for (src, dst) in input.chunks_exact_mut(nk).zip(out.chunks_exact_mut(n3)) {
            // c2r needs exactly real DC and Nyquist entries
            src[0].im = 0.0;
            src[nk - 1].im = 0.0;
            self.c2r
                .process_with_scratch(src, dst, &mut scratch)
                .expect("buffer sizes from plan");
        }
        out.iter_mut().for_each(|v| *v *= scale);
    }

    /// Complex transforms along `x1` for data laid out `[n1][nj][nk]`, where `nj`
    /// is the (possibly partial) number of `x2` rows present.
    pub fn transform_x1(&self, data: &mut [Complex], nj: usize, inverse: bool) {
        let n1 = self.n[0];
        let cols_per_plane = nj * self.nk();
        debug_assert_eq!(data.len(), n1 * cols_per_plane);
        let mut cols = vec![C::new(0.0, 0.0); data.len()];
        transpose(data, &mut cols, n1, cols_per_plane);
        if inverse {
            self.inv1.process(&mut cols);
        } else {
            self.fwd1.process(&mut cols);
        }
        transpose(&cols, data, cols_per_plane, n1);
    }
}

/// `dst[c][r] = src[r][c]` for a `rows × cols` row-major block.
fn transpose(src: &[Complex], dst: &mut [Complex], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Per-size plan cache shared by a backend; plans are immutable once built.
#[derive(Default)]
pub struct PlanCache {
    plans: Mutex<HashMap<[usize; 3], Arc<Fft3>>>,
}

impl PlanCache {
    pub fn get(&self, n: [usize; 3]) -> Arc<Fft3> {
        let mut plans = self.plans.lock().expect("plan cache poisoned");
        plans
            .entry(n)
            .or_insert_with(|| Arc::new(Fft3::new(n)))
            .clone()
    }
}

/// L² inner product evaluated from two spectra (Parseval with the forward
/// transform's `N` scaling and half-space multiplicities).
pub fn spectral_inner(a: &SpectralField, b: &SpectralField) -> Result<Real> {
    if !a.grid.same_space(&b.grid) {
        return Err(Error::Dimension("spectra on different grids".into()));
    }
    let n3 = a.grid.n(2);
    let nk = a.nk();
    let mut acc = 0.0;
    for (idx, (x, y)) in a.data.iter().zip(&b.data).enumerate() {
        let k = idx % nk;
        let mult = if k == 0 || 2 * k == n3 { 1.0 } else { 2.0 };
        acc += mult * (x.re * y.re + x.im * y.im);
    }
    let n = a.grid.len() as Real;
    Ok(acc * a.grid.cell_volume() / n)
}

/// Whether a signed wavenumber survives restriction to half resolution:
/// strictly inside the coarse band, coarse Nyquist excluded.
#[inline]
fn in_coarse_band(k: i64, n_fine: usize) -> bool {
    (k.unsigned_abs() as usize) * 4 < n_fine
}

/// Truncates a fine spectrum to the coarse band and rescales so grid values are preserved.
pub fn restrict_spectrum(fine: &SpectralField) -> Result<SpectralField> {
    let fg = fine.grid;
    let cg = fg.coarse()?;
    let mut coarse = SpectralField::zeros(cg);
    let scale = cg.len() as Real / fg.len() as Real;
    let [cn1, cn2, cn3] = cg.dims();
    let cnk = coarse.nk();
    for ci in 0..cn1 {
        let k1 = wavenumber(ci, cn1);
        if !in_coarse_band(k1, fg.n(0)) {
            continue;
        }
        let fi = k1.rem_euclid(fg.n(0) as i64) as usize;
        for cj in 0..cn2 {
            let k2 = wavenumber(cj, cn2);
            if !in_coarse_band(k2, fg.n(1)) {
                continue;
            }
            let fj = k2.rem_euclid(fg.n(1) as i64) as usize;
            for ck in 0..cnk {
                if !in_coarse_band(ck as i64, fg.n(2)) {
                    continue;
                }
                let _ = cn3;
                let v = fine.at(fi, fj, ck) * scale;
                let idx = coarse.index(ci, cj, ck);
                coarse.data[idx] = v;
            }
        }
    }
    Ok(coarse)
}

/// Zero-pads a coarse spectrum onto `fine_grid` (inverse scaling of [`restrict_spectrum`]).
pub fn prolong_spectrum(coarse: &SpectralField, fine_grid: Grid3) -> Result<SpectralField> {
    let cg = coarse.grid;
    if !fine_grid.coarse()?.same_space(&cg) {
        return Err(Error::Dimension(format!(
            "{} is not the half-resolution grid of {}",
            cg, fine_grid
        )));
    }
    let mut fine = SpectralField::zeros(fine_grid);
    let scale = fine_grid.len() as Real / cg.len() as Real;
    let [cn1, cn2, _] = cg.dims();
    let cnk = coarse.nk();
    for ci in 0..cn1 {
        let k1 = wavenumber(ci, cn1);
        if !in_coarse_band(k1, fine_grid.n(0)) {
            continue;
        }
        let fi = k1.rem_euclid(fine_grid.n(0) as i64) as usize;
        for cj in 0..cn2 {
            let k2 = wavenumber(cj, cn2);
            if !in_coarse_band(k2, fine_grid.n(1)) {
                continue;
            }
            let fj = k2.rem_euclid(fine_grid.n(1) as i64) as usize;
            for ck in 0..cnk {
                if !in_coarse_band(ck as i64, fine_grid.n(2)) {
                    continue;
                }
                let idx = fine.index(fi, fj, ck);
                fine.data[idx] = coarse.at(ci, cj, ck) * scale;
            }
        }
    }
    Ok(fine)
}

/// Zeroes exactly the modes [`restrict_spectrum`] keeps.
pub fn high_pass_spectrum(s: &mut SpectralField) -> Result<()> {
    let g = s.grid;
    g.coarse()?;
    let [n1, n2, n3] = g.dims();
    s.apply_symbol(|k| {
        let low = in_coarse_band(k[0], n1) && in_coarse_band(k[1], n2) && in_coarse_band(k[2], n3);
        if low {
            0.0
        } else {
            1.0
        }
    });
    Ok(())
}

/// Leray projection `v ← v − k (k·v)/|k|²` on three spectra in place.
pub fn leray_spectra(s: &mut [SpectralField; 3]) {
    let g = s[0].grid;
    let [n1, n2, n3] = g.dims();
    let nk = s[0].nk();
    let mut idx = 0;
    for i in 0..n1 {
        let k1 = derivative_wavenumber(wavenumber(i, n1), n1) as Real;
        for j in 0..n2 {
            let k2 = derivative_wavenumber(wavenumber(j, n2), n2) as Real;
            for k in 0..nk {
                let k3 = derivative_wavenumber(k as i64, n3) as Real;
                let kk = k1 * k1 + k2 * k2 + k3 * k3;
                if kk > 0.0 {
                    let dot = s[0].data[idx] * k1 + s[1].data[idx] * k2 + s[2].data[idx] * k3;
                    let c = dot / kk;
                    s[0].data[idx] -= c * k1;
                    s[1].data[idx] -= c * k2;
                    s[2].data[idx] -= c * k3;
                }
                idx += 1;
            }
        }
    }
}

/// Spectrum of `∇·v` divided by `i` (Nyquist lines dropped).
pub fn divergence_spectrum(s: &[SpectralField; 3]) -> SpectralField {
    let g = s[0].grid;
    let [n1, n2, n3] = g.dims();
    let nk = s[0].nk();
    let mut out = SpectralField::zeros(g);
    let mut idx = 0;
    for i in 0..n1 {
        let k1 = derivative_wavenumber(wavenumber(i, n1), n1) as Real;
        for j in 0..n2 {
            let k2 = derivative_wavenumber(wavenumber(j, n2), n2) as Real;
            for k in 0..nk {
                let k3 = derivative_wavenumber(k as i64, n3) as Real;
                out.data[idx] = s[0].data[idx] * k1 + s[1].data[idx] * k2 + s[2].data[idx] * k3;
                idx += 1;
            }
        }
    }
    out
}

fn check_beta(beta: Real) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "regularization weight must be positive, got {beta}"
        )))
    }
}

fn forward3(eng: &Engine, v: &VectorField) -> Result<[SpectralField; 3]> {
    Ok([
        eng.fft_forward(v.comp(0))?,
        eng.fft_forward(v.comp(1))?,
        eng.fft_forward(v.comp(2))?,
    ])
}

fn inverse3(eng: &Engine, s: &[SpectralField; 3]) -> Result<VectorField> {
    VectorField::from_components([
        eng.fft_inverse(&s[0])?,
        eng.fft_inverse(&s[1])?,
        eng.fft_inverse(&s[2])?,
    ])
}

fn apply_vector_symbol(
    eng: &Engine,
    v: &VectorField,
    symbol: impl Fn([i64; 3]) -> Real + Copy,
) -> Result<VectorField> {
    let mut s = forward3(eng, v)?;
    for c in s.iter_mut() {
        c.apply_symbol(symbol);
    }
    inverse3(eng, &s)
}

/// `βA v`.
pub fn apply_regop(eng: &Engine, v: &VectorField, beta: Real) -> Result<VectorField> {
    check_beta(beta)?;
    apply_vector_symbol(eng, v, move |k| beta * regop_symbol(k))
}

/// `(βA)⁻¹ w`.
pub fn apply_inv_regop(eng: &Engine, w: &VectorField, beta: Real) -> Result<VectorField> {
    check_beta(beta)?;
    apply_vector_symbol(eng, w, move |k| 1.0 / (beta * regop_symbol(k)))
}

/// `-βΔ v` (the gradient of `β/2 · reg(v)`; constants are in its null space).
pub fn apply_laplacian(eng: &Engine, v: &VectorField, beta: Real) -> Result<VectorField> {
    check_beta(beta)?;
    apply_vector_symbol(eng, v, move |k| beta * laplacian_symbol(k))
}

/// H¹ seminorm `Σ_i ⟨∇v_i, ∇v_i⟩`, evaluated spectrally.
pub fn reg_seminorm(eng: &Engine, v: &VectorField) -> Result<Real> {
    let mut acc = 0.0;
    for c in v.comps() {
        let s = eng.fft_forward(c)?;
        let mut ks = s.clone();
        ks.apply_symbol(laplacian_symbol);
        acc += spectral_inner(&s, &ks)?;
    }
    Ok(acc)
}

/// Orthogonal projection onto discretely divergence-free fields.
pub fn leray_project(eng: &Engine, v: &VectorField) -> Result<VectorField> {
    let mut s = forward3(eng, v)?;
    leray_spectra(&mut s);
    inverse3(eng, &s)
}

/// Spectral restriction to half resolution per axis.
pub fn restrict(eng: &Engine, f: &ScalarField) -> Result<ScalarField> {
    if f.grid().dims().iter().any(|n| n % 2 != 0) {
        return Err(Error::Dimension("restriction needs even grid sizes".into()));
    }
    let s = eng.fft_forward(f)?;
    eng.fft_inverse(&restrict_spectrum(&s)?)
}

/// Spectral prolongation (zero padding) onto `fine_grid`.
pub fn prolong(eng: &Engine, f: &ScalarField, fine_grid: Grid3) -> Result<ScalarField> {
    let s = eng.fft_forward(f)?;
    eng.fft_inverse(&prolong_spectrum(&s, fine_grid)?)
}

/// Removes the modes representable on the half-resolution grid.
pub fn high_pass(eng: &Engine, f: &ScalarField) -> Result<ScalarField> {
    let mut s = eng.fft_forward(f)?;
    high_pass_spectrum(&mut s)?;
    eng.fft_inverse(&s)
}

/// Componentwise [`restrict`].
pub fn restrict_vector(eng: &Engine, v: &VectorField) -> Result<VectorField> {
    VectorField::from_components([
        restrict(eng, v.comp(0))?,
        restrict(eng, v.comp(1))?,
        restrict(eng, v.comp(2))?,
    ])
}
