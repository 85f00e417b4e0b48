//! Slab-decomposed kernels. Every call runs one thread per worker; a worker
//! sees only its own slab of the inputs and obtains everything else through its
//! [`Comm`] endpoint.

use std::sync::Mutex;
use std::time::Instant;

use crate::engine::Backend;
use crate::fd::{self, HALF_WIDTH};
use crate::field::{ScalarField, VectorField};
use crate::interp::{self, eval_stencil, scatter_stencil, InterpPlan, Stencil};
use crate::spectral::{PlanCache, SpectralField};
use crate::{Complex, Error, Grid3, Real, Result};

use super::layout::SlabLayout;
use super::mailbox::{run_workers, Category, Comm, CommStats, ExchangeStrategy, Mailbox};

const TAG_GHOST: u32 = 1;
const TAG_TRANSPOSE: u32 = 2;
const TAG_SCATTER: u32 = 3;
const TAG_VALUES: u32 = 4;
const TAG_FOLD: u32 = 5;

/// Slab-parallel backend over `p` in-process workers.
pub struct SlabBackend {
    p: usize,
    mailbox: Mailbox,
    halo_override: Option<usize>,
    plans: PlanCache,
    stats: Mutex<CommStats>,
}

impl SlabBackend {
    pub fn new(p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::Config("worker count must be at least 1".into()));
        }
        Ok(Self {
            p,
            mailbox: Mailbox::new(p),
            halo_override: None,
            plans: PlanCache::default(),
            stats: Mutex::new(CommStats::default()),
        })
    }

    pub fn with_strategy(mut self, strategy: ExchangeStrategy) -> Self {
        self.mailbox = self.mailbox.with_strategy(strategy);
        self
    }

    /// Fixes the interpolation halo width (in planes) instead of sizing it from
    /// the displacement; it is still raised to at least the interpolation degree.
    pub fn with_halo_override(mut self, halo: Option<usize>) -> Self {
        self.halo_override = halo;
        self
    }

    /// Replaces the mailbox by one that refuses all traffic.
    pub fn with_mailbox_disabled(mut self) -> Self {
        self.mailbox = Mailbox::disabled(self.p);
        self
    }

    pub fn layout(&self, grid: &Grid3) -> Result<SlabLayout> {
        SlabLayout::new(grid, self.p)
    }

    fn run<T: Send>(&self, work: impl Fn(&mut Comm) -> Result<T> + Sync) -> Result<Vec<T>> {
        let mut local = CommStats::default();
        let out = run_workers(&self.mailbox, &mut local, work);
        self.stats.lock().expect("stats poisoned").add(&local);
        out
    }

    fn note(&self, f: impl FnOnce(&mut CommStats)) {
        f(&mut self.stats.lock().expect("stats poisoned"));
    }

    /// Interpolation halo in planes for a plan on `layout`.
    pub fn interp_halo(&self, plan: &InterpPlan) -> Result<usize> {
        let g = plan.grid();
        let n1 = g.n(0);
        let degree = plan.degree().order();
        if let Some(h) = self.halo_override {
            return Ok(h.max(degree));
        }
        let Some(u) = plan.max_shift() else {
            return Ok(degree);
        };
        if u > crate::PI {
            return Err(Error::Config(format!(
                "x1 displacement {u:.3} exceeds half the domain; the halo would wrap onto itself"
            )));
        }
        let cells = (u / g.h(0) - 1e-9).ceil().max(0.0) as usize;
        Ok((cells + degree).min(n1))
    }
}

fn to_reals(c: &[Complex], out: &mut Vec<Real>) {
    out.reserve(2 * c.len());
    for z in c {
        out.push(z.re);
        out.push(z.im);
    }
}

fn from_reals(r: &[Real], out: &mut [Complex]) {
    for (z, pair) in out.iter_mut().zip(r.chunks_exact(2)) {
        *z = Complex::new(pair[0], pair[1]);
    }
}

/// Gathers the padded buffer `[slab − halo, slab + halo)` of the calling worker.
/// Every worker sends the planes it owns that fall in a peer's padded range, in
/// the peer's buffer order; wrapped duplicates are sent as often as they occur.
fn gather_padded(
    comm: &mut Comm,
    layout: &SlabLayout,
    local: &[Real],
    plane_len: usize,
    halo: usize,
    cat: Category,
) -> Result<Vec<Real>> {
    let me = comm.rank();
    let p = layout.workers();
    let slab = layout.slab(me);
    for q in (0..p).filter(|&q| q != me) {
        let mut msg = Vec::new();
        for t in 0..layout.padded_len(q, halo) {
            let g = layout.padded_plane(q, halo, t);
            if slab.contains(&g) {
                let i = g - slab.start;
                msg.extend_from_slice(&local[i * plane_len..(i + 1) * plane_len]);
            }
        }
        if !msg.is_empty() {
            comm.send(q, TAG_GHOST, msg, cat)?;
        }
    }
    let len = layout.padded_len(me, halo);
    let owners: Vec<usize> = (0..len)
        .map(|t| layout.owner(layout.padded_plane(me, halo, t)))
        .collect();
    let mut incoming: Vec<Option<(Vec<Real>, usize)>> = vec![None; p];
    for q in 0..p {
        if q != me && owners.contains(&q) {
            incoming[q] = Some((comm.recv(q, TAG_GHOST, cat)?, 0));
        }
    }
    let mut buf = vec![0.0; len * plane_len];
    for (t, &o) in owners.iter().enumerate() {
        let dst = &mut buf[t * plane_len..(t + 1) * plane_len];
        if o == me {
            let i = layout.padded_plane(me, halo, t) - slab.start;
            dst.copy_from_slice(&local[i * plane_len..(i + 1) * plane_len]);
        } else {
            let (msg, pos) = incoming[o].as_mut().expect("received above");
            dst.copy_from_slice(&msg[*pos..*pos + plane_len]);
            *pos += plane_len;
        }
    }
    Ok(buf)
}

fn slab_slices<'a>(data: &'a [Real], layout: &SlabLayout, plane_len: usize) -> Vec<&'a [Real]> {
    (0..layout.workers())
        .map(|r| {
            let s = layout.slab(r);
            &data[s.start * plane_len..s.end * plane_len]
        })
        .collect()
}

/// Point range of worker `rank` for a plan with `len` points on `layout`.
fn point_range(layout: &SlabLayout, rank: usize, len: usize) -> std::ops::Range<usize> {
    let n1 = layout.dims()[0];
    let s = layout.slab(rank);
    s.start * len / n1..s.end * len / n1
}

fn encode_stencil(st: &Stencil, width: usize, out: &mut Vec<Real>) {
    for a in 0..3 {
        out.push(st.start[a] as Real);
    }
    for a in 0..3 {
        out.extend_from_slice(&st.w[a][..width]);
    }
}

fn decode_stencil(r: &[Real], width: usize) -> Stencil {
    let mut st = Stencil {
        start: [r[0] as u32, r[1] as u32, r[2] as u32],
        w: [[0.0; 4]; 3],
    };
    for a in 0..3 {
        st.w[a][..width].copy_from_slice(&r[3 + a * width..3 + (a + 1) * width]);
    }
    st
}

/// Whether a stencil starting at plane `start` fits in `rank`'s padded buffer,
/// returning its offset there.
fn padded_fit(
    layout: &SlabLayout,
    rank: usize,
    halo: usize,
    start: usize,
    width: usize,
) -> Option<usize> {
    let off = layout.padded_offset(rank, halo, start);
    (off + width <= layout.padded_len(rank, halo)).then_some(off)
}

impl SlabBackend {
    fn dist_fft_forward(&self, f: &ScalarField) -> Result<SpectralField> {
        let grid = *f.grid();
        let layout = self.layout(&grid)?;
        let fft = self.plans.get(grid.dims());
        let [n1, n2, n3] = grid.dims();
        let nk = fft.nk();
        let pl = n2 * n3;
        let inputs = slab_slices(f.values(), &layout, pl);
        let blocks = self.run(|comm| {
            let me = comm.rank();
            let slab = layout.slab(me);
            let nb = slab.len();
            let mut planes = vec![Complex::new(0.0, 0.0); nb * n2 * nk];
            fft.planes_forward(inputs[me], &mut planes);
            let t = Instant::now();
            let sends = (0..layout.workers())
                .map(|q| {
                    let rows = layout.block(q);
                    let mut msg = Vec::with_capacity(2 * nb * rows.len() * nk);
                    for i in 0..nb {
                        let base = i * n2 * nk;
                        to_reals(
                            &planes[base + rows.start * nk..base + rows.end * nk],
                            &mut msg,
                        );
                    }
                    msg
                })
                .collect();
            comm.stats_mut().scatter_mpi_buffer_seconds += t.elapsed().as_secs_f64();
            let recvd = comm.all_to_all(TAG_TRANSPOSE, sends, Category::Transpose)?;
            let rows = layout.block(me);
            let nj = rows.len();
            let mut data = vec![Complex::new(0.0, 0.0); n1 * nj * nk];
            for (s, msg) in recvd.iter().enumerate() {
                let from = layout.slab(s);
                from_reals(msg, &mut data[from.start * nj * nk..from.end * nj * nk]);
            }
            fft.transform_x1(&mut data, nj, false);
            Ok(data)
        })?;
        self.note(|s| s.fft_calls += 1);
        let mut out = SpectralField::zeros(grid);
        let coeffs = out.coeffs_mut();
        for (r, data) in blocks.iter().enumerate() {
            let rows = layout.block(r);
            let nj = rows.len();
            for i in 0..n1 {
                let dst = i * n2 * nk + rows.start * nk;
                coeffs[dst..dst + nj * nk].copy_from_slice(&data[i * nj * nk..(i + 1) * nj * nk]);
            }
        }
        Ok(out)
    }

    fn dist_fft_inverse(&self, s: &SpectralField) -> Result<ScalarField> {
        let grid = *s.grid();
        let layout = self.layout(&grid)?;
        let fft = self.plans.get(grid.dims());
        let [n1, n2, n3] = grid.dims();
        let nk = fft.nk();
        let coeffs = s.coeffs();
        // x2 blocks handed to the workers
        let inputs: Vec<Vec<Complex>> = (0..layout.workers())
            .map(|r| {
                let rows = layout.block(r);
                let mut b = Vec::with_capacity(n1 * rows.len() * nk);
                for i in 0..n1 {
                    b.extend_from_slice(
                        &coeffs[i * n2 * nk + rows.start * nk..i * n2 * nk + rows.end * nk],
                    );
                }
                b
            })
            .collect();
        let slabs = self.run(|comm| {
            let me = comm.rank();
            let rows = layout.block(me);
            let nj = rows.len();
            let mut data = inputs[me].clone();
            fft.transform_x1(&mut data, nj, true);
            let t = Instant::now();
            let sends = (0..layout.workers())
                .map(|q| {
                    let planes = layout.slab(q);
                    let mut msg = Vec::with_capacity(2 * planes.len() * nj * nk);
                    to_reals(
                        &data[planes.start * nj * nk..planes.end * nj * nk],
                        &mut msg,
                    );
                    msg
                })
                .collect();
            comm.stats_mut().scatter_mpi_buffer_seconds += t.elapsed().as_secs_f64();
            let recvd = comm.all_to_all(TAG_TRANSPOSE, sends, Category::Transpose)?;
            let slab = layout.slab(me);
            let nb = slab.len();
            let mut planes = vec![Complex::new(0.0, 0.0); nb * n2 * nk];
            for (q, msg) in recvd.iter().enumerate() {
                let cols = layout.block(q);
                let njq = cols.len();
                for i in 0..nb {
                    let dst = i * n2 * nk + cols.start * nk;
                    from_reals(
                        &msg[2 * i * njq * nk..2 * (i + 1) * njq * nk],
                        &mut planes[dst..dst + njq * nk],
                    );
                }
            }
            let mut out = vec![0.0; nb * n2 * n3];
            fft.planes_inverse(&mut planes, &mut out);
            Ok(out)
        })?;
        self.note(|s| s.fft_calls += 1);
        ScalarField::from_vec(grid, slabs.concat())
    }

    fn dist_gradient(&self, f: &ScalarField) -> Result<VectorField> {
        let grid = *f.grid();
        fd::require_stencil_fit(&grid)?;
        let layout = self.layout(&grid)?;
        let [_, n2, n3] = grid.dims();
        let pl = n2 * n3;
        let inv_h = [1.0 / grid.h(0), 1.0 / grid.h(1), 1.0 / grid.h(2)];
        let inputs = slab_slices(f.values(), &layout, pl);
        let slabs = self.run(|comm| {
            let me = comm.rank();
            let local = inputs[me];
            let buf = gather_padded(comm, &layout, local, pl, HALF_WIDTH, Category::FdGhost)?;
            let nb = layout.slab(me).len();
            let mut out = [vec![0.0; nb * pl], vec![0.0; nb * pl], vec![0.0; nb * pl]];
            for i in 0..nb {
                let r = i * pl..(i + 1) * pl;
                fd::d1_plane(
                    fd::padded_planes(&buf, pl, i),
                    inv_h[0],
                    &mut out[0][r.clone()],
                );
                fd::d2_plane(
                    &local[r.clone()],
                    n2,
                    n3,
                    inv_h[1],
                    &mut out[1][r.clone()],
                    false,
                );
                fd::d3_plane(&local[r.clone()], n2, n3, inv_h[2], &mut out[2][r], false);
            }
            Ok(out)
        })?;
        self.note(|s| s.fd_calls += 1);
        let mut comps: [Vec<Real>; 3] = Default::default();
        for slab in slabs {
            for (c, part) in comps.iter_mut().zip(slab) {
                c.extend(part);
            }
        }
        let [a, b, c] = comps;
        VectorField::from_components([
            ScalarField::from_vec(grid, a)?,
            ScalarField::from_vec(grid, b)?,
            ScalarField::from_vec(grid, c)?,
        ])
    }

    fn dist_divergence(&self, v: &VectorField) -> Result<ScalarField> {
        let grid = *v.grid();
        fd::require_stencil_fit(&grid)?;
        let layout = self.layout(&grid)?;
        let [_, n2, n3] = grid.dims();
        let pl = n2 * n3;
        let inputs: Vec<[&[Real]; 3]> = {
            let parts = [0, 1, 2].map(|d| slab_slices(v.comp(d).values(), &layout, pl));
            (0..layout.workers())
                .map(|r| [parts[0][r], parts[1][r], parts[2][r]])
                .collect()
        };
        let slabs = self.run(|comm| {
            let me = comm.rank();
            let [a, b, c] = inputs[me];
            // only the x1 component needs neighbour planes
            let buf = gather_padded(comm, &layout, a, pl, HALF_WIDTH, Category::FdGhost)?;
            let nb = layout.slab(me).len();
            let mut out = vec![0.0; nb * pl];
            for i in 0..nb {
                let r = i * pl..(i + 1) * pl;
                fd::d1_plane(
                    fd::padded_planes(&buf, pl, i),
                    1.0 / grid.h(0),
                    &mut out[r.clone()],
                );
                fd::d2_plane(
                    &b[r.clone()],
                    n2,
                    n3,
                    1.0 / grid.h(1),
                    &mut out[r.clone()],
                    true,
                );
                fd::d3_plane(&c[r.clone()], n2, n3, 1.0 / grid.h(2), &mut out[r], true);
            }
            Ok(out)
        })?;
        self.note(|s| s.fd_calls += 1);
        ScalarField::from_vec(grid, slabs.concat())
    }

    fn dist_interpolate(&self, f: &ScalarField, plan: &InterpPlan) -> Result<Vec<Real>> {
        let grid = *f.grid();
        if !grid.same_space(plan.grid()) {
            // the serial routine reports the mismatch
            return interp::interpolate(f, plan);
        }
        let layout = self.layout(&grid)?;
        let halo = self.interp_halo(plan)?;
        let n = grid.dims();
        let pl = grid.plane_len();
        let width = plan.degree().width();
        let rec = 3 + 3 * width;
        let inputs = slab_slices(f.values(), &layout, pl);
        let all = plan.stencils();
        let parts = self.run(|comm| {
            let me = comm.rank();
            let p = layout.workers();
            let buf = gather_padded(comm, &layout, inputs[me], pl, halo, Category::Ghost)?;
            let mine = &all[point_range(&layout, me, all.len())];

            let t = Instant::now();
            let mut values = vec![0.0; mine.len()];
            let mut foreign: Vec<Vec<usize>> = vec![Vec::new(); p];
            let mut sends: Vec<Vec<Real>> = vec![Vec::new(); p];
            let mut local_pts = Vec::with_capacity(mine.len());
            for (idx, st) in mine.iter().enumerate() {
                let start = st.start[0] as usize;
                match padded_fit(&layout, me, halo, start, width) {
                    Some(off) => local_pts.push((idx, off)),
                    None => {
                        let o = layout.owner(start);
                        foreign[o].push(idx);
                        encode_stencil(st, width, &mut sends[o]);
                    }
                }
            }
            comm.stats_mut().scatter_mpi_buffer_seconds += t.elapsed().as_secs_f64();
            comm.stats_mut().foreign_points += foreign.iter().map(|f| f.len() as u64).sum::<u64>();
            let requests = comm.all_to_all(TAG_SCATTER, sends, Category::Scatter)?;

            let t = Instant::now();
            for &(idx, off) in &local_pts {
                values[idx] = eval_stencil(&mine[idx], width, n, &buf, |a| (off + a) * pl);
            }
            let mut replies: Vec<Vec<Real>> = vec![Vec::new(); p];
            for (q, req) in requests.iter().enumerate() {
                for r in req.chunks_exact(rec) {
                    let st = decode_stencil(r, width);
                    let off = padded_fit(&layout, me, halo, st.start[0] as usize, width)
                        .expect("owner halo covers the stencil");
                    replies[q].push(eval_stencil(&st, width, n, &buf, |a| (off + a) * pl));
                }
            }
            comm.stats_mut().interp_kernel_seconds += t.elapsed().as_secs_f64();

            let answers = comm.all_to_all(TAG_VALUES, replies, Category::Interp)?;
            for (o, ans) in answers.iter().enumerate() {
                for (&idx, &val) in foreign[o].iter().zip(ans) {
                    values[idx] = val;
                }
            }
            Ok(values)
        })?;
        self.note(|s| s.interp_calls += 1);
        Ok(parts.concat())
    }

    fn dist_interpolate_transpose(
        &self,
        values: &[Real],
        plan: &InterpPlan,
    ) -> Result<ScalarField> {
        if values.len() != plan.len() {
            return interp::interpolate_transpose(values, plan);
        }
        let grid = *plan.grid();
        let layout = self.layout(&grid)?;
        let halo = self.interp_halo(plan)?;
        let n = grid.dims();
        let pl = grid.plane_len();
        let width = plan.degree().width();
        let rec = 4 + 3 * width;
        let all = plan.stencils();
        let slabs = self.run(|comm| {
            let me = comm.rank();
            let p = layout.workers();
            let range = point_range(&layout, me, all.len());
            let mine = &all[range.clone()];
            let vals = &values[range];
            let len = layout.padded_len(me, halo);
            let mut buf = vec![0.0; len * pl];

            let t = Instant::now();
            let mut sends: Vec<Vec<Real>> = vec![Vec::new(); p];
            let mut nforeign = 0u64;
            for (st, &v) in mine.iter().zip(vals) {
                let start = st.start[0] as usize;
                match padded_fit(&layout, me, halo, start, width) {
                    Some(off) => scatter_stencil(st, width, n, v, &mut buf, |a| (off + a) * pl),
                    None => {
                        let o = layout.owner(start);
                        encode_stencil(st, width, &mut sends[o]);
                        sends[o].push(v);
                        nforeign += 1;
                    }
                }
            }
            comm.stats_mut().scatter_mpi_buffer_seconds += t.elapsed().as_secs_f64();
            comm.stats_mut().foreign_points += nforeign;
            let requests = comm.all_to_all(TAG_SCATTER, sends, Category::Scatter)?;
            let t = Instant::now();
            for req in &requests {
                for r in req.chunks_exact(rec) {
                    let st = decode_stencil(r, width);
                    let off = padded_fit(&layout, me, halo, st.start[0] as usize, width)
                        .expect("owner halo covers the stencil");
                    scatter_stencil(&st, width, n, r[rec - 1], &mut buf, |a| (off + a) * pl);
                }
            }
            comm.stats_mut().interp_kernel_seconds += t.elapsed().as_secs_f64();

            // Fold halo planes back to their owners; owners add them in worker order.
            let slab = layout.slab(me);
            let center = halo..halo + slab.len();
            let mut folds: Vec<Vec<Real>> = vec![Vec::new(); p];
            for t in (0..len).filter(|t| !center.contains(t)) {
                let o = layout.owner(layout.padded_plane(me, halo, t));
                folds[o].extend_from_slice(&buf[t * pl..(t + 1) * pl]);
            }
            let recvd = comm.all_to_all(TAG_FOLD, folds, Category::Ghost)?;
            let mut out = buf[center.start * pl..center.end * pl].to_vec();
            for (s, msg) in recvd.iter().enumerate() {
                let mut pos = 0;
                for t in 0..layout.padded_len(s, halo) {
                    if (halo..halo + layout.slab(s).len()).contains(&t) {
                        continue;
                    }
                    let g = layout.padded_plane(s, halo, t);
                    if slab.contains(&g) {
                        let i = g - slab.start;
                        for (d, v) in out[i * pl..(i + 1) * pl]
                            .iter_mut()
                            .zip(&msg[pos..pos + pl])
                        {
                            *d += v;
                        }
                        pos += pl;
                    }
                }
            }
            Ok(out)
        })?;
        self.note(|s| s.transpose_calls += 1);
        ScalarField::from_vec(grid, slabs.concat())
    }
}

impl Backend for SlabBackend {
    fn name(&self) -> String {
        format!("slab(p={})", self.p)
    }

    fn workers(&self) -> usize {
        self.p
    }

    fn fft_forward(&self, f: &ScalarField) -> Result<SpectralField> {
        if self.p == 1 {
            return Ok(self.plans.get(f.grid().dims()).forward(f));
        }
        self.dist_fft_forward(f)
    }

    fn fft_inverse(&self, s: &SpectralField) -> Result<ScalarField> {
        if self.p == 1 {
            return Ok(self.plans.get(s.grid().dims()).inverse(s));
        }
        self.dist_fft_inverse(s)
    }

    fn gradient(&self, f: &ScalarField) -> Result<VectorField> {
        if self.p == 1 {
            return fd::gradient(f);
        }
        self.dist_gradient(f)
    }

    fn divergence(&self, v: &VectorField) -> Result<ScalarField> {
        if self.p == 1 {
            return fd::divergence(v);
        }
        self.dist_divergence(v)
    }

    fn interpolate(&self, f: &ScalarField, plan: &InterpPlan) -> Result<Vec<Real>> {
        if self.p == 1 {
            return interp::interpolate(f, plan);
        }
        self.dist_interpolate(f, plan)
    }

    fn interpolate_transpose(&self, values: &[Real], plan: &InterpPlan) -> Result<ScalarField> {
        if self.p == 1 {
            return interp::interpolate_transpose(values, plan);
        }
        self.dist_interpolate_transpose(values, plan)
    }

    fn comm_stats(&self) -> Option<CommStats> {
        Some(self.stats.lock().expect("stats poisoned").clone())
    }

    fn reset_comm_stats(&self) {
        *self.stats.lock().expect("stats poisoned") = CommStats::default();
    }
}
