use diffreg::field::{ScalarField, VectorField};
use diffreg::interp::{self, Degree, InterpPlan, QueryPoints};
use diffreg::parallel::{run_workers, Category, CommStats, ExchangeStrategy, Mailbox, SlabBackend};
use diffreg::spectral::Fft3;
use diffreg::{Backend, Error, Grid3, Real, TWO_PI};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_field(g: Grid3, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ScalarField::from_vec(g, (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn random_vector(g: Grid3, seed: u64) -> VectorField {
    VectorField::from_components([
        random_field(g, seed),
        random_field(g, seed + 1),
        random_field(g, seed + 2),
    ])
    .unwrap()
}

fn node(g: Grid3, idx: usize) -> [Real; 3] {
    let (i, j, k) = g.unindex(idx);
    g.coord(i, j, k)
}

fn max_rel(a: &[Real], b: &[Real]) -> Real {
    let scale = b.iter().fold(0.0 as Real, |m, x| m.max(x.abs()));
    a.iter()
        .zip(b)
        .fold(0.0 as Real, |m, (x, y)| m.max((x - y).abs()))
        / scale
}

#[test]
fn fft_matches_serial_and_round_trips() {
    let g = Grid3::cubic(64, 1).unwrap();
    let f = random_field(g, 1);
    let serial = Fft3::new(g.dims()).forward(&f);
    for p in [2, 4] {
        let b = SlabBackend::new(p).unwrap();
        let s = b.fft_forward(&f).unwrap();
        let scale = serial
            .coeffs()
            .iter()
            .fold(0.0 as Real, |m, z| m.max(z.norm()));
        let err = s
            .coeffs()
            .iter()
            .zip(serial.coeffs())
            .fold(0.0 as Real, |m, (a, b)| m.max((a - b).norm()));
        assert!(err / scale <= 1e-12, "p={p}: {err}");
        let back = b.fft_inverse(&s).unwrap();
        assert!(max_rel(back.values(), f.values()) <= 1e-12);
        let serial_back = Fft3::new(g.dims()).inverse(&serial);
        assert!(max_rel(back.values(), serial_back.values()) <= 1e-12);
    }
}

#[test]
fn fft_on_uneven_slabs() {
    let g = Grid3::new(24, 10, 12, 1).unwrap();
    let f = random_field(g, 5);
    let serial = Fft3::new(g.dims()).forward(&f);
    let b = SlabBackend::new(4).unwrap();
    let s = b.fft_forward(&f).unwrap();
    for (a, c) in s.coeffs().iter().zip(serial.coeffs()) {
        assert!((a - c).norm() <= 1e-12 * (1.0 + c.norm()));
    }
    let back = b.fft_inverse(&s).unwrap();
    assert!(max_rel(back.values(), f.values()) <= 1e-12);
}

#[test]
fn single_worker_is_bitwise_serial() {
    let g = Grid3::cubic(16, 1).unwrap();
    let f = random_field(g, 2);
    let b = SlabBackend::new(1).unwrap();
    assert_eq!(b.fft_forward(&f).unwrap(), Fft3::new(g.dims()).forward(&f));
    assert_eq!(b.gradient(&f).unwrap(), diffreg::fd::gradient(&f).unwrap());
}

#[test]
fn fd_is_bitwise_serial() {
    for (n, p) in [(16, 2), (16, 4), (36, 4), (32, 3)] {
        let g = Grid3::new(n, 10, 12, 1).unwrap();
        let f = random_field(g, n as u64);
        let v = random_vector(g, 9);
        let b = SlabBackend::new(p).unwrap();
        assert_eq!(
            b.gradient(&f).unwrap(),
            diffreg::fd::gradient(&f).unwrap(),
            "p={p}"
        );
        assert_eq!(
            b.divergence(&v).unwrap(),
            diffreg::fd::divergence(&v).unwrap(),
            "p={p}"
        );
    }
}

#[test]
fn narrow_slabs_are_rejected() {
    let g = Grid3::cubic(12, 1).unwrap();
    let f = random_field(g, 3);
    let b = SlabBackend::new(4).unwrap();
    assert!(matches!(b.gradient(&f), Err(Error::Config(_))));
    assert!(matches!(b.fft_forward(&f), Err(Error::Config(_))));
}

#[test]
fn ghost_volume_matches_slab_formula() {
    let g = Grid3::new(32, 10, 12, 1).unwrap();
    let f = random_field(g, 4);
    let v = random_vector(g, 4);
    let mu = std::mem::size_of::<Real>() as u64;
    for p in [2, 4] {
        let b = SlabBackend::new(p).unwrap();
        b.gradient(&f).unwrap();
        b.divergence(&v).unwrap();
        let st = b.comm_stats().unwrap();
        let per_worker_call = 2 * 4 * 10 * 12 * mu;
        assert_eq!(st.fd_calls, 2);
        assert_eq!(st.fd_ghost_bytes, 2 * p as u64 * per_worker_call);
    }
}

fn random_plan(g: Grid3, m: usize, seed: u64, degree: Degree) -> InterpPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = (0..m)
        .map(|_| std::array::from_fn(|_| rng.gen_range(-TWO_PI..2.0 * TWO_PI)))
        .collect();
    InterpPlan::new(&QueryPoints::new(g, coords).unwrap(), degree)
}

#[test]
fn interpolation_matches_serial_for_random_points() {
    let g = Grid3::new(32, 16, 12, 1).unwrap();
    let f = random_field(g, 6);
    for degree in [Degree::Linear, Degree::Cubic] {
        let plan = random_plan(g, 5000, 7, degree);
        let serial = interp::interpolate(&f, &plan).unwrap();
        for p in [2, 4] {
            let b = SlabBackend::new(p).unwrap();
            let d = b.interpolate(&f, &plan).unwrap();
            assert!(max_rel(&d, &serial) <= 1e-14, "p={p}");
            assert!(b.comm_stats().unwrap().foreign_points > 0);
        }
    }
}

#[test]
fn on_node_local_points_are_bitwise_serial() {
    let g = Grid3::cubic(16, 1).unwrap();
    let f = random_field(g, 8);
    let coords = (0..g.len()).map(|i| node(g, i)).collect();
    let q = QueryPoints::new(g, coords).unwrap().with_max_shift(0.0);
    let plan = InterpPlan::new(&q, Degree::Cubic);
    let b = SlabBackend::new(4).unwrap();
    let d = b.interpolate(&f, &plan).unwrap();
    assert_eq!(d, f.values());
    assert_eq!(b.comm_stats().unwrap().foreign_points, 0);
}

/// Every point of worker r sits in the slab of worker (r + 1) mod p, far
/// outside the halo; the values must come back in query order.
#[test]
fn adversarial_scatter_restores_order() {
    let g = Grid3::cubic(32, 1).unwrap();
    let f = ScalarField::from_fn(g, |x, y, z| (x + 2.0 * y).sin() + z.cos());
    let p = 4;
    let n1 = 32;
    let h = g.h(0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let coords: Vec<[Real; 3]> = (0..g.len())
        .map(|idx| {
            let i = idx / g.plane_len();
            let owner = i / (n1 / p);
            let target = ((owner + 1) % p) * (n1 / p) + rng.gen_range(2..(n1 / p) - 2);
            [
                target as Real * h + rng.gen_range(0.0..h),
                rng.gen_range(0.0..TWO_PI),
                rng.gen_range(0.0..TWO_PI),
            ]
        })
        .collect();
    let plan = InterpPlan::new(&QueryPoints::new(g, coords).unwrap(), Degree::Cubic);
    let serial = interp::interpolate(&f, &plan).unwrap();
    let b = SlabBackend::new(p).unwrap().with_halo_override(Some(3));
    let d = b.interpolate(&f, &plan).unwrap();
    assert!(max_rel(&d, &serial) <= 1e-14);
    assert_eq!(b.comm_stats().unwrap().foreign_points, g.len() as u64);
    let values: Vec<Real> = (0..g.len()).map(|i| (i as Real * 0.37).sin()).collect();
    let t_serial = interp::interpolate_transpose(&values, &plan).unwrap();
    let t_dist = b.interpolate_transpose(&values, &plan).unwrap();
    assert!(max_rel(t_dist.values(), t_serial.values()) <= 1e-13);
}

#[test]
fn transpose_matches_serial_with_sized_halo() {
    let g = Grid3::new(32, 16, 12, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    // displaced nodes as in a transport step
    let coords: Vec<[Real; 3]> = (0..g.len())
        .map(|i| {
            let x = node(g, i);
            [
                x[0] + rng.gen_range(-0.5..0.5),
                x[1] + rng.gen_range(-0.5..0.5),
                x[2],
            ]
        })
        .collect();
    let q = QueryPoints::new(g, coords).unwrap().with_max_shift(0.5);
    let values: Vec<Real> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for degree in [Degree::Linear, Degree::Cubic] {
        let plan = InterpPlan::new(&q, degree);
        let serial = interp::interpolate_transpose(&values, &plan).unwrap();
        for p in [2, 4] {
            let b = SlabBackend::new(p).unwrap();
            let d = b.interpolate_transpose(&values, &plan).unwrap();
            assert!(max_rel(d.values(), serial.values()) <= 1e-13);
            assert_eq!(b.comm_stats().unwrap().foreign_points, 0);
        }
    }
}

#[test]
fn oversized_displacement_is_config_error() {
    let g = Grid3::cubic(16, 1).unwrap();
    let f = random_field(g, 1);
    let coords = (0..g.len()).map(|i| node(g, i)).collect();
    let q = QueryPoints::new(g, coords).unwrap().with_max_shift(4.0);
    let plan = InterpPlan::new(&q, Degree::Cubic);
    let b = SlabBackend::new(2).unwrap();
    assert!(matches!(b.interpolate(&f, &plan), Err(Error::Config(_))));
}

#[test]
fn disabled_mailbox_breaks_every_kernel() {
    let g = Grid3::cubic(16, 1).unwrap();
    let f = random_field(g, 1);
    let b = SlabBackend::new(2).unwrap().with_mailbox_disabled();
    assert!(matches!(b.fft_forward(&f), Err(Error::Comm(_))));
    assert!(matches!(b.gradient(&f), Err(Error::Comm(_))));
    let plan = random_plan(g, 100, 1, Degree::Cubic);
    assert!(matches!(b.interpolate(&f, &plan), Err(Error::Comm(_))));
    // p = 1 needs no messages
    let one = SlabBackend::new(1).unwrap().with_mailbox_disabled();
    assert!(one.gradient(&f).is_ok());
}

#[test]
fn strategy_changes_counters_not_results() {
    let g = Grid3::cubic(32, 1).unwrap();
    let f = random_field(g, 3);
    let a = SlabBackend::new(4)
        .unwrap()
        .with_strategy(ExchangeStrategy::AllToAll);
    let b = SlabBackend::new(4)
        .unwrap()
        .with_strategy(ExchangeStrategy::PointToPoint);
    assert_eq!(a.fft_forward(&f).unwrap(), b.fft_forward(&f).unwrap());
    assert_eq!(a.comm_stats().unwrap().p2p_exchanges, 0);
    assert_eq!(b.comm_stats().unwrap().alltoall_exchanges, 0);
    assert_eq!(
        a.comm_stats().unwrap().fft_transpose_bytes,
        b.comm_stats().unwrap().fft_transpose_bytes
    );
}

/// Randomized worker progress around repeated collectives; a deadlock would
/// surface as a receive timeout.
#[test]
fn collectives_survive_adversarial_scheduling() {
    let mb = Mailbox::new(4).with_timeout(std::time::Duration::from_secs(20));
    for trial in 0..1000u64 {
        let mut stats = CommStats::default();
        let out = run_workers(&mb, &mut stats, |c| {
            let me = c.rank();
            let mut rng = ChaCha8Rng::seed_from_u64(trial * 31 + me as u64);
            let mut acc = 0.0;
            for round in 0..3u32 {
                for _ in 0..rng.gen_range(0..3) {
                    std::thread::yield_now();
                }
                if rng.gen_bool(0.05) {
                    std::thread::sleep(std::time::Duration::from_micros(50));
                }
                let blocks = (0..4)
                    .map(|q| vec![(me * 4 + q) as Real + round as Real])
                    .collect();
                let got = c.all_to_all(round, blocks, Category::Transpose)?;
                acc += got.iter().map(|b| b[0]).sum::<Real>();
            }
            Ok(acc)
        })
        .unwrap_or_else(|e| panic!("trial {trial}: {e}"));
        for (me, acc) in out.iter().enumerate() {
            let expect: Real = (0..3)
                .map(|r| {
                    (0..4)
                        .map(|s| (s * 4 + me) as Real + r as Real)
                        .sum::<Real>()
                })
                .sum();
            assert_eq!(*acc, expect);
        }
    }
}

#[test]
fn full_solve_matches_serial() {
    use diffreg::optim::{beta_continuation, RegistrationConfig};
    use diffreg::synth::syn_problem;
    use diffreg::Engine;

    let g = Grid3::cubic(32, 4).unwrap();
    let cfg = RegistrationConfig {
        beta_target: 1e-2,
        ..Default::default()
    };
    let serial = Engine::serial();
    let syn = syn_problem(&serial, g, Degree::Cubic).unwrap();
    let (v_s, rs) = beta_continuation(&serial, &syn.m0, &syn.m1, &cfg, None).unwrap();
    let par = Engine::new(Box::new(SlabBackend::new(4).unwrap()));
    let (v_p, rp) = beta_continuation(&par, &syn.m0, &syn.m1, &cfg, None).unwrap();

    assert_eq!(rs.gn_iterations, rp.gn_iterations);
    assert_eq!(rs.pcg_iterations, rp.pcg_iterations);
    assert_eq!(rs.inner_iterations, rp.inner_iterations);
    assert_eq!(rs.counters, rp.counters);
    assert_eq!(rs.tally, rp.tally);
    let rel = |a: Real, b: Real| (a - b).abs() / b.abs().max(Real::MIN_POSITIVE);
    assert!(rel(rp.mismatch_final, rs.mismatch_final) <= 1e-8);
    assert!(rel(rp.grad_rel_final, rs.grad_rel_final) <= 1e-8);
    assert!(rel(rp.mism_rel, rs.mism_rel) <= 1e-8);
    for d in 0..3 {
        assert!(max_rel(v_p.comp(d).values(), v_s.comp(d).values()) <= 1e-8);
    }
    let comm = rp.comm.expect("slab backend reports communication");
    assert!(comm.messages > 0 && comm.fft_calls > 0 && comm.interp_calls > 0);
    assert!(rs.comm.is_none());
}
