mod common;

use common::*;
use diffreg::engine::Engine;
use diffreg::field::{axpy, inner, norm2, ScalarField, VectorField};
use diffreg::interp::Degree;
use diffreg::synth::{syn_problem, syn_template, syn_velocity};
use diffreg::transport::{wrap, AdjointScheme, Transport, TransportConfig};
use diffreg::{Grid3, Real, TWO_PI};

fn transport(eng: &Engine) -> Transport<'_> {
    Transport::new(eng, TransportConfig::default())
}

fn transpose(eng: &Engine) -> Transport<'_> {
    Transport::new(
        eng,
        TransportConfig {
            adjoint: AdjointScheme::Transpose,
            ..Default::default()
        },
    )
}

fn periodic_diff(a: Real, b: Real) -> Real {
    let d = (a - b).rem_euclid(TWO_PI);
    d.min(TWO_PI - d)
}

#[test]
fn zero_velocity_short_circuits() {
    let eng = Engine::serial();
    let g = Grid3::cubic(16, 4).unwrap();
    let tr = transport(&eng);
    let ch = tr.characteristics(&VectorField::zeros(g)).unwrap();
    assert!(ch.is_zero());
    for (idx, x) in ch.departure().iter().enumerate() {
        let (i, j, k) = g.unindex(idx);
        assert_eq!(*x, g.coord(i, j, k));
    }
    let m0 = random_field(g, 1);
    let state = tr.solve_state(&ch, &m0).unwrap();
    let lam = tr.solve_adjoint(&ch, &m0).unwrap();
    let lt = tr.solve_inc_adjoint(&ch, &m0).unwrap();
    assert_eq!(state.m.len(), 5);
    for n in 0..=4 {
        assert_eq!(state.m.slice(n), &m0);
        assert_eq!(lam.slice(n), &m0);
        assert_eq!(lt.slice(n), &m0);
    }
    let mt = tr
        .solve_inc_state(&ch, &VectorField::zeros(g), &state)
        .unwrap();
    assert!(mt.slices().iter().all(|s| s.max_abs() == 0.0));
}

#[test]
fn constant_velocity_departure_is_exact() {
    let eng = Engine::serial();
    let g = Grid3::cubic(16, 3).unwrap();
    let c = 0.7;
    let v = VectorField::from_fn(g, |_, _, _| [c, 0.0, 0.0]);
    let ch = transport(&eng).characteristics(&v).unwrap();
    for (idx, x) in ch.departure().iter().enumerate() {
        let (i, j, k) = g.unindex(idx);
        let node = g.coord(i, j, k);
        assert!(periodic_diff(x[0], node[0] - g.dt() * c) < 1e-14);
        assert_eq!(x[1], node[1]);
        assert_eq!(x[2], node[2]);
    }
}

fn syn_vel(p: [Real; 3]) -> [Real; 3] {
    [
        p[2].sin() * p[1].cos() * p[1].sin(),
        p[0].sin() * p[2].cos() * p[2].sin(),
        p[1].sin() * p[0].cos() * p[0].sin(),
    ]
}

/// Worst per-coordinate gap between the computed departure points and the
/// analytic-velocity `reference` foot, over a sample of nodes.
fn departure_error(nt: usize, reference: impl Fn([Real; 3], Real) -> [Real; 3]) -> Real {
    let eng = Engine::serial();
    let g = Grid3::cubic(32, nt).unwrap();
    let ch = transport(&eng).characteristics(&syn_velocity(g)).unwrap();
    let mut worst: Real = 0.0;
    for idx in (0..g.len()).step_by(97) {
        let (i, j, k) = g.unindex(idx);
        let p = reference(g.coord(i, j, k), g.dt());
        for d in 0..3 {
            worst = worst.max(periodic_diff(p[d], ch.departure()[idx][d]));
        }
    }
    worst
}

fn euler_foot(x: [Real; 3], dt: Real) -> [Real; 3] {
    let sub = 1000;
    let tau = dt / sub as Real;
    let mut p = x;
    for _ in 0..sub {
        let u = syn_vel(p);
        for d in 0..3 {
            p[d] -= tau * u[d];
        }
    }
    p
}

fn heun_foot(x: [Real; 3], dt: Real) -> [Real; 3] {
    let u = syn_vel(x);
    let star = std::array::from_fn(|d| x[d] - dt * u[d]);
    let w = syn_vel(star);
    std::array::from_fn(|d| x[d] - 0.5 * dt * (u[d] + w[d]))
}

#[test]
fn departure_matches_analytic_heun_step() {
    // only the interpolated midpoint velocity differs
    let e = departure_error(4, heun_foot);
    assert!(e <= 1e-4, "departure error {e}");
}

#[test]
fn departure_error_is_third_order_per_step() {
    let e4 = departure_error(4, euler_foot);
    let e8 = departure_error(8, euler_foot);
    assert!(e4 <= 1.5e-3, "nt=4 error {e4}");
    assert!((6.0..=10.0).contains(&(e4 / e8)), "errors {e4} {e8}");
}

#[test]
#[ignore = "a single RK2 step with dt = 1/4 is 9.7e-4 from the exact foot even with the analytic velocity"]
fn departure_matches_fine_euler_trajectories_to_1e4() {
    let e = departure_error(4, euler_foot);
    assert!(e <= 1e-4, "departure error {e}");
}

#[test]
fn full_revolution_returns_template() {
    let eng = Engine::serial();
    let g = Grid3::cubic(16, 16).unwrap();
    let v = VectorField::from_fn(g, |_, _, _| [TWO_PI, 0.0, 0.0]);
    let tr = transport(&eng);
    let ch = tr.characteristics(&v).unwrap();
    let m0 = random_field(g, 2);
    let state = tr.solve_state(&ch, &m0).unwrap();
    assert!(max_diff(state.final_state().values(), m0.values()) <= 1e-12);
    // after one step everything moved one node along x1
    let one = state.m.slice(1);
    let mut worst: Real = 0.0;
    for idx in 0..g.len() {
        let (i, j, k) = g.unindex(idx);
        worst = worst.max((one.values()[idx] - m0.at((i + 15) % 16, j, k)).abs());
    }
    assert!(worst <= 1e-12);
}

#[test]
fn state_solve_is_deterministic() {
    let eng = Engine::serial();
    let g = Grid3::cubic(32, 4).unwrap();
    let run = || {
        let syn = syn_problem(&eng, g, Degree::Cubic).unwrap();
        let tr = transport(&eng);
        let half = VectorField::from_components(syn.v_true.comps().clone().map(|c| {
            let v = c.values().iter().map(|x| 0.5 * x).collect();
            ScalarField::from_vec(g, v).unwrap()
        }))
        .unwrap();
        let ch_half = tr.characteristics(&half).unwrap();
        let m = tr.solve_state(&ch_half, &syn.m0).unwrap();
        let r = axpy(-1.0, &syn.m1, m.final_state()).unwrap();
        0.5 * norm2(&r).powi(2)
    };
    let a = run();
    assert!(a > 0.0);
    assert_eq!(a.to_bits(), run().to_bits());
}

#[test]
fn transpose_adjoint_is_exact_dual_and_conservative() {
    let eng = Engine::serial();
    let g = Grid3::cubic(16, 4).unwrap();
    let tr = transpose(&eng);
    let v = smooth_vector(g, 3, 2);
    let ch = tr.characteristics(&v).unwrap();
    let m0 = random_field(g, 4);
    let lam1 = random_field(g, 5);
    let state = tr.solve_state(&ch, &m0).unwrap();
    let lam = tr.solve_adjoint(&ch, &lam1).unwrap();
    let lhs = inner(state.final_state(), &lam1).unwrap();
    let rhs = inner(&m0, lam.first()).unwrap();
    assert!(
        (lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0),
        "{lhs} vs {rhs}"
    );
    let mass = lam1.integral();
    for s in lam.slices() {
        assert!((s.integral() - mass).abs() <= 1e-12 * (1.0 + mass.abs()));
    }
}

fn shear(g: Grid3) -> VectorField {
    VectorField::from_fn(g, |_, y, _| [y.sin(), 0.0, 0.0])
}

#[test]
fn advective_adjoint_conserves_mass_for_divergence_free_flow() {
    let eng = Engine::serial();
    let g = Grid3::cubic(32, 8).unwrap();
    let tr = transport(&eng);
    let ch = tr.characteristics(&shear(g)).unwrap();
    let lam1 = ScalarField::from_fn(g, |x, y, z| 1.0 + 0.5 * (x + 2.0 * y).cos() * z.sin());
    let lam = tr.solve_adjoint(&ch, &lam1).unwrap();
    let m1 = lam1.integral();
    let rel = (lam.first().integral() - m1).abs() / m1.abs();
    assert!(rel <= 1e-3, "mass drift {rel}");
}

/// Max error of `λ(·,0)` against the exact solution of `∂_t λ + ∂_x(λ v) = 0`
/// with `v = (0.4 sin x1, 0, 0)`: `λ(x,0) = λ1(Φ(x)) Φ'(x)`, `Φ` the unit-time forward flow.
fn compressive_adjoint_error(tr: &Transport, n: usize) -> Real {
    let g = Grid3::new(n, 10, 10, n / 4).unwrap();
    let v = VectorField::from_fn(g, |x, _, _| [0.4 * x.sin(), 0.0, 0.0]);
    let lam1 = ScalarField::from_fn(g, |x, y, _| 1.0 + 0.3 * y.cos() + 0.2 * x.cos());
    let lam = tr
        .solve_adjoint(&tr.characteristics(&v).unwrap(), &lam1)
        .unwrap();
    let mut worst: Real = 0.0;
    for i in 0..n {
        let (mut x, mut log_j) = (g.coord(i, 0, 0)[0], 0.0);
        let steps = 4000;
        let tau = 1.0 / steps as Real;
        for _ in 0..steps {
            let xm = x + 0.5 * tau * 0.4 * x.sin();
            log_j += tau * 0.4 * xm.cos();
            x += tau * 0.4 * xm.sin();
        }
        let exact = (1.3 + 0.2 * x.cos()) * log_j.exp();
        worst = worst.max((lam.first().at(i, 0, 0) - exact).abs());
    }
    worst
}

#[test]
fn advective_adjoint_converges_for_compressive_flow() {
    // a sign error in the λ∇·v source leaves an O(1) discrepancy
    let eng = Engine::serial();
    let tr = transport(&eng);
    let e: Vec<Real> = [16, 32, 64]
        .iter()
        .map(|&n| compressive_adjoint_error(&tr, n))
        .collect();
    assert!(e[0] <= 5e-3, "errors {e:?}");
    assert!(e[1] < 0.5 * e[0] && e[2] < 0.5 * e[1], "errors {e:?}");
}

#[test]
fn transpose_adjoint_is_only_weakly_consistent_under_compression() {
    let eng = Engine::serial();
    let tr = transpose(&eng);
    let e: Vec<Real> = [16, 32]
        .iter()
        .map(|&n| compressive_adjoint_error(&tr, n))
        .collect();
    assert!(e.iter().all(|&x| x > 0.05), "errors {e:?}");
}

#[test]
fn incremental_state_without_flow_is_linear_in_time() {
    let eng = Engine::serial();
    let g = Grid3::cubic(16, 4).unwrap();
    let tr = transport(&eng);
    let ch = tr.characteristics(&VectorField::zeros(g)).unwrap();
    let m0 = smooth_field(g, 6, 3);
    let vt = random_vector(g, 7);
    let state = tr.solve_state(&ch, &m0).unwrap();
    let mt = tr.solve_inc_state(&ch, &vt, &state).unwrap();
    let s = vt.dot(&eng.gradient(&m0).unwrap()).unwrap();
    for n in 0..=4 {
        let t = n as Real * g.dt();
        let exp = ScalarField::from_vec(g, s.values().iter().map(|x| -t * x).collect()).unwrap();
        assert!(max_diff(mt.slice(n).values(), exp.values()) <= 1e-12);
    }
}

fn incremental_state_error(n: usize, nt: usize) -> Real {
    let eng = Engine::serial();
    let g = Grid3::cubic(n, nt).unwrap();
    let tr = transport(&eng);
    let m0 = syn_template(g);
    let v = syn_velocity(g);
    let vt = smooth_vector(g, 8, 2);
    let ch = tr.characteristics(&v).unwrap();
    let state = tr.solve_state(&ch, &m0).unwrap();
    let mt = tr.solve_inc_state(&ch, &vt, &state).unwrap();
    let eps = 1e-4;
    let at = |s: Real| {
        let w = axpy(s, &vt, &v).unwrap();
        tr.solve_state(&tr.characteristics(&w).unwrap(), &m0)
            .unwrap()
            .final_state()
            .clone()
    };
    let diff = axpy(-1.0, &at(-eps), &at(eps)).unwrap();
    let fd =
        ScalarField::from_vec(g, diff.values().iter().map(|x| x / (2.0 * eps)).collect()).unwrap();
    norm2(&axpy(-1.0, &fd, mt.last()).unwrap()) / norm2(&fd)
}

#[test]
fn incremental_state_converges_to_directional_derivative() {
    let e = [(32, 4), (32, 8), (64, 16)].map(|(n, nt)| incremental_state_error(n, nt));
    assert!(
        e[0] <= 1.2e-2 && e[1] < e[0] && e[2] < 0.25 * e[1],
        "errors {e:?}"
    );
    assert!(e[2] <= 1e-3, "errors {e:?}");
}

#[test]
#[ignore = "at 32^3 the FD gradient in the source differs from the derivative of the cubic interpolant by about 5e-3 relative, for any nt"]
fn incremental_state_matches_directional_derivative_at_32() {
    let e = incremental_state_error(32, 4);
    assert!(e <= 1e-3, "relative error {e}");
}

/// Error of the final state against the exact solution for `v = (a + b sin x1, 0, 0)`.
fn time_error(nt: usize) -> Real {
    let eng = Engine::serial();
    let g = Grid3::new(256, 10, 10, nt).unwrap();
    let (a, b) = (0.6, 0.4);
    let v = VectorField::from_fn(g, |x, _, _| [a + b * x.sin(), 0.0, 0.0]);
    let m0 = ScalarField::from_fn(g, |x, y, _| x.sin() + 0.1 * y.cos());
    let tr = transport(&eng);
    let fin = tr
        .solve_state(&tr.characteristics(&v).unwrap(), &m0)
        .unwrap();
    let f = |x: Real| -(a + b * x.sin());
    let mut worst: Real = 0.0;
    for i in 0..256 {
        // fine RK4 along the backward trajectory over unit time
        let mut x = g.coord(i, 0, 0)[0];
        let steps = 2000;
        let tau = 1.0 / steps as Real;
        for _ in 0..steps {
            let k1 = f(x);
            let k2 = f(x + 0.5 * tau * k1);
            let k3 = f(x + 0.5 * tau * k2);
            let k4 = f(x + tau * k3);
            x += tau / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        let exact = wrap(x).sin() + 0.1;
        worst = worst.max((fin.final_state().at(i, 0, 0) - exact).abs());
    }
    worst
}

#[test]
fn state_error_is_second_order_in_time() {
    let e: Vec<Real> = [2, 4, 8].iter().map(|&nt| time_error(nt)).collect();
    let r1 = e[0] / e[1];
    let r2 = e[1] / e[2];
    assert!(
        (3.0..=5.5).contains(&r1) && (3.0..=5.5).contains(&r2),
        "errors {e:?}"
    );
}
