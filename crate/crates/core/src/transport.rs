//! Semi-Lagrangian solvers for the state, adjoint, incremental state and
//! incremental adjoint transport equations with a stationary velocity.
//!
//! The state step is `m^{n+1} = P m^n`, where `P` interpolates at the RK2
//! departure points. The adjoint is stepped in advective form by default:
//! interpolation along forward characteristics plus a trapezoidal `λ∇·v` source.
//! The exact transpose `Pᵀ` (a conservative scatter) is dual to the state step to
//! rounding and conserves `Σλ`, but only converges in a weak sense when `v`
//! compresses. The incremental adjoint uses `Pᵀ` by default, which makes the
//! Gauss-Newton Hessian exactly `JᵀJ` for the discrete incremental state map `J`.

use serde::{Deserialize, Serialize};

use crate::engine::{Engine, Solve};
use crate::field::{axpy, ScalarField, TimeSeries, VectorField};
use crate::interp::{Degree, InterpPlan, QueryPoints};
use crate::{Error, Grid3, Real, Result, TWO_PI};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjointScheme {
    /// `λ^n = Pᵀ λ^{n+1}`.
    Transpose,
    /// Advective form `Dλ/Dτ = λ∇·v` along `dx/dτ = −v`, source by Heun's rule.
    Advective,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportConfig {
    pub degree: Degree,
    pub adjoint: AdjointScheme,
    pub inc_adjoint: AdjointScheme,
    /// Keep `∇m(·,t_n)` from the state solve instead of recomputing it per use.
    pub cache_gradient: bool,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            degree: Degree::Cubic,
            adjoint: AdjointScheme::Advective,
            inc_adjoint: AdjointScheme::Transpose,
            cache_gradient: false,
        }
    }
}

impl TransportConfig {
    pub fn needs_forward(&self) -> bool {
        self.adjoint == AdjointScheme::Advective || self.inc_adjoint == AdjointScheme::Advective
    }
}

/// Departure points of the backward trajectories over one time step.
#[derive(Debug, Clone)]
pub struct Characteristics {
    grid: Grid3,
    zero: bool,
    departure: Vec<[Real; 3]>,
    plan: InterpPlan,
    /// Forward trajectories and `∇·v`, only when an adjoint is advective.
    forward: Option<(InterpPlan, ScalarField)>,
}

impl Characteristics {
    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn departure(&self) -> &[[Real; 3]] {
        &self.departure
    }

    pub fn plan(&self) -> &InterpPlan {
        &self.plan
    }

    /// True when the velocity is identically zero (all solvers short-circuit).
    pub fn is_zero(&self) -> bool {
        self.zero
    }
}

/// State trajectory plus (optionally) its cached spatial gradients.
#[derive(Debug, Clone)]
pub struct StateSolution {
    pub m: TimeSeries,
    grad: Option<Vec<VectorField>>,
}

impl StateSolution {
    pub fn final_state(&self) -> &ScalarField {
        self.m.last()
    }

    pub fn has_cached_gradient(&self) -> bool {
        self.grad.is_some()
    }
}

fn node_coords(g: &Grid3) -> impl Iterator<Item = [Real; 3]> + '_ {
    (0..g.len()).map(move |idx| {
        let (i, j, k) = g.unindex(idx);
        g.coord(i, j, k)
    })
}

/// Points `x + s·dt·u(x)` over all nodes.
fn shifted(g: &Grid3, u: &VectorField, s: Real) -> Vec<[Real; 3]> {
    let (a, b, c) = (u.comp(0).values(), u.comp(1).values(), u.comp(2).values());
    node_coords(g)
        .enumerate()
        .map(|(idx, x)| [x[0] + s * a[idx], x[1] + s * b[idx], x[2] + s * c[idx]])
        .collect()
}

fn max_x1_shift(g: &Grid3, pts: &[[Real; 3]]) -> Real {
    node_coords(g)
        .zip(pts)
        .map(|(x, p)| (p[0] - x[0]).abs())
        .fold(0.0, Real::max)
}

pub struct Transport<'e> {
    eng: &'e Engine,
    cfg: TransportConfig,
}

impl<'e> Transport<'e> {
    pub fn new(eng: &'e Engine, cfg: TransportConfig) -> Self {
        Self { eng, cfg }
    }

    pub fn config(&self) -> &TransportConfig {
        &self.cfg
    }

    pub fn engine(&self) -> &Engine {
        self.eng
    }

    /// RK2 trajectory feet `X = x − dt/2 (v(x) + v(x − dt v(x)))` for every node.
    pub fn characteristics(&self, v: &VectorField) -> Result<Characteristics> {
        let g = *v.grid();
        if !v.is_finite() {
            return Err(Error::Numerical("velocity has non-finite entries".into()));
        }
        let zero = v.max_norm() == 0.0;
        let (departure, forward) = if zero {
            (node_coords(&g).collect(), None)
        } else {
            self.eng.count_solve(Solve::Characteristics);
            let back = self.trace(v, -1.0)?;
            let fwd = if self.cfg.needs_forward() {
                let pts = self.trace(v, 1.0)?;
                let shift = max_x1_shift(&g, &pts);
                let q = QueryPoints::new(g, pts)?.with_max_shift(shift);
                Some((
                    InterpPlan::new(&q, self.cfg.degree),
                    self.eng.divergence(v)?,
                ))
            } else {
                None
            };
            (back, fwd)
        };
        let shift = max_x1_shift(&g, &departure);
        if shift > std::f64::consts::PI as Real {
            return Err(Error::Numerical(format!(
                "displacement per time step {shift:.3} exceeds half the domain"
            )));
        }
        let q = QueryPoints::new(g, departure)?.with_max_shift(shift);
        let plan = InterpPlan::new(&q, self.cfg.degree);
        let departure = q.coords().to_vec();
        Ok(Characteristics {
            grid: g,
            zero,
            departure,
            plan,
            forward,
        })
    }

    /// Heun step along `dx/dt = dir·v`: `x + dir·dt/2 (v(x) + v(x + dir·dt·v(x)))`.
    fn trace(&self, v: &VectorField, dir: Real) -> Result<Vec<[Real; 3]>> {
        let g = *v.grid();
        let dt = g.dt();
        let pts = shifted(&g, v, dir * dt);
        let shift = max_x1_shift(&g, &pts);
        let stage = QueryPoints::new(g, pts)?.with_max_shift(shift);
        let plan = InterpPlan::new(&stage, self.cfg.degree);
        let vs = [
            self.eng.interpolate(v.comp(0), &plan)?,
            self.eng.interpolate(v.comp(1), &plan)?,
            self.eng.interpolate(v.comp(2), &plan)?,
        ];
        let half = dir * dt / 2.0;
        Ok(node_coords(&g)
            .enumerate()
            .map(|(idx, x)| {
                std::array::from_fn(|d| x[d] + half * (v.comp(d).values()[idx] + vs[d][idx]))
            })
            .collect())
    }

    /// `m(·,0) = m0`, `m^{n+1} = m^n(X)`.
    pub fn solve_state(&self, ch: &Characteristics, m0: &ScalarField) -> Result<StateSolution> {
        check(ch, m0)?;
        self.eng.count_solve(Solve::State);
        let g = ch.grid.with_nt(ch.grid.nt())?;
        let m = if ch.zero {
            TimeSeries::constant(g, m0)
        } else {
            let mut slices = Vec::with_capacity(g.nt() + 1);
            slices.push(m0.clone());
            for n in 0..g.nt() {
                let next = self.eng.interpolate_field(&slices[n], &ch.plan)?;
                slices.push(next);
            }
            TimeSeries::new(g, slices)?
        };
        let grad = if self.cfg.cache_gradient {
            Some(
                m.slices()
                    .iter()
                    .map(|s| self.eng.gradient(s))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok(StateSolution { m, grad })
    }

    /// `∇m(·,t_n)`, from the cache when present.
    pub fn state_gradient(&self, state: &StateSolution, n: usize) -> Result<VectorField> {
        match &state.grad {
            Some(gs) => Ok(gs[n].clone()),
            None => self.eng.gradient(state.m.slice(n)),
        }
    }

    fn backward(
        &self,
        ch: &Characteristics,
        final_cond: &ScalarField,
        scheme: AdjointScheme,
    ) -> Result<TimeSeries> {
        check(ch, final_cond)?;
        let g = ch.grid;
        if ch.zero {
            return Ok(TimeSeries::constant(g, final_cond));
        }
        let nt = g.nt();
        let mut slices = vec![final_cond.clone(); nt + 1];
        for n in (0..nt).rev() {
            slices[n] = match scheme {
                AdjointScheme::Transpose => self
                    .eng
                    .interpolate_transpose(slices[n + 1].values(), &ch.plan)?,
                AdjointScheme::Advective => self.advective_step(ch, &slices[n + 1])?,
            };
        }
        TimeSeries::new(g, slices)
    }

    fn advective_step(&self, ch: &Characteristics, next: &ScalarField) -> Result<ScalarField> {
        let (plan, div) = ch
            .forward
            .as_ref()
            .ok_or_else(|| Error::Parameter("characteristics lack forward trajectories".into()))?;
        let dt = ch.grid.dt();
        let lam = self.eng.interpolate(next, plan)?;
        let div_dep = self.eng.interpolate(div, plan)?;
        let d = div.values();
        let out = lam
            .iter()
            .zip(&div_dep)
            .zip(d)
            .map(|((&l, &dd), &dx)| {
                let pred = l * (1.0 + dt * dd);
                l + 0.5 * dt * (l * dd + pred * dx)
            })
            .collect();
        ScalarField::from_vec(ch.grid, out)
    }

    /// Adjoint of the state equation, stepped backward from `λ(·,1) = final_cond`.
    pub fn solve_adjoint(
        &self,
        ch: &Characteristics,
        final_cond: &ScalarField,
    ) -> Result<TimeSeries> {
        self.eng.count_solve(Solve::Adjoint);
        self.backward(ch, final_cond, self.cfg.adjoint)
    }

    /// Same equation as [`Transport::solve_adjoint`] (Gauss-Newton drops the coupling
    /// terms), stepped with `inc_adjoint`.
    pub fn solve_inc_adjoint(
        &self,
        ch: &Characteristics,
        final_cond: &ScalarField,
    ) -> Result<TimeSeries> {
        self.eng.count_solve(Solve::IncAdjoint);
        self.backward(ch, final_cond, self.cfg.inc_adjoint)
    }

    /// Linearized state: `m̃^{n+1} = P(m̃^n + dt/2 s^n) + dt/2 s^{n+1}`, `s = −ṽ·∇m`.
    pub fn solve_inc_state(
        &self,
        ch: &Characteristics,
        vt: &VectorField,
        state: &StateSolution,
    ) -> Result<TimeSeries> {
        let g = ch.grid;
        if !vt.grid().same_space(&g) {
            return Err(Error::Dimension(
                "incremental velocity on a different grid".into(),
            ));
        }
        self.eng.count_solve(Solve::IncState);
        let nt = g.nt();
        let dt = g.dt();
        let source = |n: usize| -> Result<ScalarField> {
            let gm = self.state_gradient(state, n)?;
            let mut s = vt.dot(&gm)?;
            s.values_mut().iter_mut().for_each(|x| *x = -*x);
            Ok(s)
        };
        let mut slices = Vec::with_capacity(nt + 1);
        slices.push(ScalarField::zeros(g));
        let mut s_prev = source(0)?;
        for n in 0..nt {
            let s_next = source(n + 1)?;
            let carried = axpy(0.5 * dt, &s_prev, &slices[n])?;
            let moved = if ch.zero {
                carried
            } else {
                self.eng.interpolate_field(&carried, &ch.plan)?
            };
            slices.push(axpy(0.5 * dt, &s_next, &moved)?);
            s_prev = s_next;
        }
        TimeSeries::new(g, slices)
    }

    /// Trapezoidal time integral `Σ_n w_n λ^n ∇m^n`.
    pub fn body_force(&self, lambda: &TimeSeries, state: &StateSolution) -> Result<VectorField> {
        let g = *lambda.grid();
        let nt = g.nt();
        let dt = g.dt();
        let mut acc = VectorField::zeros(g);
        for n in 0..=nt {
            let w = if n == 0 || n == nt { 0.5 * dt } else { dt };
            let gm = self.state_gradient(state, n)?;
            let lam = lambda.slice(n).values();
            for d in 0..3 {
                let out = acc.comp_mut(d).values_mut();
                for ((o, &l), &gv) in out.iter_mut().zip(lam).zip(gm.comp(d).values()) {
                    *o += w * l * gv;
                }
            }
        }
        Ok(acc)
    }
}

fn check(ch: &Characteristics, f: &ScalarField) -> Result<()> {
    if !ch.grid.same_space(f.grid()) {
        return Err(Error::Dimension(format!(
            "field on {} with characteristics for {}",
            f.grid(),
            ch.grid
        )));
    }
    Ok(())
}

/// Wraps a coordinate into `[0, 2π)`.
pub fn wrap(x: Real) -> Real {
    x.rem_euclid(TWO_PI)
}
