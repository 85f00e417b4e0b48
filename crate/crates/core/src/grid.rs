//! Periodic grid on `[0, 2π)³` with a uniform pseudo-time discretization.

use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result, TWO_PI};

/// Regular periodic grid with `n1 × n2 × n3` nodes and `nt` time steps on `[0, 1]`.
///
/// Values are stored row-major with `x1` outermost and `x3` innermost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid3 {
    n: [usize; 3],
    nt: usize,
}

impl Grid3 {
    pub fn new(n1: usize, n2: usize, n3: usize, nt: usize) -> Result<Self> {
        for (axis, &n) in [n1, n2, n3].iter().enumerate() {
            if n < 8 || n % 2 != 0 {
                return Err(Error::Dimension(format!(
                    "axis {} has {} nodes; need an even count >= 8",
                    axis + 1,
                    n
                )));
            }
        }
        if nt == 0 {
            return Err(Error::Dimension("need at least one time step".into()));
        }
        Ok(Self {
            n: [n1, n2, n3],
            nt,
        })
    }

    pub fn cubic(n: usize, nt: usize) -> Result<Self> {
        Self::new(n, n, n, nt)
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.n
    }

    #[inline]
    pub fn n(&self, axis: usize) -> usize {
        self.n[axis]
    }

    #[inline]
    pub fn nt(&self) -> usize {
        self.nt
    }

    /// Same spatial grid with a different number of time steps.
    pub fn with_nt(&self, nt: usize) -> Result<Self> {
        Self::new(self.n[0], self.n[1], self.n[2], nt)
    }

    #[inline]
    pub fn dt(&self) -> Real {
        1.0 / self.nt as Real
    }

    /// Spacing `2π / n_axis`.
    #[inline]
    pub fn h(&self, axis: usize) -> Real {
        TWO_PI / self.n[axis] as Real
    }

    pub fn spacing(&self) -> [Real; 3] {
        [self.h(0), self.h(1), self.h(2)]
    }

    /// Quadrature weight `h1·h2·h3` of the rectangle rule.
    #[inline]
    pub fn cell_volume(&self) -> Real {
        self.h(0) * self.h(1) * self.h(2)
    }

    /// Total number of nodes `N`.
    #[inline]
    pub fn len(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Nodes in one `x1 = const` plane.
    #[inline]
    pub fn plane_len(&self) -> usize {
        self.n[1] * self.n[2]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n[1] + j) * self.n[2] + k
    }

    #[inline]
    pub fn unindex(&self, idx: usize) -> (usize, usize, usize) {
        let k = idx % self.n[2];
        let rest = idx / self.n[2];
        (rest / self.n[1], rest % self.n[1], k)
    }

    /// Physical coordinates of node `(i, j, k)` in radians.
    #[inline]
    pub fn coord(&self, i: usize, j: usize, k: usize) -> [Real; 3] {
        [
            i as Real * self.h(0),
            j as Real * self.h(1),
            k as Real * self.h(2),
        ]
    }

    /// Half resolution per axis, same number of time steps.
    pub fn coarse(&self) -> Result<Self> {
        if self.n.iter().any(|n| n % 2 != 0) {
            return Err(Error::Dimension("coarsening needs even sizes".into()));
        }
        Self::new(self.n[0] / 2, self.n[1] / 2, self.n[2] / 2, self.nt)
    }

    /// Same spatial layout (ignores the time discretization).
    #[inline]
    pub fn same_space(&self, other: &Grid3) -> bool {
        self.n == other.n
    }
}

impl std::fmt::Display for Grid3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}x{}x{} (nt={})",
            self.n[0], self.n[1], self.n[2], self.nt
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_or_odd_sizes() {
        assert!(matches!(Grid3::new(6, 8, 8, 1), Err(Error::Dimension(_))));
        assert!(matches!(Grid3::new(8, 9, 8, 1), Err(Error::Dimension(_))));
        assert!(matches!(Grid3::new(8, 8, 8, 0), Err(Error::Dimension(_))));
        assert!(Grid3::new(8, 10, 12, 3).is_ok());
    }

    #[test]
    fn index_round_trip() {
        let g = Grid3::new(8, 10, 12, 1).unwrap();
        for idx in 0..g.len() {
            let (i, j, k) = g.unindex(idx);
            assert_eq!(g.index(i, j, k), idx);
        }
        assert_eq!(g.index(1, 2, 3), (10 + 2) * 12 + 3);
    }

    #[test]
    fn coarse_halves_each_axis() {
        let g = Grid3::new(32, 16, 64, 4).unwrap();
        let c = g.coarse().unwrap();
        assert_eq!(c.dims(), [16, 8, 32]);
        assert_eq!(c.nt(), 4);
        assert!(Grid3::cubic(8, 1).unwrap().coarse().is_err());
    }
}
