use std::ops::Range;

use crate::fd::HALF_WIDTH;
use crate::{Error, Grid3, Result};

/// Contiguous `x1` slabs in physical space and contiguous `x2` blocks in the
/// transposed spectral stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlabLayout {
    n: [usize; 3],
    x1: Vec<Range<usize>>,
    x2: Vec<Range<usize>>,
}

fn split(n: usize, p: usize) -> Vec<Range<usize>> {
    let base = n / p;
    let extra = n % p;
    let mut start = 0;
    (0..p)
        .map(|r| {
            let len = base + usize::from(r < extra);
            let range = start..start + len;
            start += len;
            range
        })
        .collect()
}

impl SlabLayout {
    pub fn new(grid: &Grid3, p: usize) -> Result<Self> {
        let n = grid.dims();
        if p == 0 {
            return Err(Error::Config("worker count must be at least 1".into()));
        }
        if n[0] / p < HALF_WIDTH {
            return Err(Error::Config(format!(
                "{p} workers leave x1 slabs narrower than the {HALF_WIDTH}-plane ghost layer on {grid}"
            )));
        }
        if n[1] < p {
            return Err(Error::Config(format!(
                "{p} workers cannot share {} x2 rows in the transposed stage",
                n[1]
            )));
        }
        Ok(Self {
            n,
            x1: split(n[0], p),
            x2: split(n[1], p),
        })
    }

    pub fn workers(&self) -> usize {
        self.x1.len()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.n
    }

    pub fn slab(&self, rank: usize) -> Range<usize> {
        self.x1[rank].clone()
    }

    pub fn block(&self, rank: usize) -> Range<usize> {
        self.x2[rank].clone()
    }

    /// Worker owning `x1` plane `i` (taken modulo `n1`).
    pub fn owner(&self, i: usize) -> usize {
        let i = i % self.n[0];
        self.x1
            .iter()
            .position(|r| r.contains(&i))
            .expect("slabs partition x1")
    }

    /// Global plane stored at position `t` of worker `rank`'s buffer padded by `halo`
    /// planes on each side.
    pub fn padded_plane(&self, rank: usize, halo: usize, t: usize) -> usize {
        let n1 = self.n[0];
        (self.x1[rank].start + n1 * (halo / n1 + 1) + t - halo) % n1
    }

    pub fn padded_len(&self, rank: usize, halo: usize) -> usize {
        self.x1[rank].len() + 2 * halo
    }

    /// Position of global plane `i` in `rank`'s padded buffer, counted from its first plane.
    pub fn padded_offset(&self, rank: usize, halo: usize, i: usize) -> usize {
        let n1 = self.n[0];
        let lo = self.padded_plane(rank, halo, 0);
        (i % n1 + n1 - lo) % n1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slabs_partition_and_balance() {
        let g = Grid3::new(34, 10, 8, 1).unwrap();
        let l = SlabLayout::new(&g, 4).unwrap();
        let lens: Vec<usize> = (0..4).map(|r| l.slab(r).len()).collect();
        assert_eq!(lens, vec![9, 9, 8, 8]);
        assert_eq!(l.slab(3).end, 34);
        assert_eq!(l.owner(17), 1);
        assert_eq!(l.owner(34), 0);
        assert_eq!((0..4).map(|r| l.block(r).len()).sum::<usize>(), 10);
    }

    #[test]
    fn infeasible_layouts_are_config_errors() {
        let g = Grid3::cubic(16, 1).unwrap();
        assert!(matches!(SlabLayout::new(&g, 5), Err(Error::Config(_))));
        assert!(SlabLayout::new(&g, 4).is_ok());
        assert!(matches!(SlabLayout::new(&g, 0), Err(Error::Config(_))));
    }

    #[test]
    fn padded_positions_wrap() {
        let g = Grid3::cubic(16, 1).unwrap();
        let l = SlabLayout::new(&g, 2).unwrap();
        assert_eq!(l.padded_plane(0, 4, 0), 12);
        assert_eq!(l.padded_plane(0, 4, 4), 0);
        assert_eq!(l.padded_plane(1, 4, 15), 3);
        assert_eq!(l.padded_offset(0, 4, 13), 1);
        assert_eq!(l.padded_offset(1, 20, 0), 12);
    }
}
