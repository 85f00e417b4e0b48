//! In-process message passing between slab workers.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

/// Exchange size above which the collective is issued as a single all-to-all
/// instead of ordered point-to-point rounds.
pub const DEFAULT_ALLTOALL_THRESHOLD: usize = 512 * 1024;

/// How [`Comm::all_to_all`] schedules its messages. Results never depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExchangeStrategy {
    /// All-to-all above `threshold_bytes` per worker, point-to-point rounds below.
    Auto {
        threshold_bytes: usize,
    },
    AllToAll,
    PointToPoint,
}

impl Default for ExchangeStrategy {
    fn default() -> Self {
        ExchangeStrategy::Auto {
            threshold_bytes: DEFAULT_ALLTOALL_THRESHOLD,
        }
    }
}

/// Traffic class used for the byte and time counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    /// FD ghost planes.
    FdGhost,
    /// Interpolation halo planes and the fold-back of halo contributions.
    Ghost,
    /// Query stencils sent to the owning worker.
    Scatter,
    /// Interpolated values returned to the requesting worker.
    Interp,
    /// Spectral transpose.
    Transpose,
}

/// Communication volume and time per category, summed over workers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CommStats {
    pub fd_ghost_bytes: u64,
    pub fd_ghost_seconds: f64,
    pub ghost_comm_bytes: u64,
    pub ghost_comm_seconds: f64,
    pub scatter_comm_bytes: u64,
    pub scatter_comm_seconds: f64,
    pub interp_comm_bytes: u64,
    pub interp_comm_seconds: f64,
    pub interp_kernel_seconds: f64,
    pub scatter_mpi_buffer_seconds: f64,
    pub fft_transpose_bytes: u64,
    pub fft_transpose_seconds: f64,
    pub messages: u64,
    pub alltoall_exchanges: u64,
    pub p2p_exchanges: u64,
    /// Query points evaluated by a worker other than the requesting one.
    pub foreign_points: u64,
    pub fd_calls: u64,
    pub interp_calls: u64,
    pub transpose_calls: u64,
    pub fft_calls: u64,
}

impl CommStats {
    pub fn add(&mut self, o: &CommStats) {
        self.fd_ghost_bytes += o.fd_ghost_bytes;
        self.fd_ghost_seconds += o.fd_ghost_seconds;
        self.ghost_comm_bytes += o.ghost_comm_bytes;
        self.ghost_comm_seconds += o.ghost_comm_seconds;
        self.scatter_comm_bytes += o.scatter_comm_bytes;
        self.scatter_comm_seconds += o.scatter_comm_seconds;
        self.interp_comm_bytes += o.interp_comm_bytes;
        self.interp_comm_seconds += o.interp_comm_seconds;
        self.interp_kernel_seconds += o.interp_kernel_seconds;
        self.scatter_mpi_buffer_seconds += o.scatter_mpi_buffer_seconds;
        self.fft_transpose_bytes += o.fft_transpose_bytes;
        self.fft_transpose_seconds += o.fft_transpose_seconds;
        self.messages += o.messages;
        self.alltoall_exchanges += o.alltoall_exchanges;
        self.p2p_exchanges += o.p2p_exchanges;
        self.foreign_points += o.foreign_points;
        self.fd_calls += o.fd_calls;
        self.interp_calls += o.interp_calls;
        self.transpose_calls += o.transpose_calls;
        self.fft_calls += o.fft_calls;
    }

    /// Same counters with every timing zeroed (for comparisons across runs).
    pub fn without_timings(&self) -> CommStats {
        CommStats {
            fd_ghost_seconds: 0.0,
            ghost_comm_seconds: 0.0,
            scatter_comm_seconds: 0.0,
            interp_comm_seconds: 0.0,
            interp_kernel_seconds: 0.0,
            scatter_mpi_buffer_seconds: 0.0,
            fft_transpose_seconds: 0.0,
            ..self.clone()
        }
    }

    fn record(&mut self, cat: Category, bytes: u64, secs: f64) {
        let (b, s) = match cat {
            Category::FdGhost => (&mut self.fd_ghost_bytes, &mut self.fd_ghost_seconds),
            Category::Ghost => (&mut self.ghost_comm_bytes, &mut self.ghost_comm_seconds),
            Category::Scatter => (&mut self.scatter_comm_bytes, &mut self.scatter_comm_seconds),
            Category::Interp => (&mut self.interp_comm_bytes, &mut self.interp_comm_seconds),
            Category::Transpose => (
                &mut self.fft_transpose_bytes,
                &mut self.fft_transpose_seconds,
            ),
        };
        *b += bytes;
        *s += secs;
    }
}

struct Envelope {
    from: usize,
    tag: u32,
    data: Vec<Real>,
}

/// Factory for one set of connected worker endpoints.
#[derive(Debug, Clone)]
pub struct Mailbox {
    p: usize,
    enabled: bool,
    strategy: ExchangeStrategy,
    timeout: Duration,
}

impl Mailbox {
    pub fn new(p: usize) -> Self {
        Self {
            p,
            enabled: true,
            strategy: ExchangeStrategy::default(),
            timeout: Duration::from_secs(120),
        }
    }

    /// A mailbox that refuses every message.
    pub fn disabled(p: usize) -> Self {
        Self {
            enabled: false,
            ..Self::new(p)
        }
    }

    pub fn with_strategy(mut self, strategy: ExchangeStrategy) -> Self {
        self.strategy = strategy;
        self
    }

    /// Longest a receive waits before reporting a communication error.
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn workers(&self) -> usize {
        self.p
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    /// Connected endpoints, one per rank.
    pub fn connect(&self) -> Vec<Comm> {
        let (txs, rxs): (Vec<Sender<Envelope>>, Vec<Receiver<Envelope>>) =
            (0..self.p).map(|_| channel()).unzip();
        let abort = Arc::new(AtomicBool::new(false));
        rxs.into_iter()
            .enumerate()
            .map(|(rank, rx)| Comm {
                rank,
                p: self.p,
                peers: txs.clone(),
                rx,
                pending: VecDeque::new(),
                enabled: self.enabled,
                strategy: self.strategy,
                timeout: self.timeout,
                abort: abort.clone(),
                stats: CommStats::default(),
            })
            .collect()
    }
}

/// One worker's endpoint.
pub struct Comm {
    rank: usize,
    p: usize,
    peers: Vec<Sender<Envelope>>,
    rx: Receiver<Envelope>,
    pending: VecDeque<Envelope>,
    enabled: bool,
    strategy: ExchangeStrategy,
    timeout: Duration,
    abort: Arc<AtomicBool>,
    stats: CommStats,
}

impl Comm {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn workers(&self) -> usize {
        self.p
    }

    pub fn stats(&self) -> &CommStats {
        &self.stats
    }

    pub fn stats_mut(&mut self) -> &mut CommStats {
        &mut self.stats
    }

    pub fn take_stats(&mut self) -> CommStats {
        std::mem::take(&mut self.stats)
    }

    /// Tells every other worker to stop waiting (called when this worker fails).
    pub fn abort(&self) {
        self.abort.store(true, Ordering::SeqCst);
    }

    fn post(&mut self, to: usize, tag: u32, data: Vec<Real>, cat: Category) -> Result<()> {
        if !self.enabled {
            return Err(Error::Comm(format!(
                "mailbox disabled: worker {} cannot send to worker {to}",
                self.rank
            )));
        }
        let bytes = (data.len() * std::mem::size_of::<Real>()) as u64;
        let t = Instant::now();
        self.peers[to]
            .send(Envelope {
                from: self.rank,
                tag,
                data,
            })
            .map_err(|_| Error::Comm(format!("worker {to} hung up")))?;
        self.stats.record(cat, bytes, t.elapsed().as_secs_f64());
        self.stats.messages += 1;
        Ok(())
    }

    /// Point-to-point send.
    pub fn send(&mut self, to: usize, tag: u32, data: Vec<Real>, cat: Category) -> Result<()> {
        if to >= self.p {
            return Err(Error::Comm(format!("no worker {to} among {}", self.p)));
        }
        self.post(to, tag, data, cat)
    }

    /// Blocking receive of the next message from `from` with `tag`; messages
    /// that arrive out of turn are buffered.
    pub fn recv(&mut self, from: usize, tag: u32, cat: Category) -> Result<Vec<Real>> {
        if !self.enabled {
            return Err(Error::Comm(format!(
                "mailbox disabled: worker {} cannot receive from worker {from}",
                self.rank
            )));
        }
        let t = Instant::now();
        if let Some(pos) = self
            .pending
            .iter()
            .position(|e| e.from == from && e.tag == tag)
        {
            let e = self.pending.remove(pos).expect("position is valid");
            self.stats.record(cat, 0, t.elapsed().as_secs_f64());
            return Ok(e.data);
        }
        let poll = Duration::from_millis(5);
        loop {
            match self.rx.recv_timeout(poll) {
                Ok(e) if e.from == from && e.tag == tag => {
                    self.stats.record(cat, 0, t.elapsed().as_secs_f64());
                    return Ok(e.data);
                }
                Ok(e) => self.pending.push_back(e),
                Err(RecvTimeoutError::Timeout) => {
                    if self.abort.load(Ordering::SeqCst) {
                        return Err(Error::Comm(format!(
                            "worker {} aborted: a peer failed",
                            self.rank
                        )));
                    }
                    if t.elapsed() > self.timeout {
                        return Err(Error::Comm(format!(
                            "worker {} timed out waiting for worker {from} (tag {tag})",
                            self.rank
                        )));
                    }
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Error::Comm("mailbox disconnected".into()));
                }
            }
        }
    }

    /// Collective exchange: `blocks[q]` goes to worker `q`; returns the blocks
    /// received, indexed by sender. The own block is moved without messaging.
    pub fn all_to_all(
        &mut self,
        tag: u32,
        mut blocks: Vec<Vec<Real>>,
        cat: Category,
    ) -> Result<Vec<Vec<Real>>> {
        if blocks.len() != self.p {
            return Err(Error::Comm(format!(
                "{} blocks for {} workers",
                blocks.len(),
                self.p
            )));
        }
        let own = std::mem::take(&mut blocks[self.rank]);
        let bytes: usize = blocks
            .iter()
            .map(|b| b.len() * std::mem::size_of::<Real>())
            .sum();
        let collective = match self.strategy {
            ExchangeStrategy::AllToAll => true,
            ExchangeStrategy::PointToPoint => false,
            ExchangeStrategy::Auto { threshold_bytes } => bytes > threshold_bytes,
        };
        if collective {
            self.stats.alltoall_exchanges += 1;
            for q in 0..self.p {
                if q != self.rank {
                    let b = std::mem::take(&mut blocks[q]);
                    self.post(q, tag, b, cat)?;
                }
            }
        } else {
            // Ring-ordered rounds: in round s send to rank + s.
            self.stats.p2p_exchanges += 1;
            for s in 1..self.p {
                let q = (self.rank + s) % self.p;
                let b = std::mem::take(&mut blocks[q]);
                self.post(q, tag, b, cat)?;
            }
        }
        let mut out = vec![Vec::new(); self.p];
        for s in 1..self.p {
            let q = (self.rank + self.p - s) % self.p;
            out[q] = self.recv(q, tag, cat)?;
        }
        out[self.rank] = own;
        Ok(out)
    }
}

/// Runs `work` on `p` scoped threads, one per endpoint, and merges their
/// counters into `stats`. The first real failure (not a secondary abort) is returned.
pub fn run_workers<T, F>(mailbox: &Mailbox, stats: &mut CommStats, work: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut Comm) -> Result<T> + Sync,
{
    let comms = mailbox.connect();
    let results: Vec<(Result<T>, CommStats)> = std::thread::scope(|s| {
        let handles: Vec<_> = comms
            .into_iter()
            .map(|mut c| {
                let work = &work;
                s.spawn(move || {
                    let r = work(&mut c);
                    if r.is_err() {
                        c.abort();
                    }
                    (r, c.take_stats())
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker thread panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(results.len());
    let mut first_err: Option<Error> = None;
    for (r, st) in results {
        stats.add(&st);
        match r {
            Ok(v) => out.push(v),
            Err(e) => {
                let secondary = matches!(&e, Error::Comm(m) if m.contains("aborted"));
                match &first_err {
                    None => first_err = Some(e),
                    Some(Error::Comm(m)) if m.contains("aborted") && !secondary => {
                        first_err = Some(e)
                    }
                    _ => {}
                }
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_pair_fifo_and_out_of_turn_buffering() {
        let mb = Mailbox::new(2);
        let mut st = CommStats::default();
        let got = run_workers(&mb, &mut st, |c| {
            if c.rank() == 0 {
                c.send(1, 7, vec![1.0], Category::Scatter)?;
                c.send(1, 7, vec![2.0], Category::Scatter)?;
                c.send(1, 3, vec![3.0], Category::Scatter)?;
                Ok(vec![])
            } else {
                let a = c.recv(0, 3, Category::Scatter)?;
                let b = c.recv(0, 7, Category::Scatter)?;
                let d = c.recv(0, 7, Category::Scatter)?;
                Ok(vec![a[0], b[0], d[0]])
            }
        })
        .unwrap();
        assert_eq!(got[1], vec![3.0, 1.0, 2.0]);
        assert_eq!(st.messages, 3);
        assert_eq!(
            st.scatter_comm_bytes,
            3 * std::mem::size_of::<Real>() as u64
        );
    }

    #[test]
    fn all_to_all_routes_blocks() {
        for strategy in [ExchangeStrategy::AllToAll, ExchangeStrategy::PointToPoint] {
            let mb = Mailbox::new(3).with_strategy(strategy);
            let mut st = CommStats::default();
            let got = run_workers(&mb, &mut st, |c| {
                let r = c.rank() as Real;
                let blocks = (0..3).map(|q| vec![10.0 * r + q as Real]).collect();
                c.all_to_all(1, blocks, Category::Transpose)
            })
            .unwrap();
            for (q, recv) in got.iter().enumerate() {
                for (s, b) in recv.iter().enumerate() {
                    assert_eq!(b, &vec![10.0 * s as Real + q as Real]);
                }
            }
        }
    }

    #[test]
    fn disabled_mailbox_fails() {
        let mb = Mailbox::disabled(2);
        let mut st = CommStats::default();
        let r = run_workers(&mb, &mut st, |c| {
            let blocks = vec![vec![1.0]; 2];
            c.all_to_all(0, blocks, Category::Transpose)
        });
        assert!(matches!(r, Err(Error::Comm(_))));
    }

    #[test]
    fn failure_on_one_worker_releases_the_others() {
        let mb = Mailbox::new(3);
        let mut st = CommStats::default();
        let r: Result<Vec<()>> = run_workers(&mb, &mut st, |c| {
            if c.rank() == 1 {
                return Err(Error::Numerical("boom".into()));
            }
            c.recv(1, 0, Category::Scatter).map(|_| ())
        });
        assert!(matches!(r, Err(Error::Numerical(_))));
    }
}
