//! Slab-parallel execution of the FFT, FD and interpolation kernels over an
//! in-process message-passing layer.

mod backend;
mod layout;
mod mailbox;

pub use backend::SlabBackend;
pub use layout::SlabLayout;
pub use mailbox::{
    run_workers, Category, Comm, CommStats, ExchangeStrategy, Mailbox, DEFAULT_ALLTOALL_THRESHOLD,
};
