//! A desk-scale batch workload manager.
//!
//! Job scripts in PBS or SLURM dialect are parsed into a [`jobspec::JobSpec`],
//! queued and placed on modeled nodes by [`sched`] (FIFO with EASY backfill),
//! executed as supervised processes by [`runtime`], and served to terminal
//! clients by [`daemon`] over a token-authenticated JSON-lines protocol. The
//! [`runtime`] module also hosts named sessions that keep running while no
//! client is attached.

pub mod cli;
pub mod clock;
pub mod daemon;
pub mod jobspec;
pub mod runtime;
pub mod sched;
