//! Run metrics and per-thread CPU accounting.

use std::collections::BTreeMap;
use std::time::Duration;

use crate::party::PartyId;

/// CPU time consumed so far by the calling thread.
pub fn thread_cpu_time() -> Duration {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid out-pointer and the clock id is a constant.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    if rc != 0 {
        return Duration::ZERO;
    }
    Duration::new(ts.tv_sec as u64, ts.tv_nsec as u32)
}

/// Total CPU time of every worker in `pool`.
pub fn pool_cpu_time(pool: &rayon::ThreadPool) -> Duration {
    pool.broadcast(|_| thread_cpu_time()).into_iter().sum()
}

/// CPU used by one party: its own thread since `start` plus its worker pool.
#[derive(Debug)]
pub struct CpuMeter {
    start: Duration,
}

impl CpuMeter {
    pub fn start() -> Self {
        CpuMeter { start: thread_cpu_time() }
    }

    pub fn finish(self, pool: Option<&rayon::ThreadPool>) -> Duration {
        thread_cpu_time().saturating_sub(self.start) + pool.map_or(Duration::ZERO, pool_cpu_time)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    pub wall_time: Duration,
    pub cpu: BTreeMap<PartyId, Duration>,
    /// Sum of frame lengths sent by every party.
    pub bytes_total: u64,
    pub bytes_sent: BTreeMap<PartyId, u64>,
    pub frames: u64,
    pub ciphertexts_out: usize,
    /// Telecom ciphertexts created, including the one for the target.
    pub telecom_ciphertexts: u64,
    pub duplicates: u64,
    pub rounds: u32,
}

impl RunMetrics {
    pub fn agency_cpu(&self) -> Duration {
        self.cpu.iter().filter(|(p, _)| p.is_agency()).map(|(_, d)| *d).sum()
    }

    pub fn telecom_cpu(&self) -> Duration {
        self.cpu.iter().filter(|(p, _)| p.is_telecom()).map(|(_, d)| *d).sum()
    }
}
