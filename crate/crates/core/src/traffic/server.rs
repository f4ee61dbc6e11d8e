/// Remaining work below this is treated as finished; absorbs float residue
/// left by repeated subtraction.
const WORK_EPS: f64 = 1e-12;

/// A job that ran to completion during [`ServerModel::advance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Completion {
    pub handle: u64,
    /// Seconds into the advance interval at which the job finished.
    pub elapsed: f64,
}

/// Processor-sharing server with `cores` identical cores and `capacity`
/// units of work per second in total. With `n` active jobs each runs at
/// `capacity / max(n, cores)`: one core per job while cores are free, equal
/// shares once they are not. A single core gives plain processor sharing.
#[derive(Debug, Clone)]
pub struct ServerModel {
    pub id: u8,
    pub capacity: f64,
    pub cores: u32,
    active_jobs: Vec<(f64, u64)>,
    /// Busy fraction over the most recent advance interval.
    cpu_usage: f64,
    busy_time: f64,
}

impl ServerModel {
    pub fn new(id: u8, capacity: f64) -> Self {
        Self::with_cores(id, capacity, 1)
    }

    pub fn with_cores(id: u8, capacity: f64, cores: u32) -> Self {
        Self {
            id,
            capacity,
            cores: cores.max(1),
            active_jobs: Vec::new(),
            cpu_usage: 0.0,
            busy_time: 0.0,
        }
    }

    pub fn add_job(&mut self, work: f64, handle: u64) {
        self.active_jobs.push((work.max(0.0), handle));
    }

    pub fn active_jobs(&self) -> usize {
        self.active_jobs.len()
    }

    pub fn jobs(&self) -> impl Iterator<Item = (f64, u64)> + '_ {
        self.active_jobs.iter().copied()
    }

    pub fn cpu_usage(&self) -> f64 {
        self.cpu_usage
    }

    /// Cumulative fully-busy seconds: time weighted by the fraction of cores
    /// in use.
    pub fn busy_time(&self) -> f64 {
        self.busy_time
    }

    fn job_rate(&self) -> f64 {
        self.capacity / (self.active_jobs.len() as f64).max(f64::from(self.cores))
    }

    fn busy_fraction(&self) -> f64 {
        (self.active_jobs.len() as f64 / f64::from(self.cores)).min(1.0)
    }

    /// Seconds until the next job completes if nothing else arrives.
    pub fn time_to_next_completion(&self) -> Option<f64> {
        if self.active_jobs.is_empty() {
            return None;
        }
        let min_rem = self
            .active_jobs
            .iter()
            .map(|&(rem, _)| rem)
            .fold(f64::INFINITY, f64::min);
        Some(min_rem.max(0.0) / self.job_rate())
    }

    /// Runs the server for `dt` seconds. Jobs finishing part-way through free
    /// their share for the remaining jobs, so completion order is exact
    /// processor sharing rather than a single coarse step.
    pub fn advance(&mut self, dt: f64) -> Vec<Completion> {
        let mut done = Vec::new();
        if dt <= 0.0 {
            return done;
        }
        let mut elapsed = 0.0;
        let mut busy = 0.0;
        while !self.active_jobs.is_empty() && elapsed < dt {
            let rate = self.job_rate();
            let frac = self.busy_fraction();
            let step = match self.time_to_next_completion() {
                Some(t) if elapsed + t <= dt => t,
                _ => dt - elapsed,
            };
            for job in &mut self.active_jobs {
                job.0 -= rate * step;
            }
            elapsed += step;
            busy += step * frac;
            let mut i = 0;
            while i < self.active_jobs.len() {
                if self.active_jobs[i].0 <= WORK_EPS {
                    let (_, handle) = self.active_jobs.remove(i);
                    done.push(Completion { handle, elapsed });
                } else {
                    i += 1;
                }
            }
        }
        self.busy_time += busy;
        self.cpu_usage = (busy / dt).min(1.0);
        done
    }
}

/// Advances `model` by `dt` and returns the handles of completed jobs.
pub fn server_advance(model: &mut ServerModel, dt: f64) -> Vec<u64> {
    model.advance(dt).into_iter().map(|c| c.handle).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_server_stays_idle() {
        let mut s = ServerModel::new(0, 1.0);
        assert!(server_advance(&mut s, 3.0).is_empty());
        assert_eq!(s.cpu_usage(), 0.0);
    }

    #[test]
    fn single_unit_job_completes() {
        let mut s = ServerModel::new(0, 1.0);
        s.add_job(1.0, 42);
        assert_eq!(server_advance(&mut s, 1.0), vec![42]);
        assert_eq!(s.cpu_usage(), 1.0);
    }

    #[test]
    fn two_jobs_share_capacity() {
        let mut s = ServerModel::new(0, 1.0);
        s.add_job(1.0, 1);
        s.add_job(1.0, 2);
        assert!(server_advance(&mut s, 1.0).is_empty());
        for (rem, _) in s.jobs() {
            assert!((rem - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn short_job_frees_capacity_mid_interval() {
        // jobs 0.5 and 1.5 on capacity 1: the short one ends at t=1.0, the
        // long one then runs alone and ends at t=2.0.
        let mut s = ServerModel::new(0, 1.0);
        s.add_job(0.5, 1);
        s.add_job(1.5, 2);
        let done = s.advance(3.0);
        assert_eq!(done.len(), 2);
        assert_eq!(done[0].handle, 1);
        assert!((done[0].elapsed - 1.0).abs() < 1e-12);
        assert!((done[1].elapsed - 2.0).abs() < 1e-12);
        assert!((s.cpu_usage() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn cores_run_lone_job_at_core_speed() {
        // capacity 2 over 4 cores: one job runs at 0.5, four at 0.5 each,
        // eight at 0.25 each
        let mut s = ServerModel::with_cores(0, 2.0, 4);
        s.add_job(1.0, 1);
        assert_eq!(s.time_to_next_completion(), Some(2.0));
        s.advance(1.0);
        assert!((s.cpu_usage() - 0.25).abs() < 1e-12);
        for h in 2..9 {
            s.add_job(1.0, h);
        }
        // job 1 has 0.5 left at rate 0.25
        assert_eq!(s.time_to_next_completion(), Some(2.0));
        s.advance(1.0);
        assert_eq!(s.cpu_usage(), 1.0);
    }

    #[test]
    fn one_core_matches_plain_sharing() {
        let mut a = ServerModel::new(0, 1.5);
        let mut b = ServerModel::with_cores(0, 1.5, 1);
        for (h, w) in [(1, 0.3), (2, 0.9), (3, 0.1)] {
            a.add_job(w, h);
            b.add_job(w, h);
        }
        assert_eq!(a.advance(2.0), b.advance(2.0));
        assert_eq!(a.busy_time(), b.busy_time());
    }
}
