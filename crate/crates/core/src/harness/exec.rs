use super::{HarnessError, Job, RunOutput};

/// How experiment runs are scheduled. Output order is the job order either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Executor {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for Executor {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        return Executor::Parallel;
        #[cfg(not(feature = "parallel"))]
        return Executor::Sequential;
    }
}

impl Executor {
    /// Executor for a `--jobs` value: 1 runs sequentially, anything else in parallel when
    /// the build supports it.
    pub fn for_jobs(jobs: usize) -> Self {
        if jobs == 1 {
            Executor::Sequential
        } else {
            Executor::default()
        }
    }

    #[cfg_attr(not(feature = "parallel"), allow(unused_variables))]
    pub(crate) fn run<W, S>(self, jobs: &[Job], threads: usize, work: W, mut sink: S) -> Result<(), HarnessError>
    where
        W: Fn(Job) -> RunOutput + Sync,
        S: FnMut(RunOutput) -> Result<(), HarnessError>,
    {
        match self {
            Executor::Sequential => jobs.iter().try_for_each(|&j| sink(work(j))),
            #[cfg(feature = "parallel")]
            Executor::Parallel => parallel(jobs, threads, work, sink),
        }
    }
}

/// Runs jobs on a rayon pool and feeds results to `sink` in job order.
#[cfg(feature = "parallel")]
fn parallel<W, S>(jobs: &[Job], threads: usize, work: W, mut sink: S) -> Result<(), HarnessError>
where
    W: Fn(Job) -> RunOutput + Sync,
    S: FnMut(RunOutput) -> Result<(), HarnessError>,
{
    use std::collections::BTreeMap;
    use std::sync::atomic::{AtomicBool, Ordering};
    use std::sync::mpsc;

    use rayon::prelude::*;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool");
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| {
        let (work, stop) = (&work, &stop);
        scope.spawn(move || {
            pool.install(|| {
                jobs.par_iter().enumerate().for_each_with(tx, |tx, (i, &job)| {
                    if !stop.load(Ordering::Relaxed) {
                        let _ = tx.send((i, work(job)));
                    }
                })
            })
        });
        let mut held = BTreeMap::new();
        let mut next = 0;
        let mut result = Ok(());
        for (i, out) in rx {
            if result.is_err() {
                continue;
            }
            held.insert(i, out);
            while let Some(out) = held.remove(&next) {
                next += 1;
                if let Err(e) = sink(out) {
                    stop.store(true, Ordering::Relaxed);
                    result = Err(e);
                    break;
                }
            }
        }
        result
    })
}
