//! Elastic worker pool.
//!
//! Family threads may block on channel reads or on syncs of their children,
//! so a fixed-size pool could deadlock. This pool hands each job to an idle
//! worker when one exists and otherwise starts a new one; workers retire
//! after sitting idle for a while.

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

type Job = Box<dyn FnOnce() + Send + 'static>;

#[derive(Clone)]
pub(crate) struct Pool {
    shared: Arc<Shared>,
}

struct Shared {
    state: Mutex<State>,
    available: Condvar,
    idle_timeout: Duration,
}

struct State {
    jobs: VecDeque<Job>,
    // Waiting workers not yet promised to a queued job.
    idle: usize,
    spawned: u64,
}

impl Pool {
    pub(crate) fn new(idle_timeout: Duration) -> Pool {
        Pool {
            shared: Arc::new(Shared {
                state: Mutex::new(State {
                    jobs: VecDeque::new(),
                    idle: 0,
                    spawned: 0,
                }),
                available: Condvar::new(),
                idle_timeout,
            }),
        }
    }

    pub(crate) fn submit(&self, job: impl FnOnce() + Send + 'static) {
        let mut state = self.shared.state.lock().unwrap();
        state.jobs.push_back(Box::new(job));
        if state.idle > 0 {
            state.idle -= 1;
            drop(state);
            self.shared.available.notify_one();
        } else {
            state.spawned += 1;
            let n = state.spawned;
            drop(state);
            let shared = Arc::clone(&self.shared);
            thread::Builder::new()
                .name(format!("dsvp-worker-{n}"))
                .spawn(move || worker(shared))
                .expect("spawn worker thread");
        }
    }

    #[cfg(test)]
    pub(crate) fn spawned(&self) -> u64 {
        self.shared.state.lock().unwrap().spawned
    }
}

fn worker(shared: Arc<Shared>) {
    let mut state = shared.state.lock().unwrap();
    loop {
        if let Some(job) = state.jobs.pop_front() {
            drop(state);
            job();
            state = shared.state.lock().unwrap();
            state.idle += 1;
            continue;
        }
        let (guard, timeout) = shared
            .available
            .wait_timeout(state, shared.idle_timeout)
            .unwrap();
        state = guard;
        if timeout.timed_out() && state.jobs.is_empty() && state.idle > 0 {
            state.idle -= 1;
            return;
        }
    }
}
