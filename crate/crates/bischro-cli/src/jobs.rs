//! Deterministic fan-out for independent jobs.
//!
//! Results are collected by job index, so the output is identical no
//! matter how the scheduler interleaves the workers.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

type Job<'a, T> = Box<dyn FnOnce() -> T + Send + 'a>;

/// Runs every job on up to `cap` worker threads and returns the results
/// in job order.
pub fn run_ordered<'a, T: Send + 'a>(cap: usize, jobs: Vec<Job<'a, T>>) -> Vec<T> {
    let total = jobs.len();
    let workers = cap.max(1).min(total.max(1));
    if workers <= 1 || total <= 1 {
        return jobs.into_iter().map(|j| j()).collect();
    }

    let queue: Vec<Mutex<Option<Job<'a, T>>>> =
        jobs.into_iter().map(|j| Mutex::new(Some(j))).collect();
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<T>>> = (0..total).map(|_| Mutex::new(None)).collect();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= total {
                    break;
                }
                let job = queue[i].lock().unwrap().take().expect("job taken once");
                *slots[i].lock().unwrap() = Some(job());
            });
        }
    });

    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("every job ran"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_come_back_in_job_order() {
        for cap in [1, 2, 7] {
            let jobs: Vec<Job<usize>> = (0..13usize)
                .map(|i| {
                    let j = 13 - i;
                    Box::new(move || {
                        std::thread::sleep(std::time::Duration::from_micros(j as u64 * 50));
                        i * i
                    }) as Job<usize>
                })
                .collect();
            let out = run_ordered(cap, jobs);
            let expect: Vec<usize> = (0..13).map(|i| i * i).collect();
            assert_eq!(out, expect);
        }
    }
}
