//! Distributable thread functions shipped with every node: the Fibonacci
//! example, benchmark and fault-injection helpers, and a counter service
//! with state resident at its node.

use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crate::svp::{FamilyDescriptor, Place, RangeSpec, RegistryError, Runtime, ThreadError, ThreadFunction};
use crate::value::{Buffer, TypeCode};

pub const FIBONACCI: &str = "fibonacci";
pub const SLOW_FIBONACCI: &str = "slow_fibonacci";
pub const EMPTY: &str = "empty";
pub const SPIN: &str = "spin";
pub const RELAY: &str = "relay";
pub const STRESS: &str = "stress";
pub const COUNTER_INCREMENT: &str = "counter_increment";
pub const COUNTER_READ: &str = "counter_read";

/// The Fibonacci family: thread `i` computes `result[i]` from the two
/// previous values, which travel along two shared channels.
///
/// Shareds: `p1`, `p2` (i64). Globals: `result` (i64 buffer), `n` (i64).
/// Range: `2..n`.
pub fn fibonacci() -> ThreadFunction {
    fib_function(FIBONACCI, false)
}

/// [`fibonacci`] with an extra global: milliseconds each thread sleeps
/// before computing.
pub fn slow_fibonacci() -> ThreadFunction {
    fib_function(SLOW_FIBONACCI, true)
}

fn fib_function(name: &str, slow: bool) -> ThreadFunction {
    let mut f = ThreadFunction::new(name, move |ctx| {
        if slow {
            ctx.sleep(Duration::from_millis(ctx.global_i64(2)? as u64))?;
        }
        let p1 = ctx.read_shared_i64(0)?;
        let p2 = ctx.read_shared_i64(1)?;
        let r = p1.wrapping_add(p2);
        ctx.global_buffer(0)?.set(ctx.index() as usize, r.into())?;
        ctx.write_shared(0, r)?;
        ctx.write_shared(1, p1)?;
        Ok(())
    })
    .shared(TypeCode::I64)
    .shared(TypeCode::I64)
    .global_buffer(TypeCode::I64)
    .global(TypeCode::I64);
    if slow {
        f = f.global(TypeCode::I64);
    }
    f.describe(|env, d| {
        d.input(0)?.input(1)?;
        for i in 2..env.i64(3)?.max(2) {
            d.output_range(2, i as usize, 1)?;
        }
        Ok(())
    })
}

/// A caller-side result buffer initialized as `0, 1, 0, 0, ...`.
pub fn fibonacci_buffer(n: usize) -> Buffer {
    let b = Buffer::from_i64s(&vec![0; n]);
    if n > 1 {
        b.set(1, 1i64.into()).expect("in range");
    }
    b
}

/// The family computing `result[2..]`, where `result` comes from
/// [`fibonacci_buffer`].
pub fn fibonacci_family(place: Place, result: &Buffer) -> FamilyDescriptor {
    let n = result.len() as i64;
    FamilyDescriptor::new(FIBONACCI, RangeSpec::new(2, n.max(2)))
        .on(place)
        .shared(1i64)
        .shared(0i64)
        .global(result.clone())
        .global(n)
}

pub fn slow_fibonacci_family(place: Place, result: &Buffer, delay: Duration) -> FamilyDescriptor {
    let mut desc = fibonacci_family(place, result).global(delay.as_millis() as i64);
    desc.function = SLOW_FIBONACCI.to_owned();
    desc
}

/// Reference values, independent of the runtime.
pub fn fibonacci_reference(n: usize) -> Vec<i64> {
    let mut v: Vec<i64> = Vec::with_capacity(n);
    for i in 0..n {
        v.push(if i < 2 { i as i64 } else { v[i - 1].wrapping_add(v[i - 2]) });
    }
    v
}

/// Does nothing; the benchmark measures create and sync around it.
pub fn empty() -> ThreadFunction {
    ThreadFunction::new(EMPTY, |_| Ok(())).describe(|_, _| Ok(()))
}

pub fn empty_family(place: Place) -> FamilyDescriptor {
    FamilyDescriptor::new(EMPTY, RangeSpec::new(0, 1)).on(place)
}

/// Sleeps until killed.
pub fn spin() -> ThreadFunction {
    ThreadFunction::new(SPIN, |ctx| loop {
        ctx.sleep(Duration::from_millis(5))?;
    })
    .describe(|_, _| Ok(()))
}

/// Creates itself on each place of a comma-separated path in turn; the
/// last hop spins until killed.
///
/// Global: `path` (string).
pub fn relay() -> ThreadFunction {
    ThreadFunction::new(RELAY, |ctx| {
        let path = ctx.read_global(0)?;
        let path = path.as_scalar().and_then(|v| v.as_str()).unwrap_or_default().to_owned();
        let Some((next, rest)) = split_path(&path) else {
            loop {
                ctx.sleep(Duration::from_millis(5))?;
            }
        };
        let place = ctx.place(next)?;
        let mut child = ctx.create(relay_family(place, rest))?;
        let result = ctx.sync(&mut child)?;
        if result.status.is_completed() {
            Ok(())
        } else {
            Err(ThreadError::fault(format!("hop {next}: {}", result.status)))
        }
    })
    .global(TypeCode::STRING)
    .describe(|_, d| {
        d.input(0)?;
        Ok(())
    })
}

fn split_path(path: &str) -> Option<(&str, &str)> {
    if path.is_empty() {
        return None;
    }
    Some(path.split_once(',').unwrap_or((path, "")))
}

pub fn relay_family(place: Place, path: &str) -> FamilyDescriptor {
    FamilyDescriptor::new(RELAY, RangeSpec::new(0, 1)).on(place).global(path)
}

/// Folds every thread index into one shared accumulator.
///
/// Shared: `acc` (i64). Global: `salt` (i64).
pub fn stress() -> ThreadFunction {
    ThreadFunction::new(STRESS, |ctx| {
        let acc = ctx.read_shared_i64(0)?;
        let salt = ctx.global_i64(0)?;
        ctx.write_shared(0, stress_step(acc, ctx.index(), salt))
    })
    .shared(TypeCode::I64)
    .global(TypeCode::I64)
    .describe(|_, d| {
        d.input(0)?.input(1)?;
        Ok(())
    })
}

pub fn stress_step(acc: i64, index: i64, salt: i64) -> i64 {
    acc.wrapping_mul(31).wrapping_add(index ^ salt)
}

pub fn stress_family(place: Place, threads: i64, salt: i64) -> FamilyDescriptor {
    FamilyDescriptor::new(STRESS, RangeSpec::new(0, threads))
        .on(place)
        .shared(0i64)
        .global(salt)
}

/// State resident at the node serving the counter functions.
#[derive(Debug, Default)]
pub struct Counter {
    value: AtomicI64,
    intervals: Mutex<Vec<(Instant, Instant)>>,
}

impl Counter {
    pub fn value(&self) -> i64 {
        self.value.load(Ordering::SeqCst)
    }

    /// Start and end of every increment, in completion order.
    pub fn intervals(&self) -> Vec<(Instant, Instant)> {
        self.intervals.lock().unwrap().clone()
    }

    // Deliberately a non-atomic read-modify-write: only the exclusive
    // place keeps concurrent increments from losing updates.
    fn increment(&self) -> i64 {
        let start = Instant::now();
        let v = self.value.load(Ordering::SeqCst);
        std::thread::yield_now();
        self.value.store(v + 1, Ordering::SeqCst);
        self.intervals.lock().unwrap().push((start, Instant::now()));
        v + 1
    }
}

/// Whether any two intervals overlap.
pub fn intervals_overlap(intervals: &[(Instant, Instant)]) -> bool {
    let mut sorted = intervals.to_vec();
    sorted.sort();
    sorted.windows(2).any(|w| w[1].0 < w[0].1)
}

/// Increments the resident counter once per thread and leaves the value
/// after the last increment on the shared channel.
pub fn counter_increment(counter: Arc<Counter>) -> ThreadFunction {
    ThreadFunction::new(COUNTER_INCREMENT, move |ctx| {
        ctx.read_shared(0)?;
        ctx.write_shared(0, counter.increment())
    })
    .shared(TypeCode::I64)
    .describe(|_, d| {
        d.input(0)?;
        Ok(())
    })
}

pub fn counter_read(counter: Arc<Counter>) -> ThreadFunction {
    ThreadFunction::new(COUNTER_READ, move |ctx| ctx.write_shared(0, counter.value()))
        .shared(TypeCode::I64)
        .describe(|_, d| {
            d.input(0)?;
            Ok(())
        })
}

pub fn counter_family(function: &str, place: Place) -> FamilyDescriptor {
    FamilyDescriptor::new(function, RangeSpec::new(0, 1)).on(place).shared(0i64)
}

/// Handles to resident state created by [`register_standard`].
#[derive(Debug, Clone)]
pub struct Standard {
    pub counter: Arc<Counter>,
}

/// Registers every function of this module.
pub fn register_standard(runtime: &Runtime) -> Result<Standard, RegistryError> {
    let counter = Arc::new(Counter::default());
    for f in [
        fibonacci(),
        slow_fibonacci(),
        empty(),
        spin(),
        relay(),
        stress(),
        counter_increment(Arc::clone(&counter)),
        counter_read(Arc::clone(&counter)),
    ] {
        runtime.register(f)?;
    }
    Ok(Standard { counter })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_sequence() {
        assert_eq!(fibonacci_reference(8), vec![0, 1, 1, 2, 3, 5, 8, 13]);
        assert_eq!(fibonacci_reference(2), vec![0, 1]);
    }

    #[test]
    fn paths_split_one_hop_at_a_time() {
        assert_eq!(split_path("b,c"), Some(("b", "c")));
        assert_eq!(split_path("c"), Some(("c", "")));
        assert_eq!(split_path(""), None);
    }

    #[test]
    fn overlap_detection() {
        let t = Instant::now();
        let ms = Duration::from_millis;
        assert!(!intervals_overlap(&[(t, t + ms(1)), (t + ms(1), t + ms(2))]));
        assert!(intervals_overlap(&[(t + ms(1), t + ms(3)), (t, t + ms(2))]));
    }
}
