//! Allocation accounting for scratch-memory measurements.
//!
//! [`CountingAllocator`] wraps the system allocator and keeps live/peak byte
//! counters both per thread and process-wide. It only takes effect once a
//! binary installs it:
//!
//! ```ignore
//! #[global_allocator]
//! static ALLOC: lightning_bench::CountingAllocator = lightning_bench::CountingAllocator;
//! ```
//!
//! Scratch is reported as `peak − live_after`: the high-water mark reached
//! inside the measured closure minus whatever the closure's result still
//! holds. Allocator bookkeeping overhead is not visible here; only requested
//! sizes are counted.

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;
use std::sync::atomic::{AtomicI64, Ordering};

pub struct CountingAllocator;

thread_local! {
    static LIVE: Cell<i64> = const { Cell::new(0) };
    static PEAK: Cell<i64> = const { Cell::new(0) };
}

static GLOBAL_LIVE: AtomicI64 = AtomicI64::new(0);
static GLOBAL_PEAK: AtomicI64 = AtomicI64::new(0);

#[inline]
fn record(delta: i64) {
    let _ = LIVE.try_with(|live| {
        let now = live.get() + delta;
        live.set(now);
        let _ = PEAK.try_with(|peak| {
            if now > peak.get() {
                peak.set(now);
            }
        });
    });
    let now = GLOBAL_LIVE.fetch_add(delta, Ordering::Relaxed) + delta;
    GLOBAL_PEAK.fetch_max(now, Ordering::Relaxed);
}

unsafe impl GlobalAlloc for CountingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            record(layout.size() as i64);
        }
        p
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc_zeroed(layout);
        if !p.is_null() {
            record(layout.size() as i64);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        record(-(layout.size() as i64));
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            record(new_size as i64 - layout.size() as i64);
        }
        p
    }
}

/// Which counters a measurement reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// Only allocations made by the calling thread.
    Thread,
    /// All threads; use when the measured work fans out to a pool.
    Process,
}

/// Runs `f` and returns its result with the scratch bytes it used.
pub fn measure_scratch<R>(scope: Scope, f: impl FnOnce() -> R) -> (R, usize) {
    match scope {
        Scope::Thread => {
            let start = LIVE.with(Cell::get);
            PEAK.with(|p| p.set(start));
            let out = f();
            let peak = PEAK.with(Cell::get);
            let after = LIVE.with(Cell::get);
            (out, (peak - after).max(0) as usize)
        }
        Scope::Process => {
            let start = GLOBAL_LIVE.load(Ordering::Relaxed);
            GLOBAL_PEAK.store(start, Ordering::Relaxed);
            let out = f();
            let peak = GLOBAL_PEAK.load(Ordering::Relaxed);
            let after = GLOBAL_LIVE.load(Ordering::Relaxed);
            (out, (peak - after).max(0) as usize)
        }
    }
}

/// True when [`CountingAllocator`] is the global allocator of this process.
pub fn accounting_active() -> bool {
    let (_, scratch) = measure_scratch(Scope::Thread, || {
        let v: Vec<u8> = std::hint::black_box(Vec::with_capacity(4096));
        drop(v);
    });
    scratch >= 4096
}
