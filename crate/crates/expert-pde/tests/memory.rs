//! Compares the grid-info memory model with the peak heap use of real
//! solves, measured by a counting allocator.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use expert_pde::memory::estimate;
use expert_pde::GridKind;
use expert_pde_core::{solve_sector, GridConfig, Serial, SolveOptions, StencilMode};

struct Counting;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);
// Tests in this binary must not overlap their measurements.
static SERIAL: Mutex<()> = Mutex::new(());

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            let now = CURRENT.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

fn measured_peak(config: GridConfig, mode: StencilMode) -> usize {
    let base = CURRENT.load(Ordering::Relaxed);
    PEAK.store(base, Ordering::Relaxed);
    let solved = solve_sector(config, &SolveOptions::for_spacing(config.spacing()), mode, &Serial).unwrap();
    let peak = PEAK.load(Ordering::Relaxed) - base;
    drop(solved);
    peak
}

fn check(n: usize, h: f64, t: f64, budget: u64) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let config = GridConfig::covering(n, h, t).unwrap();
    let est = estimate(GridKind::Sector, &config, budget).unwrap();
    let peak = measured_peak(config, StencilMode::Auto { budget });
    let ratio = peak as f64 / est.total_bytes as f64;
    println!("n={n} h={h} table={} estimate={} peak={peak} ratio={ratio:.4}", est.uses_table, est.total_bytes);
    assert!((0.9..=1.1).contains(&ratio), "estimate {} vs peak {peak}", est.total_bytes);
}

#[test]
fn estimate_tracks_peak_with_table() {
    check(3, 0.05, 5.0, u64::MAX);
    check(4, 0.1, 5.0, u64::MAX);
    check(5, 0.25, 5.0, u64::MAX);
}

#[test]
fn estimate_tracks_peak_without_table() {
    check(4, 0.1, 5.0, 0);
    check(5, 0.25, 5.0, 0);
}
