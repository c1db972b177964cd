//! C ABI for the ticketlab toolkit: scalar helpers (schedule, soft
//! threshold), Fréchet scoring of raw sample buffers, dataset sampling,
//! and an opaque experiment handle that runs archives and hands records
//! back as JSON.
//!
//! Conventions: every fallible call returns a `TlStatus`; `TL_OK` is 0.
//! On failure a thread-local message is set, readable via
//! `tl_last_error`. Pointers must be valid for the documented lengths;
//! handles are created and destroyed by this library only.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use ticketlab::exp::config::ExperimentConfig;
use ticketlab::exp::report::load_run;
use ticketlab::exp::runner::cli_run;
use ticketlab::metrics::{frechet_distance, gaussian_fit};
use ticketlab::tensor::Tensor;

/// Status codes mirroring the CLI exit codes where they overlap.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TlStatus {
    Ok = 0,
    ErrRuntime = 1,
    ErrConfig = 2,
    ErrIncomplete = 3,
    ErrNullArg = 4,
    ErrUtf8 = 5,
    ErrBufferTooSmall = 6,
    ErrPanic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn clear_error() {
    LAST_ERROR.with(|e| e.borrow_mut().clear());
}

/// Copies the last error message (UTF-8, NUL-terminated, possibly
/// truncated) into `buf` and returns the full message length in bytes.
/// A zero return means no pending error. `buf` may be null to query the
/// needed capacity.
#[no_mangle]
pub extern "C" fn tl_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast(), n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Sparsity after `round` rounds of pruning 20% of the survivors.
#[no_mangle]
pub extern "C" fn tl_schedule_sparsity(round: u32) -> f64 {
    ticketlab::pruning::schedule_sparsity(round)
}

/// `sgn(x) * max(|x| - lambda, 0)`.
#[no_mangle]
pub extern "C" fn tl_soft_threshold(x: f64, lambda: f64) -> f64 {
    ticketlab::channel::soft_threshold(x, lambda)
}

/// Elementwise soft threshold; `xs` and `out` hold `n` doubles and may
/// alias exactly (in-place) but must not partially overlap.
#[no_mangle]
pub extern "C" fn tl_soft_threshold_buf(
    xs: *const f64,
    n: usize,
    lambda: f64,
    out: *mut f64,
) -> TlStatus {
    if xs.is_null() || out.is_null() {
        set_error("tl_soft_threshold_buf: null buffer");
        return TlStatus::ErrNullArg;
    }
    clear_error();
    unsafe {
        for i in 0..n {
            *out.add(i) = ticketlab::channel::soft_threshold(*xs.add(i), lambda);
        }
    }
    TlStatus::Ok
}

fn samples_tensor(ptr: *const f64, rows: usize, dim: usize) -> Option<Tensor> {
    if ptr.is_null() || rows == 0 || dim == 0 {
        return None;
    }
    let data = unsafe { std::slice::from_raw_parts(ptr, rows * dim) };
    Tensor::from_vec(vec![rows, dim], data.to_vec()).ok()
}

/// Squared Fréchet distance between Gaussian fits of two row-major
/// sample buffers (`rows x dim` doubles each).
#[no_mangle]
pub extern "C" fn tl_frechet_distance(
    a: *const f64,
    a_rows: usize,
    b: *const f64,
    b_rows: usize,
    dim: usize,
    out: *mut f64,
) -> TlStatus {
    if out.is_null() {
        set_error("tl_frechet_distance: null output");
        return TlStatus::ErrNullArg;
    }
    let (ta, tb) = match (samples_tensor(a, a_rows, dim), samples_tensor(b, b_rows, dim)) {
        (Some(ta), Some(tb)) => (ta, tb),
        _ => {
            set_error("tl_frechet_distance: null or empty sample buffer");
            return TlStatus::ErrNullArg;
        }
    };
    let result = catch_unwind(AssertUnwindSafe(|| {
        let fa = gaussian_fit(&ta)?;
        let fb = gaussian_fit(&tb)?;
        frechet_distance(&fa, &fb)
    }));
    match result {
        Ok(Ok(d)) => {
            clear_error();
            unsafe { *out = d };
            TlStatus::Ok
        }
        Ok(Err(e)) => {
            set_error(e.to_string());
            TlStatus::ErrRuntime
        }
        Err(_) => {
            set_error("panic in tl_frechet_distance");
            TlStatus::ErrPanic
        }
    }
}

fn cstr<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, TlStatus> {
    if ptr.is_null() {
        set_error(format!("{what}: null string"));
        return Err(TlStatus::ErrNullArg);
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().map_err(|_| {
        set_error(format!("{what}: invalid utf-8"));
        TlStatus::ErrUtf8
    })
}

/// Draws `n` samples of a built-in dataset (`ring8`, `grid25`, `moons`)
/// into `out`, which must hold `n * 2` doubles. Deterministic in `seed`.
#[no_mangle]
pub extern "C" fn tl_dataset_sample(
    id: *const c_char,
    n: usize,
    seed: u64,
    out: *mut f64,
) -> TlStatus {
    let id = match cstr(id, "tl_dataset_sample") {
        Ok(s) => s,
        Err(st) => return st,
    };
    if out.is_null() || n == 0 {
        set_error("tl_dataset_sample: null or empty output buffer");
        return TlStatus::ErrNullArg;
    }
    let spec = match ticketlab::datasets::builtin(id) {
        Some(s) => s,
        None => {
            set_error(format!("unknown built-in dataset `{id}`"));
            return TlStatus::ErrConfig;
        }
    };
    let t = ticketlab::datasets::sample(&spec, n, seed);
    unsafe { std::ptr::copy_nonoverlapping(t.data().as_ptr(), out, n * 2) };
    clear_error();
    TlStatus::Ok
}

/// Opaque experiment handle.
pub struct TlExperiment {
    config: ExperimentConfig,
    out_root: PathBuf,
    records: Vec<String>,
}

/// Opens an experiment from a config file. Returns null on error (see
/// `tl_last_error`). The handle must be freed with `tl_experiment_free`.
#[no_mangle]
pub extern "C" fn tl_experiment_open(
    config_path: *const c_char,
    out_root: *const c_char,
) -> *mut TlExperiment {
    let (path, root) = match (
        cstr(config_path, "tl_experiment_open"),
        cstr(out_root, "tl_experiment_open"),
    ) {
        (Ok(p), Ok(r)) => (p, r),
        _ => return std::ptr::null_mut(),
    };
    match ExperimentConfig::load(Path::new(path)) {
        Ok(config) => {
            clear_error();
            Box::into_raw(Box::new(TlExperiment {
                config,
                out_root: PathBuf::from(root),
                records: Vec::new(),
            }))
        }
        Err(e) => {
            set_error(e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Runs (or resumes) the experiment and loads its records. Safe to call
/// again; a completed archive is a no-op reload.
#[no_mangle]
pub extern "C" fn tl_experiment_run(handle: *mut TlExperiment, workers: u32) -> TlStatus {
    let exp = match unsafe { handle.as_mut() } {
        Some(e) => e,
        None => {
            set_error("tl_experiment_run: null handle");
            return TlStatus::ErrNullArg;
        }
    };
    let result = catch_unwind(AssertUnwindSafe(|| {
        let dir = cli_run(&exp.config, &exp.out_root, None, workers.max(1) as usize)?;
        let run = load_run(&dir)?;
        let mut records = Vec::new();
        for (_, recs) in &run.by_seed {
            for r in recs {
                records.push(serde_json_string(r));
            }
        }
        Ok::<_, ticketlab::exp::ExpError>(records)
    }));
    match result {
        Ok(Ok(records)) => {
            exp.records = records;
            clear_error();
            TlStatus::Ok
        }
        Ok(Err(e)) => {
            set_error(e.to_string());
            match e.exit_code() {
                2 => TlStatus::ErrConfig,
                3 => TlStatus::ErrIncomplete,
                _ => TlStatus::ErrRuntime,
            }
        }
        Err(_) => {
            set_error("panic in tl_experiment_run");
            TlStatus::ErrPanic
        }
    }
}

fn serde_json_string(r: &ticketlab::tickets::TicketRecord) -> String {
    serde_json::to_string(r).expect("record serializes")
}

/// Number of records loaded by the last successful run.
#[no_mangle]
pub extern "C" fn tl_experiment_record_count(handle: *const TlExperiment) -> usize {
    unsafe { handle.as_ref() }.map_or(0, |e| e.records.len())
}

/// Copies record `index` as NUL-terminated JSON into `buf`. Writes the
/// required capacity (including the terminator) to `needed` when given.
#[no_mangle]
pub extern "C" fn tl_experiment_record_json(
    handle: *const TlExperiment,
    index: usize,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> TlStatus {
    let exp = match unsafe { handle.as_ref() } {
        Some(e) => e,
        None => {
            set_error("tl_experiment_record_json: null handle");
            return TlStatus::ErrNullArg;
        }
    };
    let Some(json) = exp.records.get(index) else {
        set_error(format!(
            "record index {index} out of range ({} records)",
            exp.records.len()
        ));
        return TlStatus::ErrRuntime;
    };
    if !needed.is_null() {
        unsafe { *needed = json.len() + 1 };
    }
    if buf.is_null() || cap < json.len() + 1 {
        set_error(format!(
            "buffer of {cap} bytes too small for {} + NUL",
            json.len()
        ));
        return TlStatus::ErrBufferTooSmall;
    }
    unsafe {
        std::ptr::copy_nonoverlapping(json.as_ptr(), buf.cast(), json.len());
        *buf.add(json.len()) = 0;
    }
    clear_error();
    TlStatus::Ok
}

/// Frees a handle from `tl_experiment_open`. Null is a no-op.
#[no_mangle]
pub extern "C" fn tl_experiment_free(handle: *mut TlExperiment) {
    if !handle.is_null() {
        drop(unsafe { Box::from_raw(handle) });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    #[test]
    fn schedule_and_soft_threshold() {
        assert_eq!(tl_schedule_sparsity(0), 0.0);
        assert!((tl_schedule_sparsity(1) - 0.2).abs() < 1e-15);
        assert_eq!(tl_soft_threshold(0.5, 0.2), 0.3);
        assert_eq!(tl_soft_threshold(-0.1, 0.2), 0.0);
    }

    #[test]
    fn soft_threshold_buffer_and_null() {
        let xs = [0.5, -0.1, -0.5];
        let mut out = [0.0; 3];
        let st = tl_soft_threshold_buf(xs.as_ptr(), 3, 0.2, out.as_mut_ptr());
        assert_eq!(st, TlStatus::Ok);
        assert_eq!(out, [0.3, 0.0, -0.3]);
        assert_eq!(
            tl_soft_threshold_buf(std::ptr::null(), 3, 0.2, out.as_mut_ptr()),
            TlStatus::ErrNullArg
        );
        assert!(tl_last_error(std::ptr::null_mut(), 0) > 0);
    }

    #[test]
    fn frechet_known_case() {
        // Two deterministic clouds with identity-free covariances offset
        // by (3, 4): spot-check against the library path.
        let a: Vec<f64> = vec![0.0, 0.0, 1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0, -1.0];
        let b: Vec<f64> = a
            .chunks(2)
            .flat_map(|p| [p[0] + 3.0, p[1] + 4.0])
            .collect();
        let mut d = f64::NAN;
        let st = tl_frechet_distance(a.as_ptr(), 5, b.as_ptr(), 5, 2, &mut d);
        assert_eq!(st, TlStatus::Ok);
        assert!((d - 25.0).abs() < 1e-9, "{d}");
    }

    #[test]
    fn dataset_sampling_matches_library() {
        let id = CString::new("ring8").unwrap();
        let mut out = vec![0.0; 20];
        let st = tl_dataset_sample(id.as_ptr(), 10, 7, out.as_mut_ptr());
        assert_eq!(st, TlStatus::Ok);
        let spec = ticketlab::datasets::ring8();
        let expect = ticketlab::datasets::sample(&spec, 10, 7);
        assert_eq!(out.as_slice(), expect.data());

        let bad = CString::new("nope").unwrap();
        assert_eq!(
            tl_dataset_sample(bad.as_ptr(), 1, 0, out.as_mut_ptr()),
            TlStatus::ErrConfig
        );
    }

    #[test]
    fn experiment_roundtrip_through_handle() {
        let dir = std::env::temp_dir().join(format!("tlffi_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let config_path = dir.join("exp.toml");
        std::fs::write(
            &config_path,
            r#"
[experiment]
name = "ffi_smoke"
mode = "imp_g"
rounds = 1
seeds = [1]

[train]
steps = 30
batch_size = 8
eval_samples = 64

[model]
latent_dim = 4
gen_hidden = [8, 8]
disc_hidden = [8, 8]
"#,
        )
        .unwrap();
        let cpath = CString::new(config_path.to_str().unwrap()).unwrap();
        let opath = CString::new(dir.join("runs").to_str().unwrap()).unwrap();
        let handle = tl_experiment_open(cpath.as_ptr(), opath.as_ptr());
        assert!(!handle.is_null());
        assert_eq!(tl_experiment_run(handle, 1), TlStatus::Ok);
        let count = tl_experiment_record_count(handle);
        assert_eq!(count, 2); // dense + one round

        let mut needed = 0usize;
        let st = tl_experiment_record_json(handle, 0, std::ptr::null_mut(), 0, &mut needed);
        assert_eq!(st, TlStatus::ErrBufferTooSmall);
        assert!(needed > 2);
        let mut buf = vec![0i8; needed];
        let st = tl_experiment_record_json(handle, 0, buf.as_mut_ptr(), buf.len(), &mut needed);
        assert_eq!(st, TlStatus::Ok);
        let json = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
        let rec: ticketlab::tickets::TicketRecord = serde_json::from_str(json).unwrap();
        assert_eq!(rec.round, 0);
        tl_experiment_free(handle);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn null_handles_are_safe() {
        assert_eq!(tl_experiment_record_count(std::ptr::null()), 0);
        assert_eq!(
            tl_experiment_run(std::ptr::null_mut(), 1),
            TlStatus::ErrNullArg
        );
        tl_experiment_free(std::ptr::null_mut());
        let bad = tl_experiment_open(std::ptr::null(), std::ptr::null());
        assert!(bad.is_null());
    }
}
