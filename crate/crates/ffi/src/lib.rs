//! C ABI for dr1.
//!
//! Every fallible function returns a [`Dr1Status`]; on failure the message
//! is kept per thread and can be copied out with
//! [`dr1_last_error_message`]. Policies are opaque handles created by
//! [`dr1_policy_load`] and released with [`dr1_policy_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use dr1::error::Error;
use dr1::eval::compute_metrics;
use dr1::grpo::compute_advantages;
use dr1::policy::{featurize_text, read_checkpoint, PolicyParams};
use dr1::reward::{parse_boxed_answer, r_cold, r_task, ToleranceProfile};
use dr1::scales::Profile;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dr1Status {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Argument = 4,
    UnknownIndex = 5,
    Io = 6,
    Parse = 7,
    Feature = 8,
    Checkpoint = 9,
    Numeric = 10,
    Balancing = 11,
    Leakage = 12,
    BufferTooSmall = 13,
    Panic = 14,
}

/// Binary metrics as fractions in [0, 1], plus the confusion counts.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Dr1Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

/// Opaque policy handle.
pub struct Dr1Policy {
    params: PolicyParams,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn status_of(e: &Error) -> Dr1Status {
    match e {
        Error::Config(_) => Dr1Status::Config,
        Error::Argument(_) => Dr1Status::Argument,
        Error::UnknownIndex(_) => Dr1Status::UnknownIndex,
        Error::Io { .. } => Dr1Status::Io,
        Error::Parse(_) => Dr1Status::Parse,
        Error::Feature(_) => Dr1Status::Feature,
        Error::Checkpoint(_) => Dr1Status::Checkpoint,
        Error::Numeric(_) => Dr1Status::Numeric,
        Error::Balancing(_) => Dr1Status::Balancing,
        Error::Leakage(_) => Dr1Status::Leakage,
    }
}

struct Failure(Dr1Status, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn fail(status: Dr1Status, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> Dr1Status {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (Dr1Status::Ok, String::new()),
        Ok(Err(Failure(s, m))) => (s, m),
        Err(_) => (Dr1Status::Panic, "internal panic".to_string()),
    };
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
    status
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(Dr1Status::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(Dr1Status::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn input<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(Dr1Status::NullPointer, format!("{what} is null")));
    }
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn output<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(Dr1Status::NullPointer, format!("{what} is null")))
}

fn profile(name: &str) -> Result<Profile, Failure> {
    name.parse::<Profile>().map_err(Failure::from)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dr1_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy the calling thread's last error message into `buf`.
///
/// Returns the message length plus one for the terminator. When that is
/// larger than `len` the message is truncated; pass `len == 0` to query
/// the size. An empty message means the last call succeeded.
///
/// # Safety
/// `buf` must be valid for `len` bytes, or null when `len` is 0.
#[no_mangle]
pub unsafe extern "C" fn dr1_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len() + 1
    })
}

/// 1.0 when `|predicted - truth| <= delta`, else 0.0.
#[no_mangle]
pub extern "C" fn dr1_r_cold(predicted: f64, truth: f64, delta: f64) -> f64 {
    r_cold(predicted, truth, delta)
}

/// 1.0 when the labels match, else 0.0.
#[no_mangle]
pub extern "C" fn dr1_r_task(predicted_label: u8, true_label: u8) -> f64 {
    r_task(predicted_label, true_label)
}

/// Parse the `<answer>\boxed{v}</answer>` value out of a completion.
///
/// # Safety
/// `completion` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dr1_parse_boxed_answer(completion: *const c_char, out: *mut f64) -> Dr1Status {
    guard(|| {
        let text = text(completion, "completion")?;
        let out = output(out, "out")?;
        *out = parse_boxed_answer(text)?.value;
        Ok(())
    })
}

/// Tolerance `delta` of `index` under profile `"amc"` or `"adni"`.
///
/// # Safety
/// Both strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dr1_tolerance(profile_name: *const c_char, index: *const c_char, out: *mut f64) -> Dr1Status {
    guard(|| {
        let p = profile(text(profile_name, "profile")?)?;
        let index = text(index, "index")?;
        let out = output(out, "out")?;
        *out = ToleranceProfile::for_profile(p).tolerance_for(index)?;
        Ok(())
    })
}

/// Group-standardized advantages of `n` rewards, written to `out`.
///
/// # Safety
/// `rewards` and `out` must each hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn dr1_compute_advantages(rewards: *const f64, n: usize, out: *mut f64) -> Dr1Status {
    guard(|| {
        let rewards = input(rewards, n, "rewards")?;
        if n == 0 {
            return Ok(());
        }
        if out.is_null() {
            return Err(fail(Dr1Status::NullPointer, "out is null"));
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(fail(Dr1Status::Numeric, "non-finite reward"));
        }
        let adv = compute_advantages(rewards);
        ptr::copy_nonoverlapping(adv.as_ptr(), out, n);
        Ok(())
    })
}

/// Binary metrics of `n` 0/1 predictions against 0/1 labels.
///
/// # Safety
/// `predictions` and `labels` must each hold `n` bytes; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn dr1_compute_metrics(
    predictions: *const u8,
    labels: *const u8,
    n: usize,
    out: *mut Dr1Metrics,
) -> Dr1Status {
    guard(|| {
        let p = input(predictions, n, "predictions")?;
        let l = input(labels, n, "labels")?;
        let out = output(out, "out")?;
        let r = compute_metrics(p, l)?;
        *out = Dr1Metrics {
            accuracy: r.accuracy,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
            tp: r.counts.tp,
            fp: r.counts.fp,
            tn: r.counts.tn,
            fn_: r.counts.fn_,
        };
        Ok(())
    })
}

/// Load a policy checkpoint. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dr1_policy_load(path: *const c_char, out: *mut *mut Dr1Policy) -> Dr1Status {
    guard(|| {
        let path = text(path, "path")?;
        let out = output(out, "out")?;
        *out = ptr::null_mut();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let params = read_checkpoint(bytes.as_slice())?.params;
        *out = Box::into_raw(Box::new(Dr1Policy { params }));
        Ok(())
    })
}

/// Release a handle from [`dr1_policy_load`]. Null is ignored.
///
/// # Safety
/// `policy` must come from `dr1_policy_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dr1_policy_free(policy: *mut Dr1Policy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

unsafe fn policy<'a>(p: *const Dr1Policy) -> Result<&'a PolicyParams, Failure> {
    p.as_ref().map(|h| &h.params).ok_or_else(|| fail(Dr1Status::NullPointer, "policy is null"))
}

/// Number of answer values of `task` (an index name or `"diagnosis"`).
///
/// # Safety
/// `policy` must be a live handle; `task` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dr1_policy_num_actions(
    policy_handle: *const Dr1Policy,
    task: *const c_char,
    out: *mut usize,
) -> Dr1Status {
    guard(|| {
        let params = policy(policy_handle)?;
        let head = params.head_index(text(task, "task")?)?;
        *output(out, "out")? = params.space(head).len();
        Ok(())
    })
}

/// Answer values of `task`, in action order.
///
/// # Safety
/// `values` must hold `cap` doubles; `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dr1_policy_actions(
    policy_handle: *const Dr1Policy,
    task: *const c_char,
    values: *mut f64,
    cap: usize,
    written: *mut usize,
) -> Dr1Status {
    guard(|| {
        let params = policy(policy_handle)?;
        let head = params.head_index(text(task, "task")?)?;
        let actions = &params.space(head).actions;
        copy_out(actions, values, cap, written)
    })
}

unsafe fn copy_out(src: &[f64], dst: *mut f64, cap: usize, written: *mut usize) -> Result<(), Failure> {
    let written = output(written, "written")?;
    *written = src.len();
    if cap < src.len() {
        return Err(fail(Dr1Status::BufferTooSmall, format!("need {} values, buffer holds {cap}", src.len())));
    }
    if dst.is_null() {
        return Err(fail(Dr1Status::NullPointer, "output buffer is null"));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

/// Answer distribution of `task` for a linearized history prompt and a
/// forecast gap in months.
///
/// `*written` is set to the number of actions even when the buffer is too
/// small.
///
/// # Safety
/// `probs` must hold `cap` doubles; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dr1_policy_distribution(
    policy_handle: *const Dr1Policy,
    task: *const c_char,
    prompt: *const c_char,
    gap_months: f64,
    probs: *mut f64,
    cap: usize,
    written: *mut usize,
) -> Dr1Status {
    guard(|| {
        let params = policy(policy_handle)?;
        let task = text(task, "task")?;
        let x = featurize_text(text(prompt, "prompt")?, gap_months, params.profile)?;
        let dist = params.distribution(task, &x.values)?;
        copy_out(&dist.probs, probs, cap, written)
    })
}

/// Most probable answer value of `task` for the prompt.
///
/// # Safety
/// Strings NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dr1_policy_predict(
    policy_handle: *const Dr1Policy,
    task: *const c_char,
    prompt: *const c_char,
    gap_months: f64,
    out: *mut f64,
) -> Dr1Status {
    guard(|| {
        let params = policy(policy_handle)?;
        let head = params.head_index(text(task, "task")?)?;
        let x = featurize_text(text(prompt, "prompt")?, gap_months, params.profile)?;
        let dist = params.forward(head, &x.values)?.dist;
        *output(out, "out")? = params.space(head).actions[dist.argmax()];
        Ok(())
    })
}
