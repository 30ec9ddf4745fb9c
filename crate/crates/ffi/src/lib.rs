//! C ABI over the dsg engine.
//!
//! Graphs cross the boundary as opaque `DsgGraph` handles. Every fallible call
//! returns a `DsgStatus`; on failure the message is kept per thread and can be
//! read with `dsg_last_error`. Strings handed out by this library must be
//! released with `dsg_string_free`, graphs with `dsg_graph_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dsg::backends::{BackendError, QaBackend, QaQuery};
use dsg::codec::{decode_graph, EncodedGraph, ParseMode};
use dsg::graph::SceneGraph;
use dsg::metrics::{kendall_tau, spearman_rho};
use dsg::scoring::{evaluate_item, ErrorPolicy, ScoreMode};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Malformed JSON or annotation text.
    Parse = 3,
    /// The input parsed but violates a graph invariant, e.g. a cycle.
    InvalidGraph = 4,
    /// The caller's buffer is too small; the required length was written out.
    BufferTooSmall = 5,
    InvalidArgument = 6,
    /// Statistics are undefined for the input, e.g. a constant vector.
    Undefined = 7,
    Panic = 8,
}

/// How questions below a failed parent are treated.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsgScoreMode {
    /// Children of a failed parent are never asked.
    Skip = 0,
    /// Everything is asked, then children of failed parents are zeroed.
    ZeroOut = 1,
}

/// Opaque graph handle.
pub struct DsgGraph {
    inner: SceneGraph,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: DsgStatus, msg: impl Into<String>) -> DsgStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning a panic into `DsgStatus::Panic`.
fn guard(f: impl FnOnce() -> DsgStatus) -> DsgStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(DsgStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, DsgStatus> {
    if p.is_null() {
        return Err(fail(DsgStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| fail(DsgStatus::InvalidUtf8, format!("{name}: {e}")))
}

unsafe fn graph_arg<'a>(g: *const DsgGraph) -> Result<&'a SceneGraph, DsgStatus> {
    g.as_ref()
        .map(|g| &g.inner)
        .ok_or_else(|| fail(DsgStatus::NullPointer, "graph is null"))
}

unsafe fn put_graph(out: *mut *mut DsgGraph, g: SceneGraph) -> DsgStatus {
    *out = Box::into_raw(Box::new(DsgGraph { inner: g }));
    DsgStatus::Ok
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// The message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn dsg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Parses a graph from its JSON record form.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dsg_graph_from_json(json: *const c_char, out: *mut *mut DsgGraph) -> DsgStatus {
    guard(|| {
        if out.is_null() {
            return fail(DsgStatus::NullPointer, "out is null");
        }
        let json = tri!(str_arg(json, "json"));
        let record: dsg::graph::GraphRecord = match serde_json::from_str(json) {
            Ok(r) => r,
            Err(e) => return fail(DsgStatus::Parse, e.to_string()),
        };
        match SceneGraph::from_record(record) {
            Ok(g) => put_graph(out, g),
            Err(e) => fail(DsgStatus::InvalidGraph, e.to_string()),
        }
    })
}

/// Builds a graph from the three line-based annotation texts.
/// `lenient` drops malformed lines instead of failing.
///
/// # Safety
/// All strings must be NUL-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dsg_graph_from_annotations(
    prompt_id: *const c_char,
    tuples: *const c_char,
    questions: *const c_char,
    dependencies: *const c_char,
    lenient: bool,
    out: *mut *mut DsgGraph,
) -> DsgStatus {
    guard(|| {
        if out.is_null() {
            return fail(DsgStatus::NullPointer, "out is null");
        }
        let pid = tri!(str_arg(prompt_id, "prompt_id"));
        let enc = EncodedGraph {
            tuples: tri!(str_arg(tuples, "tuples")).to_string(),
            questions: tri!(str_arg(questions, "questions")).to_string(),
            dependencies: tri!(str_arg(dependencies, "dependencies")).to_string(),
        };
        let mode = if lenient { ParseMode::Lenient } else { ParseMode::Strict };
        match decode_graph(pid, &enc, mode) {
            Ok(g) => put_graph(out, g),
            Err(dsg::codec::DecodeError::Graph(e)) => fail(DsgStatus::InvalidGraph, e.to_string()),
            Err(e) => fail(DsgStatus::Parse, e.to_string()),
        }
    })
}

/// Releases a graph. Null is ignored.
///
/// # Safety
/// `g` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dsg_graph_free(g: *mut DsgGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Number of questions; 0 for null.
///
/// # Safety
/// `g` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dsg_graph_question_count(g: *const DsgGraph) -> usize {
    g.as_ref().map_or(0, |g| g.inner.len())
}

/// Writes the question ids in evaluation order. `*len` holds the buffer
/// capacity on entry and the number of ids on return; a short buffer yields
/// `BufferTooSmall` with nothing written.
///
/// # Safety
/// `buf` must hold `*len` elements.
#[no_mangle]
pub unsafe extern "C" fn dsg_graph_topological_order(
    g: *const DsgGraph,
    buf: *mut u32,
    len: *mut usize,
) -> DsgStatus {
    guard(|| {
        let g = tri!(graph_arg(g));
        if len.is_null() {
            return fail(DsgStatus::NullPointer, "len is null");
        }
        let order = g.topological_order();
        let cap = *len;
        *len = order.len();
        if cap < order.len() {
            return fail(DsgStatus::BufferTooSmall, format!("need {} slots", order.len()));
        }
        if buf.is_null() && !order.is_empty() {
            return fail(DsgStatus::NullPointer, "buf is null");
        }
        if !order.is_empty() {
            ptr::copy_nonoverlapping(order.as_ptr(), buf, order.len());
        }
        DsgStatus::Ok
    })
}

/// Serializes the graph to its JSON record form. Free with `dsg_string_free`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dsg_graph_to_json(g: *const DsgGraph, out: *mut *mut c_char) -> DsgStatus {
    guard(|| {
        let g = tri!(graph_arg(g));
        if out.is_null() {
            return fail(DsgStatus::NullPointer, "out is null");
        }
        let json = serde_json::to_string(&g.to_record()).expect("graph serializes");
        *out = CString::new(json).expect("JSON has no NUL").into_raw();
        DsgStatus::Ok
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dsg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Answers indexed by question id - 1.
struct FixedAnswers<'a>(&'a [u8]);

impl QaBackend for FixedAnswers<'_> {
    fn name(&self) -> &str {
        "fixed"
    }

    fn ask(&self, q: &QaQuery<'_>) -> Result<String, BackendError> {
        let id = q.tuple.map(|t| t.id).unwrap_or(0) as usize;
        match self.0.get(id.wrapping_sub(1)) {
            Some(0) => Ok("no".into()),
            Some(_) => Ok("yes".into()),
            None => Err(BackendError::Unavailable(format!("no answer for question {id}"))),
        }
    }
}

/// Scores one set of yes/no answers against the graph.
///
/// `answers[i]` is nonzero when question `i + 1` was answered yes; `scores`
/// receives the final 0/1 score of each question in the same layout. Both
/// arrays must hold exactly `n` elements, `n` being the question count.
/// The mean score goes to `average`.
///
/// # Safety
/// `answers` and `scores` must each hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn dsg_graph_evaluate(
    g: *const DsgGraph,
    answers: *const u8,
    n: usize,
    mode: DsgScoreMode,
    scores: *mut u8,
    average: *mut f64,
) -> DsgStatus {
    guard(|| {
        let g = tri!(graph_arg(g));
        if answers.is_null() || scores.is_null() || average.is_null() {
            return fail(DsgStatus::NullPointer, "answers, scores and average must be non-null");
        }
        if n != g.len() {
            return fail(
                DsgStatus::InvalidArgument,
                format!("graph has {} questions, got {n} answers", g.len()),
            );
        }
        let mode = match mode {
            DsgScoreMode::Skip => ScoreMode::Skip,
            DsgScoreMode::ZeroOut => ScoreMode::ZeroOut,
        };
        let given = std::slice::from_raw_parts(answers, n);
        let e = match evaluate_item(g, "", &FixedAnswers(given), mode, ErrorPolicy::FailItem) {
            Ok(e) => e,
            Err(e) => return fail(DsgStatus::InvalidArgument, e.to_string()),
        };
        let out = std::slice::from_raw_parts_mut(scores, n);
        for (&id, &s) in &e.scores {
            out[id as usize - 1] = s;
        }
        *average = e.average_score;
        DsgStatus::Ok
    })
}

unsafe fn rank_stat(
    x: *const f64,
    y: *const f64,
    n: usize,
    out: *mut f64,
    f: fn(&[f64], &[f64]) -> Result<f64, dsg::metrics::StatsError>,
) -> DsgStatus {
    guard(|| {
        if x.is_null() || y.is_null() || out.is_null() {
            return fail(DsgStatus::NullPointer, "x, y and out must be non-null");
        }
        let (x, y) = (std::slice::from_raw_parts(x, n), std::slice::from_raw_parts(y, n));
        match f(x, y) {
            Ok(v) => {
                *out = v;
                DsgStatus::Ok
            }
            Err(e) => fail(DsgStatus::Undefined, e.to_string()),
        }
    })
}

/// Spearman's rho with average ranks for ties.
///
/// # Safety
/// `x` and `y` must each hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn dsg_spearman(x: *const f64, y: *const f64, n: usize, out: *mut f64) -> DsgStatus {
    rank_stat(x, y, n, out, spearman_rho)
}

/// Kendall's tau-b.
///
/// # Safety
/// `x` and `y` must each hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn dsg_kendall(x: *const f64, y: *const f64, n: usize, out: *mut f64) -> DsgStatus {
    rank_stat(x, y, n, out, kendall_tau)
}
