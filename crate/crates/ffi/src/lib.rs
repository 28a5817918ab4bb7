//! C ABI over the attack toolkit.
//!
//! Every fallible call returns a [`BinadvStatus`]; on failure the message is
//! available from [`binadv_last_error`] on the same thread. Handles are
//! opaque, created by `*_open`/`*_new` calls and released by `*_free`.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::sync::Arc;

use libc::{c_char, c_int, size_t};

use binadv::attacks::Mode;
use binadv::embedding::EmbeddingTable;
use binadv::eval::{attack_one, load_fixtures, run_experiment, AttackKind, DatasetKind, EvalError, Fixtures, RunConfig, Setting};
use binadv::features::ModelFamily;
use binadv::function::load_corpus;
use binadv::models::SimilarityModel;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinadvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Config = 5,
    Corpus = 6,
    Model = 7,
    Attack = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinadvFamily {
    AcfgGnn = 0,
    GraphMatcher = 1,
    SeqEmbed = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinadvAttack {
    Greedy = 0,
    GrayboxGreedy = 1,
    Spatial = 2,
    Gcam = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinadvMode {
    Targeted = 0,
    Untargeted = 1,
}

/// Attack parameters. Start from [`binadv_attack_params_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinadvAttackParams {
    pub attack: BinadvAttack,
    pub mode: BinadvMode,
    /// Budget level 1..=4.
    pub setting: u32,
    /// Success threshold; NaN selects the default of the mode.
    pub tau: f64,
    pub epsilon: f64,
    pub r: f64,
    pub c: size_t,
    pub topk: size_t,
    pub cand: size_t,
    /// GCAM iterations; 0 selects the per-family default.
    pub gcam_iters: size_t,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BinadvAttackResult {
    pub success: bool,
    pub initial_sim: f64,
    pub final_sim: f64,
    pub inserted: size_t,
    pub iterations: size_t,
}

/// A corpus with a model and optional embedding table.
pub struct BinadvSession {
    fixtures: Fixtures,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(BinadvStatus, String);

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        let code = match &e {
            EvalError::Config { .. } | EvalError::InsufficientCorpus { .. } | EvalError::EmptyInput => BinadvStatus::Config,
            EvalError::Io(_) | EvalError::Csv(_) | EvalError::Json(_) => BinadvStatus::Io,
            EvalError::Corpus(_) => BinadvStatus::Corpus,
            EvalError::Model(_) | EvalError::Embedding(_) => BinadvStatus::Model,
            EvalError::Attack(_) => BinadvStatus::Attack,
        };
        Failure(code, e.to_string())
    }
}

fn fail(code: BinadvStatus, msg: impl Into<String>) -> Failure {
    Failure(code, msg.into())
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BinadvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            BinadvStatus::Ok
        }
        Ok(Err(Failure(code, msg))) => {
            set_error(&msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            BinadvStatus::Panic
        }
    }
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(BinadvStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(BinadvStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn opt_path(p: *const c_char, what: &str) -> Result<Option<PathBuf>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        string(p, what).map(|s| Some(PathBuf::from(s)))
    }
}

unsafe fn session<'a>(s: *const BinadvSession) -> Result<&'a BinadvSession, Failure> {
    s.as_ref().ok_or_else(|| fail(BinadvStatus::NullPointer, "session is null"))
}

fn family(f: BinadvFamily) -> ModelFamily {
    match f {
        BinadvFamily::AcfgGnn => ModelFamily::AcfgGnn,
        BinadvFamily::GraphMatcher => ModelFamily::GraphMatcher,
        BinadvFamily::SeqEmbed => ModelFamily::SeqEmbed,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn binadv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, empty after a success.
/// Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn binadv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Opens a session. `embeddings` and `weights` may be null; without weights
/// the model is initialized from `seed`.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn binadv_session_open(
    corpus: *const c_char,
    embeddings: *const c_char,
    weights: *const c_char,
    model: BinadvFamily,
    seed: u64,
    out: *mut *mut BinadvSession,
) -> BinadvStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(BinadvStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let corpus = load_corpus(string(corpus, "corpus")?).map_err(|e| fail(BinadvStatus::Corpus, e.to_string()))?;
        let table = match opt_path(embeddings, "embeddings")? {
            Some(p) => Some(Arc::new(EmbeddingTable::load(p).map_err(|e| fail(BinadvStatus::Model, e.to_string()))?)),
            None => None,
        };
        let m = match opt_path(weights, "weights")? {
            Some(p) => SimilarityModel::load(p, table.clone()),
            None => SimilarityModel::new(family(model), seed, table.clone()),
        }
        .map_err(|e| fail(BinadvStatus::Model, e.to_string()))?;
        if m.family() != family(model) {
            return Err(fail(BinadvStatus::Config, "the weights belong to another model family"));
        }
        *out = Box::into_raw(Box::new(BinadvSession { fixtures: Fixtures { corpus, model: m, table } }));
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a handle from [`binadv_session_open`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn binadv_session_free(s: *mut BinadvSession) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Number of functions in the session corpus, 0 for a null handle.
///
/// # Safety
/// `s` must be null or a live session.
#[no_mangle]
pub unsafe extern "C" fn binadv_session_len(s: *const BinadvSession) -> size_t {
    s.as_ref().map_or(0, |s| s.fixtures.corpus.len())
}

/// Copies the name of function `i` into `buf` (NUL-terminated, truncated to
/// `cap`) and stores the untruncated length in `len`.
///
/// # Safety
/// `buf` must hold `cap` bytes or be null with `cap == 0`; `len` may be null.
#[no_mangle]
pub unsafe extern "C" fn binadv_session_name(
    s: *const BinadvSession,
    i: size_t,
    buf: *mut c_char,
    cap: size_t,
    len: *mut size_t,
) -> BinadvStatus {
    guard(|| {
        let s = session(s)?;
        let f = s.fixtures.corpus.get(i).ok_or_else(|| fail(BinadvStatus::InvalidArgument, "index out of range"))?;
        let name = f.name.as_bytes();
        if !len.is_null() {
            *len = name.len();
        }
        if cap > 0 {
            if buf.is_null() {
                return Err(fail(BinadvStatus::NullPointer, "buf is null"));
            }
            let n = name.len().min(cap - 1);
            ptr::copy_nonoverlapping(name.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        Ok(())
    })
}

/// Similarity in `[0, 1]` of functions `i` and `j`.
///
/// # Safety
/// `s` must be a live session and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn binadv_similarity(s: *const BinadvSession, i: size_t, j: size_t, out: *mut f64) -> BinadvStatus {
    guard(|| {
        let s = session(s)?;
        let out = out.as_mut().ok_or_else(|| fail(BinadvStatus::NullPointer, "out is null"))?;
        let c = &s.fixtures.corpus;
        if i >= c.len() || j >= c.len() {
            return Err(fail(BinadvStatus::InvalidArgument, "index out of range"));
        }
        *out = s.fixtures.model.sim(&c[i], &c[j]);
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn binadv_attack_params_default() -> BinadvAttackParams {
    BinadvAttackParams {
        attack: BinadvAttack::Spatial,
        mode: BinadvMode::Untargeted,
        setting: 1,
        tau: f64::NAN,
        epsilon: 0.1,
        r: 0.75,
        c: 10,
        topk: 5,
        cand: 400,
        gcam_iters: 0,
        seed: 0,
    }
}

fn run_config(model: ModelFamily, p: &BinadvAttackParams) -> Result<(RunConfig, AttackKind, Setting), Failure> {
    let setting = match p.setting {
        1..=4 => Setting::ALL[p.setting as usize - 1],
        n => return Err(fail(BinadvStatus::InvalidArgument, format!("setting {n} is not in 1..=4"))),
    };
    let attack = match p.attack {
        BinadvAttack::Greedy => AttackKind::Greedy,
        BinadvAttack::GrayboxGreedy => AttackKind::GrayboxGreedy,
        BinadvAttack::Spatial => AttackKind::Spatial,
        BinadvAttack::Gcam => AttackKind::Gcam,
    };
    let (mode, dataset) = match p.mode {
        BinadvMode::Targeted => (Mode::Targeted, DatasetKind::Random),
        BinadvMode::Untargeted => (Mode::Untargeted, DatasetKind::Untarg),
    };
    let cfg = RunConfig {
        attacks: vec![attack],
        settings: vec![setting],
        tau: (!p.tau.is_nan()).then_some(p.tau),
        epsilon: p.epsilon,
        r: p.r,
        c: p.c,
        topk: p.topk,
        cand: p.cand,
        seed: p.seed,
        gcam_iters: (p.gcam_iters > 0).then_some(p.gcam_iters),
        ..RunConfig::new(model, mode, dataset, PathBuf::new())
    };
    Ok((cfg, attack, setting))
}

/// Attacks the pair (`source`, `target`) of the session corpus.
///
/// # Safety
/// `s` must be a live session, `params` readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn binadv_attack(
    s: *const BinadvSession,
    params: *const BinadvAttackParams,
    source: size_t,
    target: size_t,
    out: *mut BinadvAttackResult,
) -> BinadvStatus {
    guard(|| {
        let s = session(s)?;
        let p = params.as_ref().ok_or_else(|| fail(BinadvStatus::NullPointer, "params is null"))?;
        let out = out.as_mut().ok_or_else(|| fail(BinadvStatus::NullPointer, "out is null"))?;
        let (cfg, attack, setting) = run_config(s.fixtures.model.family(), p)?;
        let o = attack_one(&cfg, &s.fixtures, attack, setting, 0, source, target)?;
        *out = BinadvAttackResult {
            success: o.success,
            initial_sim: o.initial_sim,
            final_sim: o.final_sim,
            inserted: o.inserted,
            iterations: o.iterations,
        };
        Ok(())
    })
}

/// Runs an experiment grid described by a JSON run configuration and writes
/// its reports to the configured output directory. `cells`, when not null,
/// receives the number of grid cells.
///
/// # Safety
/// `config_json` must be NUL-terminated; `cells` may be null.
#[no_mangle]
pub unsafe extern "C" fn binadv_run_experiment(config_json: *const c_char, cells: *mut c_int) -> BinadvStatus {
    guard(|| {
        let text = string(config_json, "config_json")?;
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| fail(BinadvStatus::Config, e.to_string()))?;
        let fx = load_fixtures(&cfg)?;
        let reports = run_experiment(&cfg, &fx)?;
        if let Some(c) = cells.as_mut() {
            *c = reports.len() as c_int;
        }
        Ok(())
    })
}
