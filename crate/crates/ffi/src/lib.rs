//! C ABI over an expert catalog.
//!
//! Handles are opaque pointers created by [`ttmm_catalog_open`] and released
//! with [`ttmm_catalog_free`]. Every fallible call returns a [`TtmmStatus`];
//! the message of the most recent failure on the calling thread is available
//! through [`ttmm_last_error`]. Variable-length outputs use caller buffers: on
//! [`TtmmStatus::BufferTooSmall`] the required length is still written.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ttmm::cli::CATALOG_CONFIG;
use ttmm::config::RunConfig;
use ttmm::embed::{Embedder, HashedNgramEmbedder};
use ttmm::eval::EvalProtocol;
use ttmm::lm::{generate_with, model_perplexity, BaseParams, LoraAdapter};
use ttmm::merge::merge_adapters;
use ttmm::router::{route, route_fixed_n, sparse_softmax, MergeWeights, RoutingConfig};
use ttmm::store::ExpertCatalog;
use ttmm::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TtmmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    CorruptCatalog = 4,
    Config = 5,
    Routing = 6,
    Model = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Opaque catalog handle with the base model and every expert in memory.
pub struct TtmmCatalog {
    catalog: ExpertCatalog,
    base: BaseParams,
    adapters: Vec<LoraAdapter>,
    embedder: HashedNgramEmbedder,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> TtmmStatus {
    match e {
        Error::Io { .. } | Error::MissingAdapterFile { .. } => TtmmStatus::Io,
        Error::CorruptAdapter(_) | Error::FingerprintMismatch { .. } | Error::Catalog(_) => TtmmStatus::CorruptCatalog,
        Error::Config(_) => TtmmStatus::Config,
        Error::TauTooLarge { .. } | Error::ExpertCountOutOfRange { .. } | Error::NoUncertaintyReduction | Error::MissingAdapter(_) => TtmmStatus::Routing,
        Error::OutOfVocabulary { .. }
        | Error::Diverged { .. }
        | Error::DocumentTooShort { .. }
        | Error::ShapeMismatch { .. }
        | Error::EmptySequence => TtmmStatus::Model,
        _ => TtmmStatus::InvalidArgument,
    }
}

struct Failure(TtmmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TtmmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TtmmStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside ttmm");
            TtmmStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(TtmmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(TtmmStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn catalog_arg<'a>(p: *const TtmmCatalog) -> Result<&'a TtmmCatalog, Failure> {
    p.as_ref().ok_or_else(|| null("catalog"))
}

fn open(dir: &Path) -> Result<TtmmCatalog, Error> {
    let catalog = ExpertCatalog::open(dir)?;
    let cfg_path = dir.join(CATALOG_CONFIG);
    let cfg = if cfg_path.exists() { RunConfig::load(&cfg_path)? } else { RunConfig::default() };
    let embedder = HashedNgramEmbedder::new(cfg.embedder)?;
    if embedder.fingerprint() != catalog.manifest().embedder {
        return Err(Error::Catalog(format!(
            "catalog embedder {:?} does not match {:?}",
            catalog.manifest().embedder,
            embedder.fingerprint()
        )));
    }
    let base = catalog.load_base()?;
    let adapters = catalog.load_all()?;
    Ok(TtmmCatalog { catalog, base, adapters, embedder })
}

/// Opens the catalog directory `path` and stores a new handle in `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ttmm_catalog_open(path: *const c_char, out: *mut *mut TtmmCatalog) -> TtmmStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let handle = open(Path::new(path))?;
        *out = Box::into_raw(Box::new(handle));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `catalog` must come from [`ttmm_catalog_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ttmm_catalog_free(catalog: *mut TtmmCatalog) {
    if !catalog.is_null() {
        drop(Box::from_raw(catalog));
    }
}

/// # Safety
/// `catalog` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ttmm_catalog_num_experts(catalog: *const TtmmCatalog, out: *mut usize) -> TtmmStatus {
    guard(|| {
        let cat = catalog_arg(catalog)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = cat.catalog.k();
        Ok(())
    })
}

unsafe fn write_weights(w: &MergeWeights, ids: *mut usize, weights: *mut f64, capacity: usize, out_len: *mut usize) -> Result<(), Failure> {
    if out_len.is_null() {
        return Err(null("out_len"));
    }
    let n = w.n_active();
    *out_len = n;
    if n > capacity {
        return Err(Failure(TtmmStatus::BufferTooSmall, format!("{n} active experts, capacity {capacity}")));
    }
    if ids.is_null() || weights.is_null() {
        return Err(null("output buffer"));
    }
    for (i, &(id, wt)) in w.entries().iter().enumerate() {
        *ids.add(i) = id;
        *weights.add(i) = wt;
    }
    Ok(())
}

/// Sparse-softmax routing of `prompt`; writes active expert ids and weights.
///
/// # Safety
/// Pointers must be valid; `ids` and `weights` must hold `capacity` entries.
#[no_mangle]
pub unsafe extern "C" fn ttmm_route(
    catalog: *const TtmmCatalog,
    prompt: *const c_char,
    beta: f64,
    tau: f64,
    ids: *mut usize,
    weights: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> TtmmStatus {
    guard(|| {
        let cat = catalog_arg(catalog)?;
        let q = cat.embedder.embed(str_arg(prompt, "prompt")?)?;
        let cfg = RoutingConfig { beta, tau, ..RoutingConfig::default() };
        let w = route(&q, cat.catalog.centroids(), &cfg)?;
        write_weights(&w, ids, weights, capacity, out_len)
    })
}

/// Softmax over the `n` experts closest to `prompt`.
///
/// # Safety
/// As [`ttmm_route`].
#[no_mangle]
pub unsafe extern "C" fn ttmm_route_fixed_n(
    catalog: *const TtmmCatalog,
    prompt: *const c_char,
    n: usize,
    beta: f64,
    ids: *mut usize,
    weights: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> TtmmStatus {
    guard(|| {
        let cat = catalog_arg(catalog)?;
        let q = cat.embedder.embed(str_arg(prompt, "prompt")?)?;
        let w = route_fixed_n(&q, cat.catalog.centroids(), n, beta)?;
        write_weights(&w, ids, weights, capacity, out_len)
    })
}

/// Dense sparse softmax of `z[0..k]` into `out[0..k]`.
///
/// # Safety
/// `z` and `out` must each hold `k` values.
#[no_mangle]
pub unsafe extern "C" fn ttmm_sparse_softmax(z: *const f64, k: usize, tau: f64, out: *mut f64) -> TtmmStatus {
    guard(|| {
        if z.is_null() || out.is_null() {
            return Err(null("z or out"));
        }
        let zs = std::slice::from_raw_parts(z, k);
        let dense = sparse_softmax(zs, tau)?.to_dense(k);
        std::slice::from_raw_parts_mut(out, k).copy_from_slice(&dense);
        Ok(())
    })
}

fn merged_weights(cat: &TtmmCatalog, query: &str, beta: f64, tau: f64) -> Result<MergeWeights, Error> {
    let q = cat.embedder.embed(query)?;
    route(&q, cat.catalog.centroids(), &RoutingConfig { beta, tau, ..RoutingConfig::default() })
}

/// Perplexity of `text` under the merge routed on its first
/// `query_prefix_len` characters, scoring after `eval_prefix_len`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ttmm_perplexity(
    catalog: *const TtmmCatalog,
    text: *const c_char,
    query_prefix_len: usize,
    eval_prefix_len: usize,
    beta: f64,
    tau: f64,
    out: *mut f64,
) -> TtmmStatus {
    guard(|| {
        let cat = catalog_arg(catalog)?;
        let text = str_arg(text, "text")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let protocol = EvalProtocol { query_prefix_len, eval_prefix_len, ..EvalProtocol::default() };
        let w = merged_weights(cat, protocol.query(text), beta, tau)?;
        let merged = merge_adapters(&w, &cat.adapters)?;
        *out = model_perplexity(&merged.model(&cat.base)?, &[text], eval_prefix_len)?;
        Ok(())
    })
}

/// Samples up to `n_tokens` characters after `prompt` from the routed merge
/// and writes the NUL-terminated text (prompt included) into `buf`.
/// `*out_len` receives the text length in bytes, without the terminator.
///
/// # Safety
/// Pointers must be valid and `buf` must hold `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn ttmm_generate(
    catalog: *const TtmmCatalog,
    prompt: *const c_char,
    n_tokens: usize,
    beta: f64,
    tau: f64,
    seed: u64,
    buf: *mut c_char,
    capacity: usize,
    out_len: *mut usize,
) -> TtmmStatus {
    guard(|| {
        let cat = catalog_arg(catalog)?;
        let prompt = str_arg(prompt, "prompt")?;
        if out_len.is_null() {
            return Err(null("out_len"));
        }
        let w = merged_weights(cat, prompt, beta, tau)?;
        let merged = merge_adapters(&w, &cat.adapters)?;
        let text = generate_with(&merged.model(&cat.base)?, prompt, n_tokens, seed)?;
        *out_len = text.len();
        if text.len() + 1 > capacity {
            return Err(Failure(TtmmStatus::BufferTooSmall, format!("need {} bytes, capacity {capacity}", text.len() + 1)));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), text.len());
        *buf.add(text.len()) = 0;
        Ok(())
    })
}

/// Message of the last failure on this thread, or null. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn ttmm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ttmm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
