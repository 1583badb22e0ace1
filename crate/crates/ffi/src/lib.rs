//! C ABI over the topic-align library.
//!
//! Objects cross the boundary as opaque handles (`TaCounts`, `TaEnsemble`,
//! `TaAlignment`) that the caller releases with the matching `*_free`
//! function. Every function returns a [`TaStatus`]; on failure a description
//! is available from [`ta_last_error`] on the same thread. Matrices are
//! exchanged as row-major `double` buffers whose capacity the caller passes
//! explicitly.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use ndarray::Array2;
use topic_align::alignment::Method;
use topic_align::corpus::{load_counts, load_ensemble, save_ensemble, CorpusError, CountFormat, CountMatrix};
use topic_align::lda::{fit_ensemble, perplexity, GibbsConfig, LdaError, ModelEnsemble};
use topic_align::measures::{cosine_similarity, jsd};
use topic_align::report::{analyze, summarize, AlignmentDocument};
use topic_align::transport::{solve_exact, TransportProblem};
use topic_align::{Error, SeededRng};

/// Result of every `ta_*` call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    MalformedFile = 3,
    Io = 4,
    Schema = 5,
    Dimension = 6,
    Transport = 7,
    Panic = 8,
    BufferTooSmall = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaMethod {
    Product = 0,
    Transport = 1,
}

/// One topic of an alignment. `refinement` is meaningful only when
/// `has_refinement` is true (it is false for the finest model).
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TaNode {
    pub model: usize,
    pub topic: usize,
    pub display_index: usize,
    pub path: usize,
    pub mass: f64,
    pub coherence: f64,
    pub refinement: f64,
    pub has_refinement: bool,
}

/// Sample-by-feature count matrix.
pub struct TaCounts(CountMatrix);

/// LDA models fitted across a range of K.
pub struct TaEnsemble(ModelEnsemble);

/// Aligned ensemble with paths and scores.
pub struct TaAlignment(AlignmentDocument);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let clean = message.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).expect("interior NULs removed"));
}

struct Failure(TaStatus, String);

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let status = match &err {
            Error::Usage(_) | Error::Simulation(_) | Error::Measure(_) => TaStatus::InvalidArgument,
            Error::Lda(LdaError::DimensionMismatch { .. }) => TaStatus::Dimension,
            Error::Lda(_) | Error::Diagnostics(_) => TaStatus::InvalidArgument,
            Error::Corpus(CorpusError::MalformedFile(_)) => TaStatus::MalformedFile,
            Error::Corpus(CorpusError::IoFailure { .. }) => TaStatus::Io,
            Error::Corpus(CorpusError::SchemaMismatch(_)) => TaStatus::Schema,
            Error::Corpus(_) => TaStatus::InvalidArgument,
            Error::Transport(_) | Error::Align(_) => TaStatus::Transport,
        };
        Failure(status, err.to_string())
    }
}

macro_rules! impl_from_lib_error {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(err: $t) -> Self {
                Error::from(err).into()
            }
        }
    )*};
}

impl_from_lib_error!(
    CorpusError,
    LdaError,
    topic_align::measures::MeasureError,
    topic_align::transport::TransportError,
    topic_align::alignment::AlignError
);

fn fail<T>(status: TaStatus, message: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, message.into()))
}

/// Run `body`, converting errors and panics into a status code.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> TaStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => TaStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {message}"));
            TaStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    if p.is_null() {
        return fail(TaStatus::NullPointer, format!("`{name}` is null"));
    }
    Ok(&*p)
}

unsafe fn out_ptr<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    if p.is_null() {
        return fail(TaStatus::NullPointer, format!("`{name}` is null"));
    }
    Ok(&mut *p)
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(TaStatus::NullPointer, format!("`{name}` is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, needed: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len < needed {
        return fail(TaStatus::BufferTooSmall, format!("`{name}` holds {len} values, {needed} needed"));
    }
    if p.is_null() {
        return fail(TaStatus::NullPointer, format!("`{name}` is null"));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return fail(TaStatus::NullPointer, "`path` is null");
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => fail(TaStatus::InvalidArgument, "path is not valid UTF-8"),
    }
}

fn copy_matrix(src: &Array2<f64>, dst: &mut [f64]) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d = *s;
    }
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ta_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Build a count matrix from `n_samples * n_features` row-major counts.
///
/// # Safety
/// `data` must point to `n_samples * n_features` readable values and `out`
/// to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn ta_counts_from_dense(
    data: *const u64,
    n_samples: usize,
    n_features: usize,
    out: *mut *mut TaCounts,
) -> TaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let len = n_samples
            .checked_mul(n_features)
            .ok_or_else(|| Failure(TaStatus::InvalidArgument, "dimensions overflow".into()))?;
        let values = slice(data, len, "data")?.to_vec();
        let counts = Array2::from_shape_vec((n_samples, n_features), values)
            .map_err(|e| Failure(TaStatus::InvalidArgument, e.to_string()))?;
        *out = Box::into_raw(Box::new(TaCounts(CountMatrix::from_counts(counts)?)));
        Ok(())
    })
}

/// Load counts from a `.csv` or `.json` file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ta_counts_load(path: *const c_char, out: *mut *mut TaCounts) -> TaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = path_arg(path)?;
        let counts = load_counts(&path, CountFormat::from_path(&path))?;
        *out = Box::into_raw(Box::new(TaCounts(counts)));
        Ok(())
    })
}

/// # Safety
/// `counts` must be a live handle; `n_samples` and `n_features` writable.
#[no_mangle]
pub unsafe extern "C" fn ta_counts_dims(
    counts: *const TaCounts,
    n_samples: *mut usize,
    n_features: *mut usize,
) -> TaStatus {
    guard(|| {
        let c = &deref(counts, "counts")?.0;
        *out_ptr(n_samples, "n_samples")? = c.n_samples();
        *out_ptr(n_features, "n_features")? = c.n_features();
        Ok(())
    })
}

/// # Safety
/// `counts` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ta_counts_free(counts: *mut TaCounts) {
    if !counts.is_null() {
        drop(Box::from_raw(counts));
    }
}

/// Fit one model per K in `k_min..=k_max` by collapsed Gibbs sampling.
///
/// # Safety
/// `counts` must be a live handle and `out` writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn ta_ensemble_fit(
    counts: *const TaCounts,
    k_min: usize,
    k_max: usize,
    lambda_gamma: f64,
    lambda_beta: f64,
    burn_in: usize,
    samples: usize,
    thin: usize,
    seed: u64,
    out: *mut *mut TaEnsemble,
) -> TaStatus {
    guard(|| {
        let counts = &deref(counts, "counts")?.0;
        let out = out_ptr(out, "out")?;
        let cfg = GibbsConfig { burn_in, samples, thin, rng: SeededRng::new(seed) };
        let ensemble = fit_ensemble(counts, k_min..=k_max, lambda_gamma, lambda_beta, &cfg)?;
        *out = Box::into_raw(Box::new(TaEnsemble(ensemble)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ta_ensemble_load(path: *const c_char, out: *mut *mut TaEnsemble) -> TaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let ensemble = load_ensemble(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(TaEnsemble(ensemble)));
        Ok(())
    })
}

/// # Safety
/// `ensemble` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ta_ensemble_save(ensemble: *const TaEnsemble, path: *const c_char) -> TaStatus {
    guard(|| {
        let e = &deref(ensemble, "ensemble")?.0;
        save_ensemble(e, &path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `ensemble` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ta_ensemble_free(ensemble: *mut TaEnsemble) {
    if !ensemble.is_null() {
        drop(Box::from_raw(ensemble));
    }
}

/// # Safety
/// `ensemble` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ta_ensemble_num_models(ensemble: *const TaEnsemble, out: *mut usize) -> TaStatus {
    guard(|| {
        *out_ptr(out, "out")? = deref(ensemble, "ensemble")?.0.len();
        Ok(())
    })
}

unsafe fn model_at<'a>(ensemble: *const TaEnsemble, index: usize) -> Result<&'a topic_align::TopicModel, Failure> {
    let e: &'a TaEnsemble = deref(ensemble, "ensemble")?;
    match e.0.models.get(index) {
        Some(m) => Ok(m),
        None => fail(TaStatus::InvalidArgument, format!("model index {index} out of range (have {})", e.0.len())),
    }
}

/// Topic count, feature count and sample count of model `index`.
///
/// # Safety
/// `ensemble` must be a live handle; output pointers writable.
#[no_mangle]
pub unsafe extern "C" fn ta_ensemble_model_dims(
    ensemble: *const TaEnsemble,
    index: usize,
    k: *mut usize,
    n_features: *mut usize,
    n_samples: *mut usize,
) -> TaStatus {
    guard(|| {
        let m = model_at(ensemble, index)?;
        *out_ptr(k, "k")? = m.k();
        *out_ptr(n_features, "n_features")? = m.n_features();
        *out_ptr(n_samples, "n_samples")? = m.n_samples();
        Ok(())
    })
}

/// Copy the D x K topic matrix of model `index` (row-major, columns are
/// topics) into `buf`.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ta_ensemble_beta(
    ensemble: *const TaEnsemble,
    index: usize,
    buf: *mut f64,
    len: usize,
) -> TaStatus {
    guard(|| {
        let m = model_at(ensemble, index)?;
        copy_matrix(&m.beta, slice_mut(buf, len, m.beta.len(), "buf")?);
        Ok(())
    })
}

/// Copy the N x K membership matrix of model `index` (row-major) into `buf`.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ta_ensemble_gamma(
    ensemble: *const TaEnsemble,
    index: usize,
    buf: *mut f64,
    len: usize,
) -> TaStatus {
    guard(|| {
        let m = model_at(ensemble, index)?;
        copy_matrix(&m.gamma, slice_mut(buf, len, m.gamma.len(), "buf")?);
        Ok(())
    })
}

/// Held-out perplexity of model `index` on `heldout`.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ta_perplexity(
    ensemble: *const TaEnsemble,
    index: usize,
    heldout: *const TaCounts,
    seed: u64,
    out: *mut f64,
) -> TaStatus {
    guard(|| {
        let m = model_at(ensemble, index)?;
        let heldout = &deref(heldout, "heldout")?.0;
        let cfg = GibbsConfig { rng: SeededRng::new(seed), ..GibbsConfig::default() };
        *out_ptr(out, "out")? = perplexity(m, heldout, &cfg)?;
        Ok(())
    })
}

/// Align all model pairs, reorder topics for display, assign paths and score
/// every topic.
///
/// # Safety
/// `ensemble` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ta_align(ensemble: *const TaEnsemble, method: TaMethod, out: *mut *mut TaAlignment) -> TaStatus {
    guard(|| {
        let e = &deref(ensemble, "ensemble")?.0;
        let out = out_ptr(out, "out")?;
        let method = match method {
            TaMethod::Product => Method::Product,
            TaMethod::Transport => Method::Transport,
        };
        let analysis = analyze(e, method)?;
        *out = Box::into_raw(Box::new(TaAlignment(AlignmentDocument::new(e, &analysis))));
        Ok(())
    })
}

/// # Safety
/// `alignment` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ta_alignment_free(alignment: *mut TaAlignment) {
    if !alignment.is_null() {
        drop(Box::from_raw(alignment));
    }
}

/// # Safety
/// `alignment` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ta_alignment_num_nodes(alignment: *const TaAlignment, out: *mut usize) -> TaStatus {
    guard(|| {
        *out_ptr(out, "out")? = deref(alignment, "alignment")?.0.nodes.len();
        Ok(())
    })
}

/// Node `index` in model-major, topic-minor order.
///
/// # Safety
/// `alignment` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ta_alignment_node(alignment: *const TaAlignment, index: usize, out: *mut TaNode) -> TaStatus {
    guard(|| {
        let doc = &deref(alignment, "alignment")?.0;
        let Some(n) = doc.nodes.get(index) else {
            return fail(TaStatus::InvalidArgument, format!("node index {index} out of range"));
        };
        *out_ptr(out, "out")? = TaNode {
            model: n.model,
            topic: n.index,
            display_index: n.display_index,
            path: n.path,
            mass: n.mass,
            coherence: n.coherence,
            refinement: n.refinement.unwrap_or(f64::NAN),
            has_refinement: n.refinement.is_some(),
        };
        Ok(())
    })
}

/// Number of distinct paths among the topics of model `model`.
///
/// # Safety
/// `alignment` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ta_alignment_n_paths(alignment: *const TaAlignment, model: usize, out: *mut usize) -> TaStatus {
    guard(|| {
        let doc = &deref(alignment, "alignment")?.0;
        let summary = summarize(doc);
        let Some(m) = summary.models.get(model) else {
            return fail(TaStatus::InvalidArgument, format!("model index {model} out of range"));
        };
        *out_ptr(out, "out")? = m.n_paths;
        Ok(())
    })
}

/// Raw weights between models `m < m2` as a row-major `K_m x K_m2` matrix.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ta_alignment_pair_weights(
    alignment: *const TaAlignment,
    m: usize,
    m2: usize,
    buf: *mut f64,
    len: usize,
) -> TaStatus {
    guard(|| {
        let doc = &deref(alignment, "alignment")?.0;
        let Some(pair) = doc.pairs.iter().find(|p| p.m == m && p.m2 == m2) else {
            return fail(TaStatus::InvalidArgument, format!("no pair ({m}, {m2}); need m < m2 < number of models"));
        };
        let needed = pair.w.iter().map(Vec::len).sum();
        let dst = slice_mut(buf, len, needed, "buf")?;
        for (d, s) in dst.iter_mut().zip(pair.w.iter().flatten()) {
            *d = *s;
        }
        Ok(())
    })
}

/// Write the alignment document as JSON.
///
/// # Safety
/// `alignment` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ta_alignment_write_json(alignment: *const TaAlignment, path: *const c_char) -> TaStatus {
    guard(|| {
        let doc = &deref(alignment, "alignment")?.0;
        doc.save(&path_arg(path)?)?;
        Ok(())
    })
}

/// Jensen-Shannon divergence (natural log) between two vectors of length `len`.
///
/// # Safety
/// `p` and `q` must point to `len` readable doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ta_jsd(p: *const f64, q: *const f64, len: usize, out: *mut f64) -> TaStatus {
    guard(|| {
        *out_ptr(out, "out")? = jsd(slice(p, len, "p")?, slice(q, len, "q")?)?;
        Ok(())
    })
}

/// # Safety
/// `p` and `q` must point to `len` readable doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ta_cosine(p: *const f64, q: *const f64, len: usize, out: *mut f64) -> TaStatus {
    guard(|| {
        *out_ptr(out, "out")? = cosine_similarity(slice(p, len, "p")?, slice(q, len, "q")?)?;
        Ok(())
    })
}

/// Exact optimal transport between `supply` (length `a`) and `demand`
/// (length `b`) under a row-major `a x b` cost matrix. Writes the plan into
/// `plan` (row-major, `a * b` values) and its cost into `objective`.
///
/// # Safety
/// Input pointers must cover the stated lengths; outputs writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn ta_transport_solve(
    supply: *const f64,
    a: usize,
    demand: *const f64,
    b: usize,
    cost: *const f64,
    plan: *mut f64,
    plan_len: usize,
    objective: *mut f64,
) -> TaStatus {
    guard(|| {
        let cells = a
            .checked_mul(b)
            .ok_or_else(|| Failure(TaStatus::InvalidArgument, "dimensions overflow".into()))?;
        let supply = slice(supply, a, "supply")?.to_vec();
        let demand = slice(demand, b, "demand")?.to_vec();
        let cost = Array2::from_shape_vec((a, b), slice(cost, cells, "cost")?.to_vec())
            .map_err(|e| Failure(TaStatus::InvalidArgument, e.to_string()))?;
        let objective = out_ptr(objective, "objective")?;
        let dst = slice_mut(plan, plan_len, cells, "plan")?;
        let solution = solve_exact(&TransportProblem::new(supply, demand, cost)?);
        copy_matrix(&solution.plan, dst);
        *objective = solution.objective;
        Ok(())
    })
}
