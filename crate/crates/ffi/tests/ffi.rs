use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use topic_align_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ta_last_error()) }.to_string_lossy().into_owned()
}

/// Two well-separated word blocks, so K = 2 fits are easy.
fn block_counts() -> (Vec<u64>, usize, usize) {
    let (n, d) = (12, 6);
    let mut data = vec![0u64; n * d];
    for i in 0..n {
        for j in 0..d {
            let in_block = (i < n / 2) == (j < d / 2);
            data[i * d + j] = if in_block { 20 + (i + j) as u64 % 3 } else { (i * j) as u64 % 2 };
        }
    }
    (data, n, d)
}

fn fitted() -> *mut TaEnsemble {
    let (data, n, d) = block_counts();
    let mut counts = ptr::null_mut();
    let mut ens = ptr::null_mut();
    unsafe {
        assert_eq!(ta_counts_from_dense(data.as_ptr(), n, d, &mut counts), TaStatus::Ok);
        assert_eq!(ta_ensemble_fit(counts, 1, 3, 0.5, 0.1, 30, 10, 1, 7, &mut ens), TaStatus::Ok);
        ta_counts_free(counts);
    }
    ens
}

#[test]
fn fit_align_and_read_back() {
    let ens = fitted();
    unsafe {
        let mut n_models = 0;
        assert_eq!(ta_ensemble_num_models(ens, &mut n_models), TaStatus::Ok);
        assert_eq!(n_models, 3);
        let (mut k, mut d, mut n) = (0, 0, 0);
        assert_eq!(ta_ensemble_model_dims(ens, 1, &mut k, &mut d, &mut n), TaStatus::Ok);
        assert_eq!((k, d, n), (2, 6, 12));

        let mut beta = vec![0.0; d * k];
        assert_eq!(ta_ensemble_beta(ens, 1, beta.as_mut_ptr(), beta.len()), TaStatus::Ok);
        for col in 0..k {
            let s: f64 = (0..d).map(|row| beta[row * k + col]).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        let mut gamma = vec![0.0; n * k];
        assert_eq!(ta_ensemble_gamma(ens, 1, gamma.as_mut_ptr(), gamma.len()), TaStatus::Ok);
        assert_eq!(ta_ensemble_gamma(ens, 1, gamma.as_mut_ptr(), 3), TaStatus::BufferTooSmall);
        assert_eq!(ta_ensemble_gamma(ens, 9, gamma.as_mut_ptr(), gamma.len()), TaStatus::InvalidArgument);
        assert!(last_error().contains("out of range"));

        for method in [TaMethod::Product, TaMethod::Transport] {
            let mut al = ptr::null_mut();
            assert_eq!(ta_align(ens, method, &mut al), TaStatus::Ok);
            let mut nodes = 0;
            assert_eq!(ta_alignment_num_nodes(al, &mut nodes), TaStatus::Ok);
            assert_eq!(nodes, 1 + 2 + 3);
            let mut node = TaNode::default();
            assert_eq!(ta_alignment_node(al, 5, &mut node), TaStatus::Ok);
            assert_eq!((node.model, node.topic, node.path), (2, 2, 2));
            assert!(!node.has_refinement);
            assert_eq!(ta_alignment_node(al, 0, &mut node), TaStatus::Ok);
            assert!(node.has_refinement && node.refinement.is_finite());
            let mut paths = 0;
            assert_eq!(ta_alignment_n_paths(al, 2, &mut paths), TaStatus::Ok);
            assert_eq!(paths, 3);
            let mut w = vec![0.0; 6];
            assert_eq!(ta_alignment_pair_weights(al, 1, 2, w.as_mut_ptr(), w.len()), TaStatus::Ok);
            let total: f64 = w.iter().sum();
            assert!((total - 12.0).abs() < 1e-6, "weights sum to {total}");
            assert_eq!(ta_alignment_pair_weights(al, 2, 1, w.as_mut_ptr(), w.len()), TaStatus::InvalidArgument);
            ta_alignment_free(al);
        }
        ta_ensemble_free(ens);
    }
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ens = fitted();
    let ens_path = CString::new(dir.path().join("e.json").to_str().unwrap()).unwrap();
    let al_path = CString::new(dir.path().join("a.json").to_str().unwrap()).unwrap();
    unsafe {
        assert_eq!(ta_ensemble_save(ens, ens_path.as_ptr()), TaStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(ta_ensemble_load(ens_path.as_ptr(), &mut back), TaStatus::Ok);
        let (mut a, mut b) = (vec![0.0; 18], vec![0.0; 18]);
        ta_ensemble_beta(ens, 2, a.as_mut_ptr(), 18);
        ta_ensemble_beta(back, 2, b.as_mut_ptr(), 18);
        assert_eq!(a, b);

        let mut al = ptr::null_mut();
        assert_eq!(ta_align(back, TaMethod::Product, &mut al), TaStatus::Ok);
        assert_eq!(ta_alignment_write_json(al, al_path.as_ptr()), TaStatus::Ok);
        let text = std::fs::read_to_string(dir.path().join("a.json")).unwrap();
        assert!(text.contains("\"method\": \"product\""));

        let missing = CString::new(dir.path().join("nope.json").to_str().unwrap()).unwrap();
        let mut none = ptr::null_mut();
        assert_eq!(ta_ensemble_load(missing.as_ptr(), &mut none), TaStatus::Io);
        assert!(none.is_null());
        std::fs::write(dir.path().join("bad.json"), "{not json").unwrap();
        let bad = CString::new(dir.path().join("bad.json").to_str().unwrap()).unwrap();
        assert_eq!(ta_ensemble_load(bad.as_ptr(), &mut none), TaStatus::MalformedFile);
        std::fs::write(dir.path().join("schema.json"), "[{\"k\": 2}]").unwrap();
        let schema = CString::new(dir.path().join("schema.json").to_str().unwrap()).unwrap();
        assert_eq!(ta_ensemble_load(schema.as_ptr(), &mut none), TaStatus::Schema);

        ta_alignment_free(al);
        ta_ensemble_free(back);
        ta_ensemble_free(ens);
    }
}

#[test]
fn perplexity_checks_dimensions() {
    let ens = fitted();
    let (data, n, d) = block_counts();
    unsafe {
        let mut heldout = ptr::null_mut();
        assert_eq!(ta_counts_from_dense(data.as_ptr(), n, d, &mut heldout), TaStatus::Ok);
        let mut p = 0.0;
        assert_eq!(ta_perplexity(ens, 1, heldout, 3, &mut p), TaStatus::Ok);
        assert!(p > 1.0 && p < d as f64);
        let narrow = [1u64; 4 * 3];
        let mut other = ptr::null_mut();
        assert_eq!(ta_counts_from_dense(narrow.as_ptr(), 4, 3, &mut other), TaStatus::Ok);
        assert_eq!(ta_perplexity(ens, 1, other, 3, &mut p), TaStatus::Dimension);
        ta_counts_free(other);
        ta_counts_free(heldout);
        ta_ensemble_free(ens);
    }
}

#[test]
fn measures_and_transport() {
    let p = [1.0, 0.0];
    let q = [0.0, 1.0];
    let mut out = 0.0;
    unsafe {
        assert_eq!(ta_jsd(p.as_ptr(), q.as_ptr(), 2, &mut out), TaStatus::Ok);
        assert!((out - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(ta_cosine(p.as_ptr(), q.as_ptr(), 2, &mut out), TaStatus::Ok);
        assert_eq!(out, 0.0);
        let zero = [0.0, 0.0];
        assert_eq!(ta_cosine(zero.as_ptr(), q.as_ptr(), 2, &mut out), TaStatus::InvalidArgument);

        let supply = [0.5, 0.5];
        let demand = [0.5, 0.5];
        let cost = [0.0, 1.0, 1.0, 0.0];
        let mut plan = [9.0; 4];
        let mut objective = -1.0;
        let status =
            ta_transport_solve(supply.as_ptr(), 2, demand.as_ptr(), 2, cost.as_ptr(), plan.as_mut_ptr(), 4, &mut objective);
        assert_eq!(status, TaStatus::Ok);
        assert_eq!(plan, [0.5, 0.0, 0.0, 0.5]);
        assert_eq!(objective, 0.0);
        let unbalanced = [1.0, 1.0];
        let status = ta_transport_solve(
            supply.as_ptr(),
            2,
            unbalanced.as_ptr(),
            2,
            cost.as_ptr(),
            plan.as_mut_ptr(),
            4,
            &mut objective,
        );
        assert_eq!(status, TaStatus::Transport);
        assert!(!last_error().is_empty());
    }
}

#[test]
fn null_pointers_are_reported() {
    unsafe {
        let mut n = 0;
        assert_eq!(ta_ensemble_num_models(ptr::null(), &mut n), TaStatus::NullPointer);
        assert!(last_error().contains("ensemble"));
        assert_eq!(ta_counts_load(ptr::null(), ptr::null_mut()), TaStatus::NullPointer);
        assert_eq!(ta_jsd(ptr::null(), ptr::null(), 3, &mut 0.0), TaStatus::NullPointer);
        ta_counts_free(ptr::null_mut());
        ta_ensemble_free(ptr::null_mut());
        ta_alignment_free(ptr::null_mut());
    }
}

/// Static library built alongside this test, in `target/<profile>/deps` or its parent.
fn static_library() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    let deps = exe.parent().unwrap();
    [deps, deps.parent().unwrap()]
        .iter()
        .map(|d| d.join("libtopic_align_ffi.a"))
        .find(|p| p.exists())
        .expect("static library next to the test binary")
}

#[test]
fn c_program_links_against_static_library() {
    let header_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    assert!(header_dir.join("topic_align.h").exists(), "header was not generated");
    let lib = static_library();
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include <stdint.h>
#include "topic_align.h"
int main(void) {
    uint64_t data[12] = {9, 8, 0, 1, 7, 9, 1, 0, 0, 1, 8, 9};
    TaCounts *counts = NULL;
    TaEnsemble *ens = NULL;
    TaAlignment *al = NULL;
    if (ta_counts_from_dense(data, 3, 4, &counts) != TA_STATUS_OK) return 1;
    if (ta_ensemble_fit(counts, 1, 2, 0.5, 0.1, 20, 5, 1, 1, &ens) != TA_STATUS_OK) return 2;
    if (ta_align(ens, TA_METHOD_PRODUCT, &al) != TA_STATUS_OK) return 3;
    size_t nodes = 0;
    if (ta_alignment_num_nodes(al, &nodes) != TA_STATUS_OK || nodes != 3) return 4;
    TaNode node;
    if (ta_alignment_node(al, 0, &node) != TA_STATUS_OK || !node.has_refinement) return 5;
    if (ta_ensemble_num_models(NULL, &nodes) != TA_STATUS_NULL_POINTER) return 6;
    printf("ok %s\n", ta_last_error());
    ta_alignment_free(al);
    ta_ensemble_free(ens);
    ta_counts_free(counts);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&header_dir)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success(), "C smoke program failed to compile");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "smoke program exited with {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
