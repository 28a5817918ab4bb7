use std::ffi::{CStr, CString};
use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use binadv::function::synth::{generate, SynthConfig};
use binadv::function::write_corpus;
use binadv_ffi::*;

fn corpus(dir: &Path) -> CString {
    let path = dir.join("c.jsonl");
    let fs = generate(&SynthConfig { families: 8, variants: 2, seed: 5, ..Default::default() });
    write_corpus(File::create(&path).unwrap(), &fs).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(binadv_last_error()) }.to_string_lossy().into_owned()
}

fn open(path: &CString, family: BinadvFamily) -> *mut BinadvSession {
    let mut s = ptr::null_mut();
    let st = unsafe { binadv_session_open(path.as_ptr(), ptr::null(), ptr::null(), family, 3, &mut s) };
    assert_eq!(st, BinadvStatus::Ok, "{}", last_error());
    s
}

#[test]
fn session_similarity_and_names() {
    let dir = tempfile::tempdir().unwrap();
    let s = open(&corpus(dir.path()), BinadvFamily::AcfgGnn);
    unsafe {
        assert_eq!(binadv_session_len(s), 16);
        let mut sim = f64::NAN;
        assert_eq!(binadv_similarity(s, 0, 0, &mut sim), BinadvStatus::Ok);
        assert!((sim - 1.0).abs() < 1e-9);
        assert_eq!(binadv_similarity(s, 0, 99, &mut sim), BinadvStatus::InvalidArgument);
        assert!(last_error().contains("range"));
        let mut buf = [0 as libc::c_char; 5];
        let mut len = 0;
        assert_eq!(binadv_session_name(s, 0, buf.as_mut_ptr(), buf.len(), &mut len), BinadvStatus::Ok);
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_bytes().len(), 4);
        assert!(len > 4);
        assert!(last_error().is_empty());
        binadv_session_free(s);
    }
}

#[test]
fn attack_through_the_c_abi() {
    let dir = tempfile::tempdir().unwrap();
    let s = open(&corpus(dir.path()), BinadvFamily::AcfgGnn);
    let mut p = binadv_attack_params_default();
    p.attack = BinadvAttack::GrayboxGreedy;
    p.mode = BinadvMode::Targeted;
    let mut r = BinadvAttackResult::default();
    unsafe {
        assert_eq!(binadv_attack(s, &p, 0, 5, &mut r), BinadvStatus::Ok, "{}", last_error());
        assert!(r.inserted <= 15);
        assert!(r.final_sim >= r.initial_sim);
        p.attack = BinadvAttack::Spatial;
        assert_eq!(binadv_attack(s, &p, 0, 5, &mut r), BinadvStatus::Config);
        assert!(last_error().contains("embeddings"));
        p.setting = 7;
        assert_eq!(binadv_attack(s, &p, 0, 5, &mut r), BinadvStatus::InvalidArgument);
        binadv_session_free(s);
    }
}

#[test]
fn null_and_bad_arguments() {
    unsafe {
        let mut s = ptr::null_mut();
        let st = binadv_session_open(ptr::null(), ptr::null(), ptr::null(), BinadvFamily::SeqEmbed, 0, &mut s);
        assert_eq!(st, BinadvStatus::NullPointer);
        let missing = CString::new("/nonexistent/corpus.jsonl").unwrap();
        let st = binadv_session_open(missing.as_ptr(), ptr::null(), ptr::null(), BinadvFamily::AcfgGnn, 0, &mut s);
        assert_eq!(st, BinadvStatus::Corpus);
        assert!(s.is_null());
        assert_eq!(binadv_session_len(ptr::null()), 0);
        binadv_session_free(ptr::null_mut());
        let bad = CString::new("{\"attacks\": []}").unwrap();
        assert_eq!(binadv_run_experiment(bad.as_ptr(), ptr::null_mut()), BinadvStatus::Config);
        assert!(!CStr::from_ptr(binadv_version()).to_bytes().is_empty());
    }
}

#[test]
fn experiment_from_json() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let cfg = serde_json::json!({
        "attacks": ["graybox-greedy"], "mode": "targeted", "model": "graph-matcher", "dataset": "random",
        "settings": ["C1", "C2"], "epsilon": 0.1, "r": 0.75, "c": 10, "topk": 5, "cand": 10, "pairs": 3, "seed": 1,
        "corpus": c.to_str().unwrap(), "out": dir.path().join("out"),
    });
    let text = CString::new(cfg.to_string()).unwrap();
    let mut cells = 0;
    assert_eq!(unsafe { binadv_run_experiment(text.as_ptr(), &mut cells) }, BinadvStatus::Ok, "{}", last_error());
    assert_eq!(cells, 2);
    assert!(dir.path().join("out/aggregate.json").exists());
}

fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include <string.h>
#include "binadv.h"
int main(int argc, char **argv) {
    BinadvSession *s = NULL;
    if (binadv_session_open("/nonexistent", NULL, NULL, BINADV_FAMILY_ACFG_GNN, 0, &s) != BINADV_STATUS_CORPUS) return 1;
    if (strlen(binadv_last_error()) == 0) return 2;
    if (binadv_session_open(argv[1], NULL, NULL, BINADV_FAMILY_ACFG_GNN, 0, &s) != BINADV_STATUS_OK) return 3;
    double sim = -1.0;
    if (binadv_similarity(s, 0, 1, &sim) != BINADV_STATUS_OK || sim < 0.0 || sim > 1.0) return 4;
    BinadvAttackParams p = binadv_attack_params_default();
    p.attack = BINADV_ATTACK_GCAM;
    p.mode = BINADV_MODE_TARGETED;
    p.gcam_iters = 20;
    BinadvAttackResult r;
    if (binadv_attack(s, &p, 0, 3, &r) != BINADV_STATUS_OK) return 5;
    printf("%zu %s\n", binadv_session_len(s), binadv_version());
    binadv_session_free(s);
    return 0;
}
"#,
    )
    .unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let lib = artifact_dir();
    let exe = dir.path().join("probe");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg("-L")
        .arg(&lib)
        .arg("-lbinadv_ffi")
        .arg("-o")
        .arg(&exe)
        .status()
        .expect("a C compiler on PATH");
    assert!(status.success());
    let out = Command::new(&exe).arg(c.to_str().unwrap()).env("LD_LIBRARY_PATH", &lib).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("16 "));
}
