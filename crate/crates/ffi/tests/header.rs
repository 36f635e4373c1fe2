use std::path::{Path, PathBuf};
use std::process::Command;

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(manifest_dir().join("include/dissim.h")).unwrap();
    for sym in [
        "dissim_version",
        "dissim_last_error",
        "dissim_detector_load",
        "dissim_detector_free",
        "dissim_detector_score",
        "dissim_roc_auc",
        "dissim_semantic_difference",
        "dissim_entropy",
        "typedef struct DissimDetector DissimDetector",
        "DISSIM_STATUS_OK = 0",
    ] {
        assert!(h.contains(sym), "header lacks {sym}");
    }
}

fn lib_dir() -> Option<PathBuf> {
    // tests run from target/<profile>/deps
    let exe = std::env::current_exe().ok()?;
    let dir = exe.parent()?.parent()?.to_path_buf();
    dir.join("libdissim_ffi.a").exists().then_some(dir)
}

/// Compile and run a small C program against the header and static library.
#[test]
fn c_program_links_and_runs() {
    let Some(lib) = lib_dir() else {
        eprintln!("static library not found; skipping");
        return;
    };
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("t.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include <string.h>
#include "dissim.h"
int main(void) {
    double s[4] = {0.4, 0.6, 0.5, 0.7};
    unsigned char l[4] = {0, 0, 1, 1};
    double auc = 0;
    if (dissim_roc_auc(s, l, 4, &auc) != DISSIM_STATUS_OK) return 1;
    if (auc != 0.75) return 2;
    DissimDetector *d = NULL;
    if (dissim_detector_load("/nonexistent.ckpt", &d) != DISSIM_STATUS_INVALID_INPUT) return 3;
    if (strlen(dissim_last_error()) == 0) return 4;
    printf("%s\n", dissim_version());
    return 0;
}
"#,
    )
    .unwrap();
    let exe = tmp.path().join("t");
    let inc: &Path = &manifest_dir().join("include");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(inc)
        .arg(lib.join("libdissim_ffi.a"))
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), env!("CARGO_PKG_VERSION"));
}
