//! Compiles a small C program against the generated header and runs it
//! against the shared library.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "portobello.h"

int main(void) {
    double pts[] = {0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1};
    PbMap *map = NULL;
    if (pb_map_from_points(pts, 4, &map) != PB_STATUS_OK) return 1;
    if (pb_map_len(map) != 4) return 2;
    char hash[65];
    if (pb_map_hash(map, hash, sizeof hash) != PB_STATUS_OK || strlen(hash) != 64) return 3;
    double q[3] = {0.9, 0.1, 0};
    size_t idx = 99;
    double dist = 0;
    if (pb_map_nearest(map, q, &idx, &dist) != PB_STATUS_OK || idx != 1) return 4;
    pb_map_free(map);
    if (pb_map_load(NULL, &map) != PB_STATUS_NULL_POINTER || pb_last_error() == NULL) return 5;
    printf("%s\n", pb_version());
    return 0;
}
"#;

fn compiler() -> Option<String> {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    Command::new(&cc).arg("--version").output().ok().filter(|o| o.status.success()).map(|_| cc)
}

#[test]
fn header_compiles_and_links() {
    let Some(cc) = compiler() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // the shared library sits beside this test binary in target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe
        .ancestors()
        .skip(1)
        .take(2)
        .find(|d| d.join("libportobello_ffi.so").exists())
        .expect("libportobello_ffi.so not built next to the test binary")
        .to_path_buf();
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    let bin = dir.path().join("smoke");
    std::fs::write(&src, PROGRAM).unwrap();
    let out = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&bin)
        .arg(&src)
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .arg("-lportobello_ffi")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).env("LD_LIBRARY_PATH", &lib_dir).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), env!("CARGO_PKG_VERSION"));
}
