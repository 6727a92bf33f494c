//! Compiles a C program against the generated header and the static library.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include <string.h>
#include "eroc.h"

int main(void) {
    if (strlen(eroc_version()) == 0) return 10;

    double t1[] = {3.0, 2.0, 5.0};
    double u1[] = {1.0, 0.5, 0.25};
    double t0[] = {1.0, 2.0};
    ErocAeroc a;
    if (eroc_aeroc(t1, u1, 3, t0, 2, 0, 0.9, 0, &a) != EROC_STATUS_OK) return 11;
    /* (1 * 2 + 0.5 * 1.5 + 0.25 * 2) / 6 */
    if (fabs(a.value - 3.25 / 6.0) > 1e-12) return 12;

    double e[] = {1.0}, th[] = {4.0}, u;
    if (eroc_utility_eval("quadratic:100", e, th, 1, &u) != EROC_STATUS_OK) return 13;
    if (fabs(u - 0.91) > 1e-12) return 14;

    if (eroc_utility_eval("bogus", e, th, 1, &u) != EROC_STATUS_INVALID_ARGUMENT) return 15;
    if (eroc_last_error() == NULL) return 16;

    ErocConfig *cfg = NULL;
    if (eroc_config_load("bke", NULL, &cfg) != EROC_STATUS_OK) return 17;
    size_t w, h, d;
    eroc_config_shape(cfg, &w, &h, &d);
    if (w != 64 || h != 64 || d != 1) return 18;
    eroc_config_free(cfg);
    puts("ok");
    return 0;
}
"#;

fn compiler() -> Option<String> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| {
            Command::new(c)
                .arg("--version")
                .output()
                .is_ok_and(|o| o.status.success())
        })
        .map(String::from)
}

#[test]
fn c_program_links_and_runs() {
    let Some(cc) = compiler() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // Test binaries live in <target>/<profile>/deps; the static library is
    // one level up.
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap().to_path_buf();
    let lib = lib_dir.join("liberoc_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    let bin = dir.path().join("smoke");
    std::fs::write(&src, PROGRAM).unwrap();
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}
