use std::path::Path;
use std::process::Command;

fn header() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/gkdv.h")
}

#[test]
fn header_declares_the_api() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "gkdv_last_error",
        "gkdv_field_new",
        "gkdv_field_free",
        "gkdv_snapshot_load",
        "gkdv_spectrum_compute",
        "gkdv_run",
        "GKDV_STATUS_OK",
        "typedef struct GkdvField GkdvField",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
}

#[test]
fn header_compiles_as_c_and_cpp() {
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let Ok(out) = Command::new(compiler).args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang]).arg(header()).output()
        else {
            eprintln!("{compiler} not available; skipped");
            continue;
        };
        assert!(out.status.success(), "{compiler}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
