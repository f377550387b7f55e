use std::env;

fn main() {
    // System OpenBLAS provides both the CBLAS and the LAPACK symbols.
    let lib = env::var("GWALK_BLAS_LIB").unwrap_or_else(|_| "openblas".to_string());
    if let Ok(dir) = env::var("GWALK_BLAS_DIR") {
        println!("cargo:rustc-link-search=native={dir}");
    }
    println!("cargo:rustc-link-lib=dylib={lib}");
    println!("cargo:rerun-if-env-changed=GWALK_BLAS_LIB");
    println!("cargo:rerun-if-env-changed=GWALK_BLAS_DIR");
}
