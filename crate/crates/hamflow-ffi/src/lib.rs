//! C ABI surface: opaque model handles, status codes, sampling and the
//! forward cosmology model. The header is generated by cbindgen into
//! `include/hamflow.h`.

use std::ffi::{c_char, CStr, CString};

/// Placeholder so the crate compiles while the core library grows.
#[no_mangle]
pub extern "C" fn hf_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

#[allow(dead_code)]
fn _unused(_: &CStr, _: CString) {}
