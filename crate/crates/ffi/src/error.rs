use std::cell::RefCell;
use std::ffi::{c_char, CString};

/// Result code of every fallible `df_*` call. The message for the most
/// recent failure on the calling thread is available from `df_last_error`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Schema = 4,
    DuplicateTool = 5,
    UnknownBuiltin = 6,
    Build = 7,
    ValidationFailed = 8,
    Binding = 9,
    SchemaViolation = 10,
    Checkpoint = 11,
    Io = 12,
    Engine = 13,
    Panic = 14,
}

pub(crate) struct Error(pub DfStatus, pub String);

impl Error {
    pub fn new(status: DfStatus, msg: impl Into<String>) -> Self {
        Error(status, msg.into())
    }
}

pub(crate) type Res<T> = Result<T, Error>;

thread_local! {
    static LAST: RefCell<Option<CString>> = const { RefCell::new(None) };
}

pub(crate) fn set_last(msg: &str) {
    let c = CString::new(msg.replace('\0', "\\0")).expect("nul bytes replaced");
    LAST.with(|l| *l.borrow_mut() = Some(c));
}

pub(crate) fn clear_last() {
    LAST.with(|l| *l.borrow_mut() = None);
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next `df_*` call on the same thread.
#[no_mangle]
pub extern "C" fn df_last_error() -> *const c_char {
    LAST.with(|l| l.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Runs `f`, converting errors and panics into a status plus message.
pub(crate) fn guard(f: impl FnOnce() -> Res<()>) -> DfStatus {
    clear_last();
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)) {
        Ok(Ok(())) => DfStatus::Ok,
        Ok(Err(Error(status, msg))) => {
            set_last(&msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last(&format!("internal panic: {msg}"));
            DfStatus::Panic
        }
    }
}
