//! Run specification and serialization layers of the `rmhmc` binary,
//! exposed as a library so the output documents can be read back with the
//! same types that wrote them.

pub mod output;
pub mod spec;
