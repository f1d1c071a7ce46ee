pub mod attention;
pub mod basic;
pub mod conv;
pub mod gate;
pub mod norm;
pub mod resize;
pub mod spectral;
pub mod unfold;

use std::borrow::Cow;

use crate::graph::Tensor;

/// Contiguous view of a tensor's data, copying only when the layout is not
/// standard.
pub(crate) fn flat(t: &Tensor) -> Cow<'_, [f64]> {
    match t.as_slice() {
        Some(s) => Cow::Borrowed(s),
        None => Cow::Owned(t.iter().cloned().collect()),
    }
}
