pub mod channels;
pub mod cli;
pub mod error;
pub mod feedback;
pub mod fluctuation;
pub mod linalg;
pub mod random;
pub mod sweep;
pub mod twopoint;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/channels.md")]
    mod channels {}
    #[doc = include_str!("../../../book/src/two-point.md")]
    mod two_point {}
    #[doc = include_str!("../../../book/src/jarzynski.md")]
    mod jarzynski {}
    #[doc = include_str!("../../../book/src/crooks.md")]
    mod crooks {}
    #[doc = include_str!("../../../book/src/heat.md")]
    mod heat {}
    #[doc = include_str!("../../../book/src/feedback.md")]
    mod feedback {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

/// Renders a float with 17 significant digits (`d.dddddddddddddddde±x`),
/// enough to reproduce every `f64` bit-exactly.
pub fn format_sig17(x: f64) -> String {
    format!("{x:.16e}")
}
