//! Built-in encoder families.

mod enet;
mod erfnet;
mod mobile;
mod sk_unet;

pub use enet::EnetEncoder;
pub use erfnet::ErfnetEncoder;
pub use mobile::MobileEncoder;
pub use sk_unet::SkUnetEncoder;

use crate::{Error, Result};

use super::NetworkSpec;

pub(crate) fn check_depth(spec: &NetworkSpec, max: usize) -> Result<()> {
    if spec.depth > max {
        return Err(Error::Config(format!(
            "{} supports at most {max} encoder levels, got depth {}",
            spec.variant, spec.depth
        )));
    }
    Ok(())
}
