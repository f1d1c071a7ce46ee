pub mod hsfs;
pub mod msfm;
pub mod mssf;
pub mod scam;
pub mod sfe;

pub use hsfs::{HsfsBlock, HsfsOptions};
pub use msfm::{Msfm, MsfmBranch};
pub use mssf::{MssfBlock, MssfOptions};
pub use scam::{Scam, ScamLevel};
pub use sfe::SfeBlock;
