//! The screening platform's data plane: de-identification, ingest
//! harmonization, the internal PACS and the depersonalized register.

pub mod deid;
pub mod ingest;
pub mod pacs;
pub mod registry;
