//! Turning model responses into workspace files.

mod apply;
pub mod fs;
pub mod protocol;

pub use apply::{apply_projection, project_response, AppliedFile, ProjectionResult, RejectedFile};
pub use protocol::{parse_response, render_block, render_blocks, FileBlock, ParseWarning, ParsedResponse, WarningKind, FILE_HEADER};
