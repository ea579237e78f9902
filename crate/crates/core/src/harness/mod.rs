//! Command-line workflows: single-image segmentation, batch study reports,
//! phantom studies and the interactive session server.

mod manifest;
mod report;
mod segment_files;
mod session;
mod study;

pub use manifest::{read_manifest, write_manifest, ManifestRow, MANIFEST_COLUMNS};
pub use report::{
    evaluate_manifest, evaluate_rows, write_report, LesionEvaluation, StudyReport, SubsetReport, OVERLAP_COLUMNS,
    TESTS_COLUMNS, TIMES_COLUMNS,
};
pub use segment_files::{format_result, run_segment, write_segmentation, SegmentOutputs};
pub use session::{
    replay, replay_input, serve, serve_tcp, EventKind, Session, SessionConfig, SessionEvent, SessionLog,
};
pub use study::{build_phantom_study, StudyOptions};

use crate::error::{Error, ErrorClass};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_COMPUTATION: i32 = 3;
pub const EXIT_PROTOCOL: i32 = 4;

pub fn exit_code(err: &Error) -> i32 {
    match err.class() {
        ErrorClass::Input => EXIT_INPUT,
        ErrorClass::Computation => EXIT_COMPUTATION,
        ErrorClass::Protocol => EXIT_PROTOCOL,
    }
}
