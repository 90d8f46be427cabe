//! On-disk formats.
//!
//! * `.xcam`: one attribution map (binary, little-endian).
//! * `.xcpi`: one pseudo image (binary, little-endian).
//! * detections / ground truth: JSON lines, one record per line.
//! * feature datasets: CSV with a fixed header.
//!
//! Every reader reports the byte offset or line number of the first problem.

mod grid_file;
mod records;
mod table;

pub use grid_file::{
    decode_pseudo_image, decode_xcam, encode_pseudo_image, encode_xcam, read_pseudo_image,
    read_xcam, write_pseudo_image, write_xcam, XCAM_MAGIC, XCAM_VERSION, XCPI_MAGIC,
};
pub use records::{
    read_detections, read_ground_truths, read_matches, write_detections, write_ground_truths,
    write_matches, DetectionReader, DetectionRecord, GroundTruthRecord, MatchRecord, RecordReader,
};
pub use table::{read_features, write_features, FEATURE_COLUMNS};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic {found:?} (expected {expected:?})")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },
    #[error("unsupported version {0}")]
    VersionUnsupported(u16),
    #[error("truncated at byte {offset}: need {needed} more bytes")]
    TruncatedPayload { offset: usize, needed: usize },
    #[error("{extra} unexpected trailing bytes at offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("bad value at byte {offset}: {reason}")]
    BadValue { offset: usize, reason: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
