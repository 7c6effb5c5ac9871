//! Workspace-relative paths.
//!
//! Every path the model emits goes through [`RelPath::parse`] before it can
//! touch the filesystem. A `RelPath` is always relative, uses `/` as the only
//! separator, has no empty, `.` or `..` segments, and contains no characters
//! that decode or render as a separator.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const MAX_PATH_LEN: usize = 1024;
pub const MAX_SEGMENT_LEN: usize = 255;
pub const MAX_DEPTH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathRejection {
    Empty,
    AbsolutePath,
    ParentSegment,
    EncodedSeparator,
    ControlCharacter,
    TooLong,
}

impl fmt::Display for PathRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PathRejection::Empty => "empty",
            PathRejection::AbsolutePath => "absolute-path",
            PathRejection::ParentSegment => "parent-segment",
            PathRejection::EncodedSeparator => "encoded-separator",
            PathRejection::ControlCharacter => "control-character",
            PathRejection::TooLong => "too-long",
        })
    }
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelPath(String);

// Characters that some renderer or filesystem may treat as `/` or `.`.
const LOOKALIKES: &[char] = &[
    '\u{2215}', // division slash
    '\u{2044}', // fraction slash
    '\u{ff0f}', // fullwidth solidus
    '\u{ff3c}', // fullwidth reverse solidus
    '\u{29f8}', // big solidus
    '\u{2024}', // one dot leader
    '\u{ff0e}', // fullwidth full stop
];

const ENCODED: &[&str] = &["%2e", "%2f", "%5c", "%00", "%25"];

impl RelPath {
    pub fn parse(raw: &str) -> Result<Self, PathRejection> {
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            return Err(PathRejection::Empty);
        }
        if trimmed.len() > MAX_PATH_LEN {
            return Err(PathRejection::TooLong);
        }
        if trimmed.chars().any(|c| c.is_control()) {
            return Err(PathRejection::ControlCharacter);
        }
        if trimmed.chars().any(|c| LOOKALIKES.contains(&c)) {
            return Err(PathRejection::EncodedSeparator);
        }
        let lower = trimmed.to_ascii_lowercase();
        if ENCODED.iter().any(|e| lower.contains(e)) {
            return Err(PathRejection::EncodedSeparator);
        }
        let unified = trimmed.replace('\\', "/");
        if unified.starts_with('/') || unified.starts_with('~') || has_drive_prefix(&unified) {
            return Err(PathRejection::AbsolutePath);
        }

        let mut segments = Vec::new();
        // Segments are trimmed: a name ending in a space is never what the
        // model meant and some filesystems drop it anyway.
        for seg in unified.split('/').map(str::trim) {
            match seg {
                "" | "." => continue,
                ".." => return Err(PathRejection::ParentSegment),
                s if s.len() > MAX_SEGMENT_LEN => return Err(PathRejection::TooLong),
                // Trailing dots/spaces are stripped by some filesystems, which
                // would turn `...` or `.. ` back into a parent reference.
                s if s.trim_end_matches(['.', ' ']).is_empty() => {
                    return Err(PathRejection::ParentSegment)
                }
                s => segments.push(s),
            }
        }
        if segments.is_empty() {
            return Err(PathRejection::Empty);
        }
        if segments.len() > MAX_DEPTH {
            return Err(PathRejection::TooLong);
        }
        Ok(RelPath(segments.join("/")))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn segments(&self) -> impl Iterator<Item = &str> {
        self.0.split('/')
    }

    /// Location under `root`. Safe by construction: no segment can climb out.
    pub fn under(&self, root: &Path) -> PathBuf {
        let mut out = root.to_path_buf();
        for seg in self.segments() {
            out.push(seg);
        }
        out
    }

    pub fn starts_with_dir(&self, dir: &str) -> bool {
        let dir = dir.trim_end_matches('/');
        self.0 == dir || self.0.starts_with(&format!("{dir}/"))
    }
}

fn has_drive_prefix(s: &str) -> bool {
    let b = s.as_bytes();
    (b.len() >= 2 && b[0].is_ascii_alphabetic() && b[1] == b':') || s.contains(':')
}

impl fmt::Display for RelPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for RelPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl AsRef<str> for RelPath {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl std::str::FromStr for RelPath {
    type Err = PathRejection;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RelPath::parse(s)
    }
}

impl Serialize for RelPath {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for RelPath {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        RelPath::parse(&s).map_err(|r| serde::de::Error::custom(format!("{s}: {r}")))
    }
}
