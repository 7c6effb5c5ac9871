//! The file-emission protocol shared by the prompt composer and the
//! projector. Each file is a header line at column 0 followed by a fenced
//! code block:
//!
//! ````text
//! ### FILE: client/src/views/Questions.vue
//! ```vue
//! <template>...</template>
//! ```
//! ````
//!
//! Headers are only recognised outside fences, so code that mentions the
//! marker is safe as long as it sits inside a block. Blank lines between a
//! header and its fence are allowed.

use serde::{Deserialize, Serialize};

pub const FILE_HEADER: &str = "### FILE:";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileBlock {
    /// The path exactly as emitted (trimmed); validated at projection time.
    pub path: String,
    pub content: String,
    pub fence_language_tag: Option<String>,
}

impl FileBlock {
    pub fn new(path: impl Into<String>, content: impl Into<String>) -> Self {
        FileBlock {
            path: path.into(),
            content: content.into(),
            fence_language_tag: None,
        }
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.fence_language_tag = Some(tag.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WarningKind {
    /// A header not followed by an opening fence.
    MissingFence,
    /// An opening fence with no closing fence before end of input.
    UnterminatedFence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseWarning {
    /// 1-based line number of the header.
    pub line: usize,
    pub path: String,
    pub kind: WarningKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub blocks: Vec<FileBlock>,
    /// Every line not consumed by a file block, joined with `\n`.
    pub narrative: String,
    pub warnings: Vec<ParseWarning>,
}

struct Fence {
    ch: char,
    len: usize,
}

fn opening_fence(line: &str) -> Option<(Fence, Option<String>)> {
    let ch = line.chars().next()?;
    if ch != '`' && ch != '~' {
        return None;
    }
    let len = line.chars().take_while(|&c| c == ch).count();
    if len < 3 {
        return None;
    }
    let info = line[len..].trim();
    if ch == '`' && info.contains('`') {
        return None;
    }
    let tag = info.split_whitespace().next().map(str::to_string);
    Some((Fence { ch, len }, tag))
}

fn closes(fence: &Fence, line: &str) -> bool {
    let t = line.trim();
    t.len() >= fence.len && t.chars().all(|c| c == fence.ch)
}

fn header_path(line: &str) -> Option<String> {
    let rest = line.strip_prefix(FILE_HEADER)?;
    let path = rest.trim();
    let path = path
        .strip_prefix('`')
        .and_then(|p| p.strip_suffix('`'))
        .unwrap_or(path);
    Some(path.trim().to_string())
}

/// Splits a model response into file blocks and narrative text.
pub fn parse_response(text: &str) -> ParsedResponse {
    let lines: Vec<&str> = text.split('\n').collect();
    let mut out = ParsedResponse::default();
    let mut narrative: Vec<&str> = Vec::new();
    let mut i = 0;

    while i < lines.len() {
        let line = lines[i];

        if let Some(path) = header_path(line) {
            let mut j = i + 1;
            while j < lines.len() && lines[j].trim().is_empty() {
                j += 1;
            }
            let Some((fence, tag)) = lines.get(j).and_then(|l| opening_fence(l)) else {
                out.warnings.push(ParseWarning {
                    line: i + 1,
                    path,
                    kind: WarningKind::MissingFence,
                });
                narrative.push(line);
                i += 1;
                continue;
            };
            let body_start = j + 1;
            match (body_start..lines.len()).find(|&k| closes(&fence, lines[k])) {
                Some(end) => {
                    out.blocks.push(FileBlock {
                        path,
                        content: lines[body_start..end].join("\n"),
                        fence_language_tag: tag,
                    });
                    i = end + 1;
                }
                None => {
                    out.warnings.push(ParseWarning {
                        line: i + 1,
                        path,
                        kind: WarningKind::UnterminatedFence,
                    });
                    narrative.extend_from_slice(&lines[i..]);
                    i = lines.len();
                }
            }
            continue;
        }

        // Fenced code in the narrative is carried through untouched, and any
        // header-looking lines inside it are ignored.
        if let Some((fence, _)) = opening_fence(line) {
            let end = (i + 1..lines.len())
                .find(|&k| closes(&fence, lines[k]))
                .unwrap_or(lines.len() - 1);
            narrative.extend_from_slice(&lines[i..=end]);
            i = end + 1;
            continue;
        }

        narrative.push(line);
        i += 1;
    }

    out.narrative = narrative.join("\n");
    out
}

fn fence_for(content: &str) -> String {
    let mut longest = 0;
    let mut run = 0;
    for c in content.chars() {
        if c == '`' {
            run += 1;
            longest = longest.max(run);
        } else {
            run = 0;
        }
    }
    "`".repeat((longest + 1).max(3))
}

/// Renders one block in protocol form, always ending with a newline.
pub fn render_block(block: &FileBlock) -> String {
    let fence = fence_for(&block.content);
    let tag = block.fence_language_tag.as_deref().unwrap_or("");
    if block.content.is_empty() {
        format!("{FILE_HEADER} {}\n{fence}{tag}\n{fence}\n", block.path)
    } else {
        format!("{FILE_HEADER} {}\n{fence}{tag}\n{}\n{fence}\n", block.path, block.content)
    }
}

pub fn render_blocks(blocks: &[FileBlock]) -> String {
    blocks.iter().map(render_block).collect::<Vec<_>>().join("\n")
}
