use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::gateway::{Completion, Failure, Provider, ProviderRequest, TokenUsage};

/// Answers from `<fixtures_dir>/<request-hash>.txt`, byte for byte.
#[derive(Debug, Clone)]
pub struct MockProvider {
    dir: PathBuf,
}

impl MockProvider {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        MockProvider { dir: dir.into() }
    }

    pub fn fixture_path(dir: &Path, hash: &Digest) -> PathBuf {
        dir.join(format!("{}.txt", hash.to_hex()))
    }

    /// Writes a fixture for `hash`.
    pub fn record(dir: &Path, hash: &Digest, text: &str) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = Self::fixture_path(dir, hash);
        fs::write(&path, text)?;
        Ok(path)
    }
}

impl Provider for MockProvider {
    fn complete(&self, request: &ProviderRequest<'_>) -> std::result::Result<Completion, Failure> {
        match fs::read_to_string(Self::fixture_path(&self.dir, request.hash)) {
            Ok(text) => Ok(Completion {
                text,
                usage: TokenUsage::default(),
                finish_reason: "stop".to_string(),
            }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(Failure::Fatal(Error::FixtureMissing {
                hash: request.hash.to_hex(),
            })),
            Err(e) => Err(Failure::Fatal(Error::Io(e))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{Message, Role};

    #[test]
    fn hit_is_byte_exact_and_miss_names_hash() {
        let dir = tempfile::tempdir().unwrap();
        let msgs = [Message {
            role: Role::User,
            text: "hi".into(),
        }];
        let hit = Digest::of(b"hit");
        let text = "### FILE: a.txt\n```\nx\n```\n\ttrailing  \n";
        MockProvider::record(dir.path(), &hit, text).unwrap();
        let m = MockProvider::new(dir.path());
        let req = |hash| ProviderRequest {
            model_id: "m",
            messages: &msgs,
            temperature: 0.0,
            max_tokens: None,
            hash,
        };
        assert_eq!(m.complete(&req(&hit)).unwrap().text, text);
        let miss = Digest::of(b"miss");
        match m.complete(&req(&miss)) {
            Err(Failure::Fatal(Error::FixtureMissing { hash })) => assert_eq!(hash, miss.to_hex()),
            other => panic!("unexpected {other:?}"),
        }
    }
}
