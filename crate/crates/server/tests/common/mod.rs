#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use nocode_core::gateway::{Completion, Failure, Provider, ProviderRequest, TokenUsage};
use nocode_core::projector::{render_blocks, FileBlock};
use nocode_core::Error;
use nocode_server::{ServerConfig, Service, ServiceOptions};

/// Answers every prompt by writing one file named after a counter, and
/// records how many calls overlap.
#[derive(Default)]
pub struct Scripted {
    pub delay_ms: u64,
    pub calls: AtomicUsize,
    pub in_flight: AtomicUsize,
    pub max_in_flight: AtomicUsize,
    /// Replies consumed before falling back to the counter file.
    pub queued: Mutex<Vec<Result<String, String>>>,
}

impl Scripted {
    pub fn with_delay(ms: u64) -> Arc<Self> {
        Arc::new(Scripted {
            delay_ms: ms,
            ..Default::default()
        })
    }

    pub fn push_reply(&self, text: &str) {
        self.queued.lock().unwrap().insert(0, Ok(text.to_string()));
    }

    pub fn push_failure(&self, msg: &str) {
        self.queued.lock().unwrap().insert(0, Err(msg.to_string()));
    }
}

pub struct Shared(pub Arc<Scripted>);

impl Provider for Shared {
    fn complete(&self, req: &ProviderRequest) -> Result<Completion, Failure> {
        let s = &self.0;
        let now = s.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        s.max_in_flight.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(Duration::from_millis(s.delay_ms));
        let n = s.calls.fetch_add(1, Ordering::SeqCst) + 1;
        let queued = s.queued.lock().unwrap().pop();
        s.in_flight.fetch_sub(1, Ordering::SeqCst);
        let text = match queued {
            Some(Ok(t)) => t,
            Some(Err(m)) => return Err(Failure::Fatal(Error::Provider(m))),
            None => {
                let user = &req.messages.last().unwrap().text;
                format!(
                    "Done.\n\n{}",
                    render_blocks(&[FileBlock::new(format!("client/gen/step{n:03}.txt"), format!("{user}\n"))])
                )
            }
        };
        Ok(Completion {
            text,
            usage: TokenUsage::default(),
            finish_reason: "stop".into(),
        })
    }
}

pub fn config(root: &std::path::Path) -> ServerConfig {
    let mut c = ServerConfig::local(root);
    c.runner.port_range = (24500, 24519);
    c
}

pub fn open(root: &std::path::Path, provider: &Arc<Scripted>) -> Service {
    open_with(config(root), provider)
}

pub fn open_with(config: ServerConfig, provider: &Arc<Scripted>) -> Service {
    Service::open(
        ServiceOptions::new(config)
            .provider(Box::new(Shared(provider.clone()))),
    )
    .unwrap()
}
